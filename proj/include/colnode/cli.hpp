#pragma once

// Experiment harness behind the colnode executable: configuration, data
// generation, training in every mode, evaluation and comparison tables.

#include "colnode/experiment.hpp"
#include "colnode/seqtrain.hpp"
#include "colnode/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace colnode::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  exit_ok             = 0,
  exit_internal       = 1,
  exit_usage          = 2,
  exit_solver_failure = 3,
  exit_io             = 4,
};

/// Bad command line or configuration value.
class UsageError : public Error
{
public:
  using Error::Error;
};

struct ConfigKey
{
  std::string key;
  std::string default_value;
  std::string help;
};

inline const std::vector<ConfigKey> & config_keys()
{
  static const std::vector<ConfigKey> keys{
      {"system.mu", "1", "Van der Pol damping"},
      {"system.amplitude", "1", "forcing amplitude"},
      {"system.omega", "1", "forcing frequency"},
      {"system.y0", "0,1", "initial state u0,v0"},
      {"system.t0", "0", "start of the training interval"},
      {"system.t_end", "10", "end T of the training interval; the test interval is [T, 2T - t0]"},
      {"data.dir", "data", "dataset directory"},
      {"data.n_train", "200", "training points"},
      {"data.n_test", "200", "test points"},
      {"data.sigma", "0.1", "measurement noise standard deviation"},
      {"data.fine_step", "0.001", "RK4 step bound of the reference solution"},
      {"seed", "0", "master seed"},
      {"runs", "1", "runs per experiment, one sub-seed each"},
      {"out.dir", "runs/colnode", "output directory of train"},
      {"net.hidden", "32", "hidden layer widths, comma separated"},
      {"net.time_input", "false", "append t to the network input"},
      {"train.mode", "collocation", "collocation | sequential | hybrid | admm"},
      {"colloc.grid_size", "0", "collocation nodes; 0 uses one per observation"},
      {"colloc.lambda", "1e-4", "L2 weight on the network parameters"},
      {"colloc.loess_span", "0.1", "LOESS window fraction for the state initialization"},
      {"colloc.inner", "gauss_newton", "inner minimizer: gauss_newton | lbfgs"},
      {"colloc.max_outer", "50", "augmented Lagrangian outer iterations"},
      {"colloc.max_inner", "200", "inner iterations per outer iteration"},
      {"colloc.constraint_tol", "1e-6", "tolerance on max |c|"},
      {"colloc.opt_tol", "1e-6", "tolerance on the projected gradient"},
      {"colloc.rho0", "10", "initial penalty"},
      {"colloc.time_limit", "", "solver wall-clock limit in seconds; empty for none"},
      {"colloc.checkpoint_seconds", "1", "cadence of parameter snapshots for the MSE-vs-time series"},
      {"seq.integrator", "rk4", "rk4 | euler"},
      {"seq.max_step", "0.01", "largest integrator step"},
      {"seq.substeps", "0", "steps per observation interval; 0 derives them from seq.max_step"},
      {"seq.epochs", "1000", "Adam epochs"},
      {"seq.step_size", "0.01", "Adam step size"},
      {"seq.time_limit", "", "wall-clock limit in seconds; empty for none"},
      {"admm.batches", "2", "contiguous batches of the training series"},
      {"admm.rho", "1", "ADMM penalty"},
      {"admm.max_iters", "20", "ADMM iterations"},
      {"admm.residual_tol", "", "primal residual tolerance; empty selects 1e-3 sqrt(|theta|)"},
  };
  return keys;
}

namespace detail {

inline std::string trim(const std::string & s)
{
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) { return {}; }
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string & s, char sep)
{
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) { out.push_back(trim(item)); }
  return out;
}

inline double parse_double(const std::string & key, const std::string & text)
{
  std::size_t used = 0;
  double v         = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used == 0 || used != text.size()) { throw UsageError(key + ": expected a number, got '" + text + "'"); }
  return v;
}

inline long long parse_integer(const std::string & key, const std::string & text)
{
  std::size_t used = 0;
  long long v      = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used == 0 || used != text.size()) { throw UsageError(key + ": expected an integer, got '" + text + "'"); }
  return v;
}

inline void write_text(const fs::path & path, const std::string & text)
{
  std::ofstream os(path);
  if (!os) { throw IoError("cannot open '" + path.string() + "' for writing"); }
  os << text;
  if (!os) { throw IoError("write failed for '" + path.string() + "'"); }
}

inline void make_dirs(const fs::path & dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) { throw IoError("cannot create directory '" + dir.string() + "': " + ec.message()); }
}

inline double median(std::vector<double> v)
{
  if (v.empty()) { return 0.0; }
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Flat key = value configuration with dotted section names.
class Config
{
public:
  Config()
  {
    for (const auto & k : config_keys()) { values_[k.key] = k.default_value; }
  }

  void set(const std::string & key, const std::string & value)
  {
    auto it = values_.find(key);
    if (it == values_.end()) { throw UsageError("unknown configuration key '" + key + "'"); }
    it->second = value;
  }

  /// Applies `key = value` lines; '#' starts a comment.
  void merge_text(const std::string & text, const std::string & origin = "config")
  {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) { line.erase(hash); }
      line = detail::trim(line);
      if (line.empty()) { continue; }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }

  void merge_file(const std::string & path)
  {
    std::ifstream is(path);
    if (!is) { throw IoError("cannot open config file '" + path + "'"); }
    std::stringstream ss;
    ss << is.rdbuf();
    merge_text(ss.str(), path);
  }

  const std::string & get(const std::string & key) const
  {
    auto it = values_.find(key);
    if (it == values_.end()) { throw UsageError("unknown configuration key '" + key + "'"); }
    return it->second;
  }

  double get_double(const std::string & key) const { return detail::parse_double(key, get(key)); }

  Index get_index(const std::string & key) const { return static_cast<Index>(detail::parse_integer(key, get(key))); }

  std::uint64_t get_seed(const std::string & key) const
  {
    const std::string & text = get(key);
    std::size_t used         = 0;
    std::uint64_t v          = 0;
    try {
      v = std::stoull(text, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    if (used == 0 || used != text.size() || text.front() == '-') {
      throw UsageError(key + ": expected a non-negative integer, got '" + text + "'");
    }
    return v;
  }

  bool get_bool(const std::string & key) const
  {
    const std::string & v = get(key);
    if (v == "true" || v == "1" || v == "yes") { return true; }
    if (v == "false" || v == "0" || v == "no") { return false; }
    throw UsageError(key + ": expected true or false, got '" + v + "'");
  }

  std::optional<double> get_optional(const std::string & key) const
  {
    if (get(key).empty()) { return std::nullopt; }
    return get_double(key);
  }

  std::vector<double> get_list(const std::string & key) const
  {
    std::vector<double> out;
    for (const auto & item : detail::split(get(key), ',')) { out.push_back(detail::parse_double(key, item)); }
    return out;
  }

  /// Every key in registry order, so the text diffs cleanly between runs.
  std::string to_text() const
  {
    std::string out;
    for (const auto & k : config_keys()) { out += k.key + " = " + values_.at(k.key) + "\n"; }
    return out;
  }

private:
  std::map<std::string, std::string> values_;
};

/// Ordered key-value record written as `key = value` lines.
struct Summary
{
  std::vector<std::pair<std::string, std::string>> entries;

  void set(const std::string & key, const std::string & value)
  {
    for (auto & kv : entries) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    entries.emplace_back(key, value);
  }

  void set(const std::string & key, double value) { set(key, format_double(value)); }

  const std::string * get(const std::string & key) const
  {
    for (const auto & kv : entries) {
      if (kv.first == key) { return &kv.second; }
    }
    return nullptr;
  }

  std::string to_text() const
  {
    std::string out;
    for (const auto & kv : entries) { out += kv.first + " = " + kv.second + "\n"; }
    return out;
  }
};

inline Summary read_summary(const fs::path & path)
{
  std::ifstream is(path);
  if (!is) { throw IoError("cannot open summary '" + path.string() + "'"); }
  Summary s;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) { continue; }
    s.set(line.substr(0, eq), line.substr(eq + 3));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration to library settings.

enum class Mode { collocation, sequential, hybrid, admm };

inline Mode mode_from_string(const std::string & s)
{
  if (s == "collocation") { return Mode::collocation; }
  if (s == "sequential") { return Mode::sequential; }
  if (s == "hybrid") { return Mode::hybrid; }
  if (s == "admm") { return Mode::admm; }
  throw UsageError("train.mode: unknown mode '" + s + "'");
}

inline VdpSetup vdp_setup(const Config & cfg)
{
  VdpSetup s;
  s.mu                        = cfg.get_double("system.mu");
  s.amplitude                 = cfg.get_double("system.amplitude");
  s.omega                     = cfg.get_double("system.omega");
  const std::vector<double> y = cfg.get_list("system.y0");
  if (y.size() != 2) { throw UsageError("system.y0: expected two values"); }
  s.y0        = Eigen::Map<const Vector>(y.data(), 2);
  s.t0        = cfg.get_double("system.t0");
  s.t_end     = cfg.get_double("system.t_end");
  s.n_train   = cfg.get_index("data.n_train");
  s.n_test    = cfg.get_index("data.n_test");
  s.fine_step = cfg.get_double("data.fine_step");
  try {
    s.validate();
  } catch (const InvalidArgument & e) {
    throw UsageError(e.what());
  }
  return s;
}

inline std::vector<Index> hidden_widths(const Config & cfg)
{
  std::vector<Index> out;
  for (const auto & item : detail::split(cfg.get("net.hidden"), ',')) {
    const long long w = detail::parse_integer("net.hidden", item);
    if (w < 1) { throw UsageError("net.hidden: widths must be positive"); }
    out.push_back(static_cast<Index>(w));
  }
  if (out.empty()) { throw UsageError("net.hidden: need at least one hidden layer"); }
  return out;
}

inline CollocationConfig collocation_config(const Config & cfg)
{
  CollocationConfig c;
  c.grid_size                = cfg.get_index("colloc.grid_size");
  c.lambda_reg               = cfg.get_double("colloc.lambda");
  c.loess_span               = cfg.get_double("colloc.loess_span");
  c.checkpoint_seconds       = cfg.get_double("colloc.checkpoint_seconds");
  c.solver.max_outer_iters   = cfg.get_index("colloc.max_outer");
  c.solver.max_inner_iters   = cfg.get_index("colloc.max_inner");
  c.solver.constraint_tol    = cfg.get_double("colloc.constraint_tol");
  c.solver.opt_tol           = cfg.get_double("colloc.opt_tol");
  c.solver.rho0              = cfg.get_double("colloc.rho0");
  c.solver.time_limit        = cfg.get_optional("colloc.time_limit");
  const std::string & inner  = cfg.get("colloc.inner");
  if (inner == "gauss_newton") {
    c.solver.inner = InnerMethod::gauss_newton;
  } else if (inner == "lbfgs") {
    c.solver.inner = InnerMethod::lbfgs;
  } else {
    throw UsageError("colloc.inner: unknown method '" + inner + "'");
  }
  try {
    c.solver.validate();
  } catch (const InvalidArgument & e) {
    throw UsageError(e.what());
  }
  return c;
}

inline SeqTrainConfig sequential_config(const Config & cfg, const std::vector<Index> & layer_sizes)
{
  SeqTrainConfig c;
  const std::string & integ = cfg.get("seq.integrator");
  if (integ == "rk4") {
    c.integrator = Integrator::rk4;
  } else if (integ == "euler") {
    c.integrator = Integrator::euler;
  } else {
    throw UsageError("seq.integrator: unknown integrator '" + integ + "'");
  }
  c.max_step       = cfg.get_double("seq.max_step");
  c.substeps       = cfg.get_index("seq.substeps");
  c.epochs         = cfg.get_index("seq.epochs");
  c.adam.step_size = cfg.get_double("seq.step_size");
  c.time_limit     = cfg.get_optional("seq.time_limit");
  c.layer_sizes    = layer_sizes;
  try {
    c.validate();
  } catch (const InvalidArgument & e) {
    throw UsageError(e.what());
  }
  return c;
}

inline AdmmConfig admm_config(const Config & cfg)
{
  AdmmConfig c;
  c.rho          = cfg.get_double("admm.rho");
  c.max_iters    = cfg.get_index("admm.max_iters");
  c.residual_tol = cfg.get_optional("admm.residual_tol");
  c.colloc       = collocation_config(cfg);
  if (!(c.rho > 0.0) || c.max_iters < 1) { throw UsageError("admm: rho must be positive and max_iters >= 1"); }
  return c;
}

/// Contiguous batches whose sizes differ by at most one.
inline std::vector<Dataset> split_contiguous(const Dataset & data, Index batches)
{
  if (batches < 2 || batches > data.size()) { throw UsageError("admm.batches: need 2 <= B <= number of points"); }
  std::vector<Dataset> out;
  Index first = 0;
  for (Index b = 0; b < batches; ++b) {
    const Index count = data.size() / batches + (b < data.size() % batches ? 1 : 0);
    out.push_back(data.slice(first, count));
    first += count;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands.

inline const char * train_file       = "train.csv";
inline const char * test_file        = "test.csv";
inline const char * train_clean_file = "train_clean.csv";
inline const char * test_clean_file  = "test_clean.csv";

/// Writes clean and noisy train/test CSVs with metadata sidecars to data.dir.
inline int cmd_generate(const Config & cfg, std::ostream & log)
{
  const VdpSetup setup = vdp_setup(cfg);
  const double sigma   = cfg.get_double("data.sigma");
  if (!(sigma >= 0.0)) { throw UsageError("data.sigma must be >= 0"); }
  const RunSeeds seeds = run_seeds(derive_seeds(cfg.get_seed("seed"), 1).front());

  const VdpData clean = generate_vdp(setup);
  const fs::path dir  = cfg.get("data.dir");
  detail::make_dirs(dir);
  save_dataset((dir / train_clean_file).string(), clean.train);
  save_dataset((dir / test_clean_file).string(), clean.test);
  save_dataset((dir / train_file).string(), add_noise(clean.train, sigma, seeds.train_noise));
  save_dataset((dir / test_file).string(), add_noise(clean.test, sigma, seeds.test_noise));
  detail::write_text(dir / "config.txt", cfg.to_text());
  log << "generate: " << setup.n_train << " train and " << setup.n_test << " test points in " << dir.string()
      << '\n';
  return exit_ok;
}

namespace detail {

struct RunData
{
  Dataset train;
  Dataset test;
};

/// Per-run data: clean series re-noised with the run's seeds when available,
/// otherwise the noisy files as they are.
class DataSource
{
public:
  explicit DataSource(const fs::path & dir)
  {
    noisy_.train = load_dataset((dir / train_file).string());
    noisy_.test  = load_dataset((dir / test_file).string());
    const std::string * sigma = noisy_.train.meta.get("noise.sigma");
    if (sigma && fs::exists(dir / train_clean_file) && fs::exists(dir / test_clean_file)) {
      clean_.train = load_dataset((dir / train_clean_file).string());
      clean_.test  = load_dataset((dir / test_clean_file).string());
      sigma_       = parse_double("noise.sigma", *sigma);
      renoise_     = true;
    }
    if (noisy_.train.dim() != noisy_.test.dim()) { throw IoError("train and test sets differ in state dimension"); }
  }

  RunData for_run(const RunSeeds & seeds) const
  {
    if (!renoise_) { return noisy_; }
    return {add_noise(clean_.train, sigma_, seeds.train_noise), add_noise(clean_.test, sigma_, seeds.test_noise)};
  }

  bool renoise() const { return renoise_; }

private:
  RunData noisy_;
  RunData clean_;
  double sigma_{0.0};
  bool renoise_{false};
};

using Series = std::vector<std::pair<double, double>>;

inline std::string series_csv(const Series & s)
{
  std::ostringstream os;
  os.precision(17);
  os << "elapsed_s,train_mse\n";
  for (const auto & [t, v] : s) { os << t << ',' << v << '\n'; }
  return os.str();
}

inline std::string join_widths(const std::vector<Index> & widths)
{
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) { out += (i ? "x" : "") + std::to_string(widths[i]); }
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point start)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct RunOutcome
{
  Summary summary;
  bool failed{false};
};

inline void add_collocation_fields(Summary & s, const SolveReport & rep)
{
  s.set("outer_iters", std::to_string(rep.outer_iters));
  s.set("inner_iters", std::to_string(rep.inner_iters_total));
  s.set("max_violation", rep.max_constraint_violation);
  s.set("projected_gradient_norm", rep.projected_gradient_norm);
  s.set("objective", rep.objective_final);
}

/// One training run; every artifact goes to `dir`. Wall time covers training only.
inline RunOutcome train_one(const Config & cfg, Mode mode, const RunData & data, std::uint64_t sub_seed,
                            const fs::path & dir)
{
  const std::vector<Index> hidden = hidden_widths(cfg);
  const bool time_input           = cfg.get_bool("net.time_input");
  const std::vector<Index> sizes  = architecture(data.train.dim(), hidden, time_input);
  const RunSeeds seeds            = run_seeds(sub_seed);
  Mlp net0                        = make_mlp(sizes, time_input);
  net0.theta                      = xavier_init(sizes, seeds.init);

  const Vector y0_train = data.train.y_obs.row(0).transpose();
  const Vector y0_test  = data.test.y_obs.row(0).transpose();
  auto train_mse        = [&](const Mlp & m) { return evaluate_mse(m, data.train, y0_train).mse; };

  RunOutcome out;
  Summary & s = out.summary;
  s.set("mode", cfg.get("train.mode"));
  s.set("sub_seed", std::to_string(sub_seed));
  s.set("hidden", join_widths(hidden));
  s.set("n_train", std::to_string(data.train.size()));
  s.set("n_test", std::to_string(data.test.size()));

  Mlp final_net = net0;
  Series series;
  std::string status;
  double wall = 0.0;

  auto snapshot_series = [&](const CollocationResult & res) {
    for (const auto & snap : res.snapshots) {
      Mlp m   = res.net;
      m.theta = snap.theta;
      series.emplace_back(snap.elapsed_s, train_mse(m));
    }
  };

  if (mode == Mode::collocation || mode == Mode::hybrid) {
    CollocationConfig cc = collocation_config(cfg);
    cc.solver.seed       = seeds.init;
    const auto start     = std::chrono::steady_clock::now();
    CollocationResult res = train_collocation(net0, data.train, cc);
    const double colloc_wall = seconds_since(start);
    status                   = to_string(res.report.status);
    out.failed               = res.report.status == SolveStatus::numerical_failure;
    final_net                = res.net;
    wall                     = colloc_wall;
    add_collocation_fields(s, res.report);
    snapshot_series(res);
    {
      std::ostringstream os;
      write_trace_csv(os, res.report.trace);
      detail::write_text(dir / (mode == Mode::hybrid ? "collocation_trace.csv" : "trace.csv"), os.str());
    }
    if (mode == Mode::hybrid) {
      save_checkpoint((dir / "collocation_checkpoint.txt").string(), res.net);
      s.set("collocation_status", status);
      if (!out.failed) {
        const SeqTrainConfig sc   = sequential_config(cfg, sizes);
        const auto seq_start      = std::chrono::steady_clock::now();
        const SeqTrainResult tune = hybrid_pretrain_handoff(res.net, data.train, sc);
        wall += seconds_since(seq_start);
        final_net = tune.net;
        for (std::size_t i = 1; i < tune.trace.size(); ++i) {
          series.emplace_back(colloc_wall + tune.trace[i].elapsed_s, tune.trace[i].value);
        }
        if (tune.status != SeqTrainStatus::completed) { status = to_string(tune.status); }
        out.failed = tune.status == SeqTrainStatus::diverged;
        s.set("epochs_run", std::to_string(tune.trace.size() - 1));
        std::ostringstream os;
        write_loss_csv(os, tune.trace);
        detail::write_text(dir / "trace.csv", os.str());
      }
    }
  } else if (mode == Mode::sequential) {
    const SeqTrainConfig sc  = sequential_config(cfg, sizes);
    const auto start         = std::chrono::steady_clock::now();
    const SeqTrainResult res = sequential_train(net0, data.train, sc);
    wall                     = seconds_since(start);
    status                   = to_string(res.status);
    out.failed               = res.status == SeqTrainStatus::diverged;
    final_net                = res.net;
    for (const auto & p : res.trace) { series.emplace_back(p.elapsed_s, p.value); }
    s.set("epochs_run", std::to_string(res.trace.size() - 1));
    std::ostringstream os;
    write_loss_csv(os, res.trace);
    detail::write_text(dir / "trace.csv", os.str());
  } else {
    AdmmConfig ac        = admm_config(cfg);
    ac.colloc.solver.seed = seeds.init;
    const std::vector<Dataset> batches = split_contiguous(data.train, cfg.get_index("admm.batches"));
    const auto start     = std::chrono::steady_clock::now();
    const AdmmResult res = admm_train(batches, net0, ac);
    wall                 = seconds_since(start);
    status               = res.aborted ? "aborted" : (res.converged ? "converged" : "iteration_limit");
    out.failed           = res.aborted;
    final_net            = res.consensus;
    std::vector<LossPoint> residuals;
    for (const auto & it : res.history) {
      Mlp m   = res.consensus;
      m.theta = it.consensus;
      series.emplace_back(it.elapsed_s, train_mse(m));
      residuals.push_back({it.iter, it.elapsed_s, it.primal_residual});
    }
    s.set("admm_iters", std::to_string(res.history.size()));
    if (!res.history.empty()) {
      s.set("first_residual", res.history.front().primal_residual);
      s.set("final_residual", res.history.back().primal_residual);
    }
    if (res.aborted) { s.set("diagnostic", res.diagnostic); }
    std::ostringstream os;
    write_loss_csv(os, residuals);
    detail::write_text(dir / "admm_residuals.csv", os.str());
  }

  s.set("status", status);
  s.set("train_mse", train_mse(final_net));
  s.set("test_mse", evaluate_mse(final_net, data.test, y0_test, EvalMode::test).mse);
  s.set("wall_time_s", wall);
  save_checkpoint((dir / "checkpoint.txt").string(), final_net);
  detail::write_text(dir / "series.csv", series_csv(series));
  detail::write_text(dir / "summary.txt", s.to_text());
  return out;
}

}  // namespace detail

/// Trains `runs` models in out.dir/run_XX; the top-level summary holds medians.
inline int cmd_train(const Config & cfg, std::ostream & log)
{
  const Mode mode = mode_from_string(cfg.get("train.mode"));
  const Index runs = cfg.get_index("runs");
  if (runs < 1) { throw UsageError("runs must be >= 1"); }
  hidden_widths(cfg);
  if (mode != Mode::sequential) { collocation_config(cfg); }
  if (mode == Mode::sequential || mode == Mode::hybrid) { sequential_config(cfg, {}); }
  if (mode == Mode::admm) { admm_config(cfg); }

  const detail::DataSource source(cfg.get("data.dir"));
  const std::vector<std::uint64_t> subs = derive_seeds(cfg.get_seed("seed"), static_cast<std::size_t>(runs));
  const fs::path out_dir                = cfg.get("out.dir");
  detail::make_dirs(out_dir);
  detail::write_text(out_dir / "config.txt", cfg.to_text());

  std::vector<double> train_mse, test_mse, wall;
  std::map<std::string, int> statuses;
  std::string sub_list;
  int failed = 0;
  for (Index r = 0; r < runs; ++r) {
    char name[16];
    std::snprintf(name, sizeof name, "run_%02d", static_cast<int>(r));
    const fs::path dir = out_dir / name;
    detail::make_dirs(dir);
    detail::write_text(dir / "config.txt", cfg.to_text());
    const auto data          = source.for_run(run_seeds(subs[r]));
    const auto outcome       = detail::train_one(cfg, mode, data, subs[r], dir);
    const Summary & s        = outcome.summary;
    train_mse.push_back(detail::parse_double("train_mse", *s.get("train_mse")));
    test_mse.push_back(detail::parse_double("test_mse", *s.get("test_mse")));
    wall.push_back(detail::parse_double("wall_time_s", *s.get("wall_time_s")));
    ++statuses[*s.get("status")];
    failed += outcome.failed ? 1 : 0;
    sub_list += (r ? "," : "") + std::to_string(subs[r]);
    log << "train " << name << ": " << *s.get("status") << ", train mse " << *s.get("train_mse") << ", test mse "
        << *s.get("test_mse") << ", " << *s.get("wall_time_s") << " s\n";
  }

  Summary top;
  top.set("mode", cfg.get("train.mode"));
  top.set("hidden", detail::join_widths(hidden_widths(cfg)));
  top.set("n_train", *read_summary(out_dir / "run_00" / "summary.txt").get("n_train"));
  top.set("runs", std::to_string(runs));
  top.set("seed", cfg.get("seed"));
  top.set("sub_seeds", sub_list);
  top.set("renoised_per_run", source.renoise() ? "true" : "false");
  std::string status_text;
  for (const auto & [k, n] : statuses) { status_text += (status_text.empty() ? "" : ";") + k + ":" + std::to_string(n); }
  top.set("status", status_text);
  top.set("failed_runs", std::to_string(failed));
  top.set("train_mse", detail::median(train_mse));
  top.set("test_mse", detail::median(test_mse));
  top.set("wall_time_s", detail::median(wall));
  detail::write_text(out_dir / "summary.txt", top.to_text());
  return failed > 0 ? exit_solver_failure : exit_ok;
}

/// Rolls the checkpoint out from the dataset's first row and reports the MSE.
inline int cmd_evaluate(const std::string & checkpoint, const std::string & dataset, const std::string & out_path,
                        EvalMode mode, std::ostream & out)
{
  const Mlp net      = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(dataset);
  if (net.state_dim() != data.dim()) {
    throw UsageError("checkpoint state dimension " + std::to_string(net.state_dim())
                     + " does not match dataset dimension " + std::to_string(data.dim()));
  }
  const EvalResult e = evaluate_mse(net, data, data.y_obs.row(0).transpose(), mode);
  Summary s;
  s.set("checkpoint", checkpoint);
  s.set("dataset", dataset);
  s.set("points", std::to_string(data.size()));
  s.set("mse", e.mse);
  s.set("diverged", e.diverged ? "true" : "false");
  if (e.diverged) { s.set("diagnostic", e.diagnostic); }
  out << s.to_text();
  if (!out_path.empty()) { detail::write_text(out_path, s.to_text()); }
  return exit_ok;
}

/// Merges run summaries into comparison.csv and copies per-run MSE-vs-time series.
inline int cmd_report(const std::vector<std::string> & run_dirs, const std::string & out_dir, std::ostream & log)
{
  const fs::path out = out_dir;
  detail::make_dirs(out / "series");
  std::ostringstream table;
  table << "run,mode,hidden,n_train,runs,train_mse,test_mse,time_s,status\n";
  int rows = 0;
  for (const auto & name : run_dirs) {
    fs::path dir = fs::path(name).lexically_normal();
    if (dir.filename().empty()) { dir = dir.parent_path(); }
    if (!fs::exists(dir / "summary.txt")) {
      log << "warning: skipping '" << name << "': no summary.txt\n";
      continue;
    }
    const Summary s  = read_summary(dir / "summary.txt");
    const std::string label = dir.filename().string();
    auto field = [&](const char * key, const char * fallback = "") {
      const std::string * v = s.get(key);
      return v ? *v : std::string(fallback);
    };
    table << label << ',' << field("mode") << ',' << field("hidden") << ',' << field("n_train") << ','
          << field("runs", "1") << ',' << field("train_mse") << ',' << field("test_mse") << ','
          << field("wall_time_s") << ',' << field("status") << '\n';
    ++rows;

    std::vector<std::pair<fs::path, std::string>> series;
    if (fs::exists(dir / "series.csv")) { series.emplace_back(dir / "series.csv", label); }
    std::vector<fs::path> subdirs;
    for (const auto & entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "series.csv")) { subdirs.push_back(entry.path()); }
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto & sub : subdirs) {
      series.emplace_back(sub / "series.csv", label + "_" + sub.filename().string());
    }
    for (const auto & [src, tag] : series) {
      fs::copy_file(src, out / "series" / (tag + ".csv"), fs::copy_options::overwrite_existing);
    }
  }
  detail::write_text(out / "comparison.csv", table.str());
  log << "report: " << rows << " row(s) in " << (out / "comparison.csv").string() << '\n';
  return exit_ok;
}

// ---------------------------------------------------------------------------
// Command line.

/// Parses and dispatches; returns the process exit code.
inline int run(int argc, const char * const * argv, std::ostream & out = std::cout, std::ostream & err = std::cerr)
{
  CLI::App app{"Neural ODE training by spectral collocation and nonlinear programming", "colnode"};
  app.require_subcommand(1);

  struct ConfigOptions
  {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option *>> options;
  };
  auto add_config_options = [](CLI::App * sub, ConfigOptions & co) {
    sub->add_option("--config", co.config_path, "flat 'key = value' configuration file");
    for (const auto & k : config_keys()) {
      CLI::Option * opt = sub->add_option("--" + k.key, co.values[k.key], k.help);
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      if (!k.default_value.empty()) { opt->description(k.help + " (default " + k.default_value + ")"); }
      co.options.emplace_back(k.key, opt);
    }
  };
  auto resolve = [](const ConfigOptions & co) {
    Config cfg;
    if (!co.config_path.empty()) { cfg.merge_file(co.config_path); }
    for (const auto & [key, opt] : co.options) {
      if (opt->count() > 0) { cfg.set(key, co.values.at(key)); }
    }
    return cfg;
  };

  ConfigOptions gen_opts, train_opts;
  CLI::App * gen = app.add_subcommand("generate", "simulate the forced Van der Pol system and write datasets");
  add_config_options(gen, gen_opts);
  CLI::App * train = app.add_subcommand("train", "train models on a generated dataset");
  add_config_options(train, train_opts);

  std::string checkpoint, dataset, eval_out, eval_mode = "test";
  CLI::App * evaluate = app.add_subcommand("evaluate", "roll a checkpoint out over a dataset and report the MSE");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--data", dataset, "dataset CSV")->required();
  evaluate->add_option("--out", eval_out, "also write the summary to this file");
  evaluate->add_option("--mode", eval_mode, "train | test")->check(CLI::IsMember({"train", "test"}));

  std::vector<std::string> report_dirs;
  std::string report_out = "report";
  CLI::App * report = app.add_subcommand("report", "merge run summaries into a comparison table");
  report->add_option("runs", report_dirs, "run directories written by train")->required();
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    return app.exit(e, out, err) == 0 ? exit_ok : exit_usage;
  }

  try {
    if (gen->parsed()) { return cmd_generate(resolve(gen_opts), err); }
    if (train->parsed()) { return cmd_train(resolve(train_opts), err); }
    if (evaluate->parsed()) {
      return cmd_evaluate(checkpoint, dataset, eval_out, eval_mode == "train" ? EvalMode::train : EvalMode::test,
                          out);
    }
    return cmd_report(report_dirs, report_out, err);
  } catch (const UsageError & e) {
    err << "usage error: " << e.what() << '\n';
    return exit_usage;
  } catch (const InvalidArgument & e) {
    err << "usage error: " << e.what() << '\n';
    return exit_usage;
  } catch (const IoError & e) {
    err << "I/O error: " << e.what() << '\n';
    return exit_io;
  } catch (const fs::filesystem_error & e) {
    err << "I/O error: " << e.what() << '\n';
    return exit_io;
  } catch (const std::exception & e) {
    err << "error: " << e.what() << '\n';
    return exit_internal;
  }
}

inline int run(const std::vector<std::string> & args, std::ostream & out = std::cout, std::ostream & err = std::cerr)
{
  std::vector<const char *> argv;
  argv.reserve(args.size());
  for (const auto & a : args) { argv.push_back(a.c_str()); }
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace colnode::cli
