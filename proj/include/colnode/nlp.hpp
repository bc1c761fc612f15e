#pragma once

// Box-bounded, equality-constrained NLP solver.
//
//   min f(z)  s.t.  c(z) = 0,  lower <= z <= upper
//
// Augmented Lagrangian outer loop
//   L_A(z; mu, rho) = f(z) + mu^T c(z) + (rho / 2) ||c(z)||^2,   mu <- mu + rho c(z)
// around a bound-projected inner minimizer: limited-memory BFGS, or
// Levenberg-Marquardt on a Gauss-Newton model when the problem exposes its
// objective curvature.

#include "colnode/core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace colnode {

template <class P>
concept NlpModel = requires(const P & p, const Vector & z) {
  { p.dimension() } -> std::convertible_to<Index>;
  { p.num_constraints() } -> std::convertible_to<Index>;
  { p.lower() } -> std::convertible_to<const Vector &>;
  { p.upper() } -> std::convertible_to<const Vector &>;
  { p.objective(z) } -> std::convertible_to<double>;
  { p.objective_gradient(z) } -> std::convertible_to<Vector>;
  { p.constraints(z) } -> std::convertible_to<Vector>;
  { p.constraint_jacobian(z) } -> std::convertible_to<Matrix>;
};

/// Models that expose the diagonal of a constant or slowly varying objective Hessian.
template <class P>
concept HasObjectiveCurvature = requires(const P & p, const Vector & z) {
  { p.objective_hessian_diagonal(z) } -> std::convertible_to<Vector>;
};

enum class InnerMethod {
  lbfgs,         ///< projected L-BFGS on L_A
  gauss_newton,  ///< projected Levenberg-Marquardt on a Gauss-Newton model of L_A (needs HasObjectiveCurvature)
};

enum class SolveStatus { converged, feasible_suboptimal, iteration_limit, time_limit, numerical_failure };

inline std::string to_string(SolveStatus s)
{
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::feasible_suboptimal: return "feasible-but-suboptimal";
    case SolveStatus::iteration_limit: return "iteration-limit";
    case SolveStatus::time_limit: return "time-limit";
    case SolveStatus::numerical_failure: return "numerical-failure";
  }
  return "unknown";
}

struct SolverConfig
{
  Index max_outer_iters{50};
  Index max_inner_iters{200};
  double constraint_tol{1e-6};  ///< on max |c(z)|
  double opt_tol{1e-6};         ///< on the infinity norm of the projected Lagrangian gradient
  double rho0{10.0};
  double rho_growth{10.0};      ///< applied when max |c| fails to drop 4x over an outer iteration
  double rho_max{1e8};
  std::optional<double> time_limit;  ///< wall-clock seconds

  InnerMethod inner{InnerMethod::gauss_newton};
  Index lbfgs_memory{10};
  double armijo_c1{1e-4};
  Index max_backtracks{40};

  bool check_jacobian{true};  ///< finite-difference spot check of the constraint Jacobian at z0
  std::uint64_t seed{0};      ///< directions of the Jacobian spot check

  void validate() const
  {
    detail::require(constraint_tol > 0.0 && opt_tol > 0.0, "SolverConfig: tolerances must be positive");
    detail::require(rho0 > 0.0, "SolverConfig: rho0 must be positive");
    detail::require(rho_growth > 1.0, "SolverConfig: rho_growth must exceed 1");
    detail::require(max_outer_iters >= 1 && max_inner_iters >= 1, "SolverConfig: iteration limits must be >= 1");
    detail::require(lbfgs_memory >= 1, "SolverConfig: lbfgs_memory must be >= 1");
  }
};

struct TraceRow
{
  Index outer_iter{0};
  double elapsed_s{0.0};
  double objective{0.0};
  double max_violation{0.0};
  double penalty{0.0};
};

struct SolveReport
{
  Vector z_final;
  Vector multipliers;
  double objective_final{0.0};
  double max_constraint_violation{0.0};
  double projected_gradient_norm{0.0};
  Index outer_iters{0};
  Index inner_iters_total{0};
  double elapsed_s{0.0};
  SolveStatus status{SolveStatus::iteration_limit};
  std::string message;
  std::vector<TraceRow> trace;
};

struct Snapshot
{
  double elapsed_s{0.0};
  Vector z;
};

/// Fixed-capacity snapshot store; the oldest entries are dropped on overflow.
class SnapshotBuffer
{
public:
  explicit SnapshotBuffer(std::size_t capacity = 4096) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  void push(Snapshot s)
  {
    if (items_.size() == capacity_) {
      items_.pop_front();
      ++dropped_;
    }
    items_.push_back(std::move(s));
  }

  std::size_t size() const { return items_.size(); }
  std::size_t dropped() const { return dropped_; }
  std::vector<Snapshot> take()
  {
    std::vector<Snapshot> out(std::make_move_iterator(items_.begin()), std::make_move_iterator(items_.end()));
    items_.clear();
    return out;
  }

private:
  std::size_t capacity_;
  std::size_t dropped_{0};
  std::deque<Snapshot> items_;
};

class JacobianMismatch : public Error
{
public:
  using Error::Error;
};

inline void write_trace_csv(std::ostream & os, const std::vector<TraceRow> & trace)
{
  const auto old = os.precision(17);
  os << "outer_iter,elapsed_s,objective,max_violation,penalty\n";
  for (const auto & r : trace) {
    os << r.outer_iter << ',' << r.elapsed_s << ',' << r.objective << ',' << r.max_violation << ',' << r.penalty
       << '\n';
  }
  os.precision(old);
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start)
{
  return std::chrono::duration<double>(Clock::now() - start).count();
}

inline Vector project(const Vector & z, const Vector & lo, const Vector & hi) { return z.cwiseMax(lo).cwiseMin(hi); }

inline double projected_gradient_norm(const Vector & z, const Vector & g, const Vector & lo, const Vector & hi)
{
  if (z.size() == 0) { return 0.0; }
  return (project(z - g, lo, hi) - z).lpNorm<Eigen::Infinity>();
}

inline double max_abs(const Vector & v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

// Variables held at a bound by a gradient pushing outward.
inline std::vector<char> active_set(const Vector & z, const Vector & g, const Vector & lo, const Vector & hi)
{
  std::vector<char> active(static_cast<std::size_t>(z.size()), 0);
  for (Index i = 0; i < z.size(); ++i) {
    active[static_cast<std::size_t>(i)] = (z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0);
  }
  return active;
}

/// Augmented Lagrangian evaluated on one problem with fixed (mu, rho).
template <NlpModel P>
struct AugmentedLagrangian
{
  const P & problem;
  const Vector & mu;
  double rho;

  // returns +inf when any callback is non-finite
  double value(const Vector & z, Vector * c_out = nullptr) const
  {
    const double f = problem.objective(z);
    Vector c       = problem.constraints(z);
    if (!std::isfinite(f) || !c.allFinite()) { return std::numeric_limits<double>::infinity(); }
    const double v = f + mu.dot(c) + 0.5 * rho * c.squaredNorm();
    if (c_out) { *c_out = std::move(c); }
    return v;
  }

  Vector gradient(const Vector & z, const Vector & c, const Matrix & J) const
  {
    return problem.objective_gradient(z) + J.transpose() * (mu + rho * c);
  }
};

struct InnerResult
{
  Index iterations{0};
  double pg_norm{0.0};
  bool numerical_failure{false};
  bool timed_out{false};
};

struct InnerContext
{
  Clock::time_point start;
  std::optional<double> time_limit;
  double checkpoint_seconds{0.0};
  double next_checkpoint{std::numeric_limits<double>::infinity()};
  SnapshotBuffer * snapshots{nullptr};

  bool out_of_time() const { return time_limit && seconds_since(start) >= *time_limit; }

  void maybe_snapshot(const Vector & z)
  {
    if (!snapshots) { return; }
    const double t = seconds_since(start);
    if (t >= next_checkpoint) {
      snapshots->push({t, z});
      while (next_checkpoint <= t) { next_checkpoint += checkpoint_seconds; }
    }
  }
};

// Projected backtracking along z + alpha * dir. Returns the accepted step
// length or 0 when no trial gives sufficient decrease.
template <NlpModel P>
double projected_line_search(const AugmentedLagrangian<P> & al, const Vector & z, double phi, const Vector & g,
                             const Vector & dir, double alpha0, const SolverConfig & cfg, Vector & z_new,
                             double & phi_new, Vector & c_new)
{
  const Vector & lo = al.problem.lower();
  const Vector & hi = al.problem.upper();
  double alpha      = alpha0;
  for (Index k = 0; k < cfg.max_backtracks; ++k, alpha *= 0.5) {
    z_new             = project(z + alpha * dir, lo, hi);
    const Vector step = z_new - z;
    const double gs   = g.dot(step);
    if (step.lpNorm<Eigen::Infinity>() == 0.0) { return 0.0; }
    phi_new = al.value(z_new, &c_new);
    if (std::isfinite(phi_new) && phi_new <= phi + cfg.armijo_c1 * std::min(gs, 0.0) && gs < 0.0) { return alpha; }
  }
  return 0.0;
}

template <NlpModel P>
InnerResult minimize_lbfgs(const AugmentedLagrangian<P> & al, Vector & z, double tol, const SolverConfig & cfg,
                           InnerContext & ctx)
{
  const Vector & lo = al.problem.lower();
  const Vector & hi = al.problem.upper();
  InnerResult res;

  Vector c;
  double phi = al.value(z, &c);
  if (!std::isfinite(phi)) {
    res.numerical_failure = true;
    return res;
  }
  Vector g = al.gradient(z, c, al.problem.constraint_jacobian(z));

  std::deque<Vector> S, Y;
  std::deque<double> RHO;
  Vector z_new, c_new;
  double phi_new = 0.0;

  for (;;) {
    res.pg_norm = projected_gradient_norm(z, g, lo, hi);
    if (res.pg_norm <= tol || res.iterations >= cfg.max_inner_iters) { break; }
    if (ctx.out_of_time()) {
      res.timed_out = true;
      break;
    }

    const auto active = active_set(z, g, lo, hi);
    auto mask         = [&](Vector & v) {
      for (Index i = 0; i < v.size(); ++i) {
        if (active[static_cast<std::size_t>(i)]) { v[i] = 0.0; }
      }
    };

    // two-loop recursion on the free variables
    Vector q = g;
    mask(q);
    std::vector<double> a(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      a[k] = RHO[k] * S[k].dot(q);
      q -= a[k] * Y[k];
    }
    if (!S.empty()) { q *= S.back().dot(Y.back()) / Y.back().squaredNorm(); }
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double b = RHO[k] * Y[k].dot(q);
      q += (a[k] - b) * S[k];
    }
    Vector dir = -q;
    mask(dir);

    double alpha0 = 1.0;
    if (S.empty() || g.dot(dir) >= 0.0) {
      dir = -g;
      mask(dir);
      S.clear();
      Y.clear();
      RHO.clear();
      alpha0 = 1.0 / std::max(1.0, dir.lpNorm<Eigen::Infinity>());
    }

    double alpha = projected_line_search(al, z, phi, g, dir, alpha0, cfg, z_new, phi_new, c_new);
    if (alpha == 0.0 && !S.empty()) {
      S.clear();
      Y.clear();
      RHO.clear();
      dir = -g;
      mask(dir);
      alpha = projected_line_search(al, z, phi, g, dir, 1.0 / std::max(1.0, dir.lpNorm<Eigen::Infinity>()), cfg,
                                    z_new, phi_new, c_new);
    }
    ++res.iterations;
    if (alpha == 0.0) { break; }

    const Vector g_new = al.gradient(z_new, c_new, al.problem.constraint_jacobian(z_new));
    Vector s           = z_new - z;
    Vector y           = g_new - g;
    const double sy    = s.dot(y);
    if (sy > 1e-12 * s.squaredNorm()) {
      if (static_cast<Index>(S.size()) == cfg.lbfgs_memory) {
        S.pop_front();
        Y.pop_front();
        RHO.pop_front();
      }
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      RHO.push_back(1.0 / sy);
    }
    z   = z_new;
    c   = c_new;
    phi = phi_new;
    g   = g_new;
    ctx.maybe_snapshot(z);
  }
  return res;
}

template <NlpModel P>
  requires HasObjectiveCurvature<P>
InnerResult minimize_gauss_newton(const AugmentedLagrangian<P> & al, Vector & z, double tol, const SolverConfig & cfg,
                            InnerContext & ctx)
{
  const Vector & lo = al.problem.lower();
  const Vector & hi = al.problem.upper();
  const Index n     = z.size();
  InnerResult res;

  Vector c;
  double phi = al.value(z, &c);
  if (!std::isfinite(phi)) {
    res.numerical_failure = true;
    return res;
  }
  Matrix J = al.problem.constraint_jacobian(z);
  Vector g = al.gradient(z, c, J);

  double damping   = 1e-6;  // relative to the model diagonal
  double lm_growth = 2.0;
  Vector z_new, c_new;
  double phi_new = 0.0;
  Eigen::MatrixXd H(n, n);
  Eigen::MatrixXd M;
  Eigen::LLT<Eigen::MatrixXd> llt;

  for (;;) {
    res.pg_norm = projected_gradient_norm(z, g, lo, hi);
    if (res.pg_norm <= tol || res.iterations >= cfg.max_inner_iters) { break; }
    if (ctx.out_of_time()) {
      res.timed_out = true;
      break;
    }

    // Gauss-Newton model of L_A: diag(f'') + rho J^T J
    H.setZero();
    H.selfadjointView<Eigen::Lower>().rankUpdate(J.transpose(), al.rho);
    H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
    H.diagonal() += al.problem.objective_hessian_diagonal(z);
    const double hmax = std::max(H.diagonal().maxCoeff(), 1e-300);
    const auto active = active_set(z, g, lo, hi);
    std::vector<Index> free;
    free.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      if (!active[static_cast<std::size_t>(i)]) { free.push_back(i); }
    }
    const Index nf = static_cast<Index>(free.size());
    if (nf == 0) { break; }
    Eigen::MatrixXd Hf;
    Eigen::VectorXd gf(nf);
    if (nf == n) {
      Hf = H;
      gf = g;
    } else {
      Hf.resize(nf, nf);
      for (Index a = 0; a < nf; ++a) {
        gf[a] = g[free[a]];
        for (Index b = 0; b < nf; ++b) { Hf(a, b) = H(free[a], free[b]); }
      }
    }

    // Marquardt damping scaled by the model diagonal; acceptance on the ratio
    // of actual to predicted decrease
    const Eigen::VectorXd scale = Hf.diagonal().cwiseMax(1e-12 * hmax);
    bool accepted = false;
    for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
      M = Hf;
      M.diagonal() += damping * scale;
      llt.compute(M);
      Eigen::VectorXd step;
      if (llt.info() == Eigen::Success) { step = llt.solve(-gf); }
      if (llt.info() != Eigen::Success || !step.allFinite()) {
        damping = std::max(damping * 4.0, 1e-12);
        continue;
      }
      Vector dir = Vector::Zero(n);
      for (Index a = 0; a < nf; ++a) { dir[free[a]] = step[a]; }
      z_new           = project(z + dir, lo, hi);
      const Vector sv = z_new - z;
      if (sv.lpNorm<Eigen::Infinity>() == 0.0) { break; }
      const double pred  = -(g.dot(sv) + 0.5 * sv.dot(H * sv));
      phi_new            = al.value(z_new, &c_new);
      const double ratio = pred > 0.0 ? (phi - phi_new) / pred : -1.0;
      if (std::isfinite(phi_new) && ratio > 1e-4) {
        accepted  = true;
        damping   = std::max(damping * std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * ratio - 1.0, 3)), 1e-15);
        lm_growth = 2.0;
      } else {
        damping = std::max(damping * lm_growth, 1e-12);
        lm_growth *= 2.0;
      }
    }
    ++res.iterations;
    if (!accepted) { break; }

    Matrix J_new = al.problem.constraint_jacobian(z_new);
    Vector g_new = al.gradient(z_new, c_new, J_new);
    if (!g_new.allFinite()) {
      res.numerical_failure = true;
      break;
    }
    z   = z_new;
    c   = c_new;
    phi = phi_new;
    J   = std::move(J_new);
    g   = std::move(g_new);
    ctx.maybe_snapshot(z);
  }
  return res;
}

template <NlpModel P>
void check_constraint_jacobian(const P & problem, const Vector & z, std::uint64_t seed)
{
  if (problem.num_constraints() == 0) { return; }
  const Matrix J = problem.constraint_jacobian(z);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 3; ++trial) {
    Vector v(z.size());
    for (Index i = 0; i < v.size(); ++i) { v[i] = normal(rng); }
    v.normalize();
    const double h    = 1e-6 * std::max(1.0, z.lpNorm<Eigen::Infinity>());
    const Vector fd   = (problem.constraints(z + h * v) - problem.constraints(z - h * v)) / (2.0 * h);
    const Vector an   = J * v;
    const double err  = (fd - an).lpNorm<Eigen::Infinity>();
    const double size = std::max(1.0, an.lpNorm<Eigen::Infinity>());
    if (!(err <= 1e-3 * size)) {
      throw JacobianMismatch("constraint Jacobian disagrees with finite differences (error " + std::to_string(err)
                             + ", scale " + std::to_string(size) + ")");
    }
  }
}

template <NlpModel P>
SolveReport solve_impl(const P & problem, const Vector & z0, const SolverConfig & cfg, InnerContext & ctx)
{
  cfg.validate();
  const Index n = problem.dimension();
  detail::require(z0.size() == n, "solve: z0 has wrong length");
  const Vector & lo = problem.lower();
  const Vector & hi = problem.upper();

  SolveReport rep;
  Vector z = project(z0, lo, hi);
  Vector mu = Vector::Zero(problem.num_constraints());
  double rho = cfg.rho0;

  auto finish = [&](SolveStatus status, std::string msg) {
    rep.status    = status;
    rep.message   = std::move(msg);
    rep.z_final   = z;
    rep.multipliers = mu;
    const double f  = problem.objective(z);
    const Vector c  = problem.constraints(z);
    rep.objective_final          = f;
    rep.max_constraint_violation = c.allFinite() ? max_abs(c) : std::numeric_limits<double>::infinity();
    rep.elapsed_s                = seconds_since(ctx.start);
    if (rep.trace.empty()) {
      rep.trace.push_back({0, rep.elapsed_s, f, rep.max_constraint_violation, rho});
    }
    if (ctx.snapshots) { ctx.snapshots->push({rep.elapsed_s, z}); }
    return rep;
  };

  {
    const double f = problem.objective(z);
    const Vector c = problem.constraints(z);
    if (!std::isfinite(f) || !c.allFinite()) {
      return finish(SolveStatus::numerical_failure, "non-finite objective or constraints at the initial point");
    }
  }
  if (cfg.check_jacobian) { check_constraint_jacobian(problem, z, cfg.seed); }

  double prev_violation = std::numeric_limits<double>::infinity();
  for (Index outer = 1; outer <= cfg.max_outer_iters; ++outer) {
    const double inner_tol = std::max(cfg.opt_tol, 1e-2 * std::pow(0.1, static_cast<double>(outer - 1)));
    AugmentedLagrangian<P> al{problem, mu, rho};

    InnerResult inner;
    if constexpr (HasObjectiveCurvature<P>) {
      if (cfg.inner == InnerMethod::gauss_newton) {
        inner = minimize_gauss_newton(al, z, inner_tol, cfg, ctx);
      } else {
        inner = minimize_lbfgs(al, z, inner_tol, cfg, ctx);
      }
    } else {
      inner = minimize_lbfgs(al, z, inner_tol, cfg, ctx);
    }
    rep.inner_iters_total += inner.iterations;
    rep.outer_iters = outer;

    if (inner.numerical_failure) { return finish(SolveStatus::numerical_failure, "non-finite callback value"); }

    Vector c         = problem.constraints(z);
    double violation = max_abs(c);
    mu += rho * c;
    rep.projected_gradient_norm = inner.pg_norm;
    rep.trace.push_back({outer, seconds_since(ctx.start), problem.objective(z), violation, rho});

    if (inner.timed_out) { return finish(SolveStatus::time_limit, "time limit reached"); }
    if (violation <= cfg.constraint_tol && rep.projected_gradient_norm <= cfg.opt_tol) {
      return finish(SolveStatus::converged, "feasibility and optimality tolerances met");
    }
    if (violation > cfg.constraint_tol && violation > 0.25 * prev_violation) {
      rho *= cfg.rho_growth;
      if (rho > cfg.rho_max) { return finish(SolveStatus::numerical_failure, "penalty parameter exceeded its cap"); }
    }
    prev_violation = violation;
    if (ctx.out_of_time()) { return finish(SolveStatus::time_limit, "time limit reached"); }
  }

  const Vector c = problem.constraints(z);
  if (max_abs(c) <= cfg.constraint_tol) {
    return finish(SolveStatus::feasible_suboptimal, "outer iteration limit reached at a feasible point");
  }
  return finish(SolveStatus::iteration_limit, "outer iteration limit reached");
}

}  // namespace detail

/// Solves the NLP from z0 (projected onto the box first).
template <NlpModel P>
SolveReport solve(const P & problem, const Vector & z0, const SolverConfig & cfg = {})
{
  detail::InnerContext ctx;
  ctx.start      = detail::Clock::now();
  ctx.time_limit = cfg.time_limit;
  return detail::solve_impl(problem, z0, cfg, ctx);
}

struct CheckpointedSolve
{
  SolveReport report;
  std::vector<Snapshot> snapshots;  ///< elapsed-ordered; the last one is the final iterate
  std::size_t dropped{0};
};

/**
 * @brief solve() that also records (elapsed, z) every checkpoint_seconds.
 *
 * Snapshots are taken between inner iterations, so their spacing is at least
 * the cadence. A terminal snapshot is always appended.
 */
template <NlpModel P>
CheckpointedSolve solve_with_checkpoints(const P & problem, const Vector & z0, const SolverConfig & cfg,
                                         double checkpoint_seconds, std::size_t capacity = 4096)
{
  detail::require(checkpoint_seconds > 0.0, "solve_with_checkpoints: cadence must be positive");
  SnapshotBuffer buffer(capacity);
  detail::InnerContext ctx;
  ctx.start              = detail::Clock::now();
  ctx.time_limit         = cfg.time_limit;
  ctx.checkpoint_seconds = checkpoint_seconds;
  ctx.next_checkpoint    = checkpoint_seconds;
  ctx.snapshots          = &buffer;
  CheckpointedSolve out;
  out.report    = detail::solve_impl(problem, z0, cfg, ctx);
  out.dropped   = buffer.dropped();
  out.snapshots = buffer.take();
  return out;
}

}  // namespace colnode
