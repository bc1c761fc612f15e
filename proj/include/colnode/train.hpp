#pragma once

// Collocation training (preprocess, assemble the NLP, solve) and consensus
// ADMM over data batches.

#include "colnode/nlp.hpp"
#include "colnode/prep.hpp"
#include "colnode/problem.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace colnode {

struct CollocationConfig
{
  Index grid_size{0};         ///< 0 uses one node per observation
  double lambda_reg{1e-4};
  double loess_span{0.1};
  SolverConfig solver;
  double checkpoint_seconds{0.0};  ///< > 0 records parameter snapshots at this cadence
};

struct ThetaSnapshot
{
  double elapsed_s{0.0};
  Vector theta;
};

struct CollocationResult
{
  Mlp net;
  Matrix states;  ///< optimized Y* at the grid nodes
  CollocationGrid grid;
  SolveReport report;
  std::vector<ThetaSnapshot> snapshots;
};

/// Grid over the data's time range, resampled observations and the initial decision vector.
struct CollocationSetup
{
  NlpProblem problem;
  Vector z0;
};

inline CollocationSetup make_collocation_problem(const Mlp & net0, const Dataset & data, const CollocationConfig & cfg,
                                                 const Matrix * warm_states = nullptr)
{
  data.validate();
  net0.validate();
  detail::require(data.dim() == net0.state_dim(), "collocation: dataset and network state widths differ");
  detail::require(data.size() >= 2, "collocation: need at least two observations");
  const Index n = cfg.grid_size > 0 ? cfg.grid_size : data.size();
  CollocationGrid grid = build_grid(n, data.times[0], data.times[data.size() - 1]);
  Matrix y_obs         = resample_to_grid(data, grid).y_obs;
  Matrix states        = warm_states ? *warm_states : init_states(data, grid, cfg.loess_span);
  NlpProblem problem(std::move(grid), net0, std::move(y_obs), cfg.lambda_reg);
  Vector z0 = problem.pack(states, net0.theta);
  return {std::move(problem), std::move(z0)};
}

inline CollocationResult finish_collocation(const NlpProblem & problem, SolveReport report,
                                            const std::vector<Snapshot> & snaps)
{
  CollocationResult out;
  out.net    = problem.net_at(report.z_final);
  out.states = problem.states(report.z_final);
  out.grid   = problem.grid();
  for (const auto & s : snaps) { out.snapshots.push_back({s.elapsed_s, problem.theta(s.z)}); }
  out.report = std::move(report);
  return out;
}

/**
 * @brief Trains net0 (architecture and initial theta) by simultaneous collocation.
 *
 * States start from the LOESS-smoothed observations on the grid; the
 * objective compares them with linearly resampled observations.
 */
inline CollocationResult train_collocation(const Mlp & net0, const Dataset & data, const CollocationConfig & cfg)
{
  CollocationSetup setup = make_collocation_problem(net0, data, cfg);
  if (cfg.checkpoint_seconds > 0.0) {
    CheckpointedSolve cs = solve_with_checkpoints(setup.problem, setup.z0, cfg.solver, cfg.checkpoint_seconds);
    return finish_collocation(setup.problem, std::move(cs.report), cs.snapshots);
  }
  return finish_collocation(setup.problem, solve(setup.problem, setup.z0, cfg.solver), {});
}

// ---------------------------------------------------------------------------
// Consensus ADMM: every batch owns its states Y*_i and parameters theta_i;
// only theta is shared.

struct AdmmConfig
{
  double rho{1.0};
  Index max_iters{20};
  std::optional<double> residual_tol;  ///< unset selects 1e-3 * sqrt(|theta|); negative never stops early
  CollocationConfig colloc;
};

struct AdmmState
{
  std::vector<Vector> thetas;
  Vector consensus;
  std::vector<Vector> duals;
  double rho{1.0};
  std::vector<double> primal_residuals;
};

/// Everything produced by one ADMM iteration.
struct AdmmIterate
{
  Index iter{0};
  std::vector<Vector> thetas;
  Vector consensus;
  std::vector<Vector> duals_before;
  std::vector<Vector> duals_after;
  double primal_residual{0.0};
  double elapsed_s{0.0};
  std::vector<SolveStatus> statuses;
};

struct AdmmResult
{
  Mlp consensus;
  AdmmState state;
  std::vector<AdmmIterate> history;
  bool converged{false};
  bool aborted{false};
  std::string diagnostic;
  double elapsed_s{0.0};
};

/// Arithmetic mean of the batch parameter vectors.
inline Vector consensus_mean(const std::vector<Vector> & thetas)
{
  detail::require(!thetas.empty(), "consensus_mean: no parameter vectors");
  Vector sum = Vector::Zero(thetas.front().size());
  for (const auto & th : thetas) { sum += th; }
  return sum / static_cast<double>(thetas.size());
}

/// sum_i ||theta_i - consensus||_2.
inline double primal_residual(const std::vector<Vector> & thetas, const Vector & consensus)
{
  double r = 0.0;
  for (const auto & th : thetas) { r += (th - consensus).norm(); }
  return r;
}

/// u_i <- u_i + rho (theta_i - consensus).
inline void dual_update(std::vector<Vector> & duals, const std::vector<Vector> & thetas, const Vector & consensus,
                        double rho)
{
  for (std::size_t i = 0; i < duals.size(); ++i) { duals[i] += rho * (thetas[i] - consensus); }
}

/**
 * @brief Consensus ADMM over B >= 2 batches.
 *
 * Each iteration solves every batch's collocation NLP with the extra term
 * (rho / 2) ||theta_i - consensus + u_i / rho||^2, warm-started from the
 * batch's previous iterate, then averages the thetas and updates the duals.
 * Stops at max_iters or when the primal residual reaches the tolerance. A
 * failing subproblem aborts the run and the previous consensus is returned.
 */
inline AdmmResult admm_train(const std::vector<Dataset> & batches, const Mlp & net0, const AdmmConfig & cfg)
{
  detail::require(batches.size() >= 2, "admm_train: need at least two batches");
  detail::require(cfg.rho > 0.0, "admm_train: rho must be positive");
  detail::require(cfg.max_iters >= 1, "admm_train: max_iters must be >= 1");
  net0.validate();

  const auto start = std::chrono::steady_clock::now();
  auto elapsed     = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const std::size_t B = batches.size();
  const Index P       = net0.param_count();
  const double tol    = cfg.residual_tol.value_or(1e-3 * std::sqrt(static_cast<double>(P)));

  std::vector<CollocationSetup> subs;
  subs.reserve(B);
  for (const auto & batch : batches) { subs.push_back(make_collocation_problem(net0, batch, cfg.colloc)); }

  AdmmResult res;
  res.state.rho       = cfg.rho;
  res.state.thetas    = std::vector<Vector>(B, net0.theta);
  res.state.duals     = std::vector<Vector>(B, Vector::Zero(P));
  res.state.consensus = consensus_mean(res.state.thetas);
  res.consensus       = net0;

  std::vector<Vector> z(B);
  for (std::size_t i = 0; i < B; ++i) { z[i] = subs[i].z0; }

  for (Index k = 1; k <= cfg.max_iters; ++k) {
    AdmmIterate it;
    it.iter         = k;
    it.duals_before = res.state.duals;
    std::vector<Vector> thetas(B);
    for (std::size_t i = 0; i < B; ++i) {
      NlpProblem & prob = subs[i].problem;
      prob.set_proximal(cfg.rho, res.state.consensus - res.state.duals[i] / cfg.rho);
      SolveReport rep;
      try {
        rep = solve(prob, z[i], cfg.colloc.solver);
      } catch (const Error & e) {
        res.aborted    = true;
        res.diagnostic = "iteration " + std::to_string(k) + ", batch " + std::to_string(i) + ": " + e.what();
        break;
      }
      it.statuses.push_back(rep.status);
      if (rep.status == SolveStatus::numerical_failure) {
        res.aborted    = true;
        res.diagnostic = "iteration " + std::to_string(k) + ", batch " + std::to_string(i) + ": " + rep.message;
        break;
      }
      z[i]      = rep.z_final;
      thetas[i] = prob.theta(z[i]);
    }
    if (res.aborted) { break; }

    const Vector consensus = consensus_mean(thetas);
    dual_update(res.state.duals, thetas, consensus, cfg.rho);
    const double r = primal_residual(thetas, consensus);

    res.state.thetas    = thetas;
    res.state.consensus = consensus;
    res.state.primal_residuals.push_back(r);
    res.consensus.theta = consensus;

    it.thetas          = std::move(thetas);
    it.consensus       = consensus;
    it.duals_after     = res.state.duals;
    it.primal_residual = r;
    it.elapsed_s       = elapsed();
    res.history.push_back(std::move(it));

    if (r <= tol) {
      res.converged = true;
      break;
    }
  }
  res.elapsed_s = elapsed();
  return res;
}

}  // namespace colnode
