#pragma once

// Sequential (discretize-then-optimize) baseline: the loss is the MSE of an
// unrolled fixed-step rollout, differentiated by hand through every
// integrator stage and minimized with Adam.

#include "colnode/neuralnet.hpp"
#include "colnode/odesim.hpp"
#include "colnode/prep.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace colnode {

struct AdamConfig
{
  double step_size{1e-2};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

struct SeqTrainConfig
{
  Integrator integrator{Integrator::rk4};
  Index substeps{0};      ///< steps per observation interval; 0 picks the count keeping steps <= max_step
  double max_step{0.01};
  AdamConfig adam;
  Index epochs{1000};
  std::uint64_t seed{0};
  std::optional<double> time_limit;  ///< wall-clock seconds
  std::vector<Index> layer_sizes;    ///< expected architecture; empty accepts any

  void validate() const
  {
    detail::require(adam.step_size > 0.0, "SeqTrainConfig: step size must be positive");
    detail::require(epochs >= 0, "SeqTrainConfig: epochs must be >= 0");
    detail::require(substeps >= 0 && max_step > 0.0, "SeqTrainConfig: bad step control");
  }
};

struct LossPoint
{
  Index epoch{0};
  double elapsed_s{0.0};
  double value{0.0};
};

enum class SeqTrainStatus { completed, time_limit, diverged };

inline std::string to_string(SeqTrainStatus s)
{
  switch (s) {
    case SeqTrainStatus::completed: return "completed";
    case SeqTrainStatus::time_limit: return "time-limit";
    case SeqTrainStatus::diverged: return "diverged";
  }
  return "unknown";
}

struct SeqTrainResult
{
  Mlp net;
  std::vector<LossPoint> trace;  ///< epoch 0 is the starting loss
  SeqTrainStatus status{SeqTrainStatus::completed};
  Index rejected_steps{0};
  double elapsed_s{0.0};
};

inline void write_loss_csv(std::ostream & os, const std::vector<LossPoint> & trace)
{
  const auto old = os.precision(17);
  os << "iter,elapsed_s,value\n";
  for (const auto & p : trace) { os << p.epoch << ',' << p.elapsed_s << ',' << p.value << '\n'; }
  os.precision(old);
}

struct EvalResult
{
  double mse{std::numeric_limits<double>::infinity()};
  bool diverged{false};
  std::string diagnostic;
};

enum class EvalMode { train, test };

/**
 * @brief (1/N) ||Yhat - Y||_F^2 of an RK4 rollout from y0 over data.times.
 *
 * A diverged rollout reports mse = +inf with a diagnostic.
 */
inline EvalResult evaluate_mse(const Mlp & net, const Dataset & data, const Vector & y0,
                               EvalMode mode = EvalMode::train, double max_step = 0.01)
{
  data.validate();
  detail::require(data.dim() == net.state_dim(), "evaluate_mse: dataset and network state widths differ");
  EvalResult out;
  try {
    const Trajectory traj = predict(net, y0, data.times, max_step);
    out.mse = (traj.states - data.y_obs).squaredNorm() / static_cast<double>(data.size());
    if (!std::isfinite(out.mse)) {
      out.mse        = std::numeric_limits<double>::infinity();
      out.diverged   = true;
      out.diagnostic = "non-finite prediction";
    }
  } catch (const IntegrationDiverged & e) {
    out.diverged   = true;
    out.diagnostic = std::string(mode == EvalMode::train ? "train" : "test") + " rollout: " + e.what();
  }
  return out;
}

namespace detail {

struct StageCache
{
  ForwardCache cache;
};

// Unrolled rollout with per-stage caches, used for the loss and its gradient.
class UnrolledRollout
{
public:
  UnrolledRollout(const Mlp & net, const Dataset & data, const SeqTrainConfig & cfg) : net_(net), data_(data), cfg_(cfg)
  {
    const Index n = data.size();
    steps_.resize(static_cast<std::size_t>(std::max<Index>(n - 1, 0)));
    for (Index k = 0; k + 1 < n; ++k) {
      steps_[static_cast<std::size_t>(k)] =
          cfg.substeps > 0 ? cfg.substeps : substeps_for(data.times[k + 1] - data.times[k], cfg.max_step);
    }
  }

  // loss at net_.theta; false when the rollout is not finite
  bool forward(double & loss)
  {
    const Index n  = data_.size();
    const Index d  = data_.dim();
    const int ns   = cfg_.integrator == Integrator::rk4 ? 4 : 1;
    Index total    = 0;
    for (auto s : steps_) { total += s; }
    states_.resize(static_cast<std::size_t>(total));
    stages_.resize(static_cast<std::size_t>(total * ns));

    Vector y = data_.y_obs.row(0).transpose();
    loss     = 0.0;
    outputs_.resize(n, d);
    outputs_.row(0) = y.transpose();
    Index s = 0;
    for (Index k = 0; k + 1 < n; ++k) {
      const Index m  = steps_[static_cast<std::size_t>(k)];
      const double h = (data_.times[k + 1] - data_.times[k]) / static_cast<double>(m);
      for (Index j = 0; j < m; ++j, ++s) {
        const double t = data_.times[k] + static_cast<double>(j) * h;
        states_[static_cast<std::size_t>(s)] = y;
        if (ns == 4) {
          auto & c      = stages_;
          const std::size_t b = static_cast<std::size_t>(s * 4);
          const Vector k1 = forward_cached(net_, y, t, c[b].cache);
          const Vector k2 = forward_cached(net_, y + (0.5 * h) * k1, t + 0.5 * h, c[b + 1].cache);
          const Vector k3 = forward_cached(net_, y + (0.5 * h) * k2, t + 0.5 * h, c[b + 2].cache);
          const Vector k4 = forward_cached(net_, y + h * k3, t + h, c[b + 3].cache);
          y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        } else {
          y += h * forward_cached(net_, y, t, stages_[static_cast<std::size_t>(s)].cache);
        }
      }
      if (!y.allFinite()) { return false; }
      outputs_.row(k + 1) = y.transpose();
    }
    loss = (outputs_ - data_.y_obs).squaredNorm() / static_cast<double>(n);
    return std::isfinite(loss);
  }

  // gradient of the last forward() loss with respect to theta
  Vector gradient() const
  {
    const Index n  = data_.size();
    const Index d  = data_.dim();
    const int ns   = cfg_.integrator == Integrator::rk4 ? 4 : 1;
    Vector grad    = Vector::Zero(net_.param_count());
    std::span<double> g(grad.data(), static_cast<std::size_t>(grad.size()));
    Vector ybar    = Vector::Zero(d);
    Index s        = static_cast<Index>(states_.size());
    const double scale = 2.0 / static_cast<double>(n);

    for (Index k = n - 2; k >= 0; --k) {
      ybar += scale * (outputs_.row(k + 1) - data_.y_obs.row(k + 1)).transpose();
      const Index m  = steps_[static_cast<std::size_t>(k)];
      const double h = (data_.times[k + 1] - data_.times[k]) / static_cast<double>(m);
      for (Index j = m - 1; j >= 0; --j) {
        --s;
        if (ns == 4) {
          const std::size_t b = static_cast<std::size_t>(s * 4);
          Vector k1bar = (h / 6.0) * ybar;
          Vector k2bar = (h / 3.0) * ybar;
          Vector k3bar = (h / 3.0) * ybar;
          const Vector k4bar = (h / 6.0) * ybar;

          Vector y4bar = backward(net_, stages_[b + 3].cache, k4bar, g).head(d);
          ybar += y4bar;
          k3bar += h * y4bar;
          Vector y3bar = backward(net_, stages_[b + 2].cache, k3bar, g).head(d);
          ybar += y3bar;
          k2bar += (0.5 * h) * y3bar;
          Vector y2bar = backward(net_, stages_[b + 1].cache, k2bar, g).head(d);
          ybar += y2bar;
          k1bar += (0.5 * h) * y2bar;
          ybar += backward(net_, stages_[b].cache, k1bar, g).head(d);
        } else {
          const Vector kbar = h * ybar;
          ybar += backward(net_, stages_[static_cast<std::size_t>(s)].cache, kbar, g).head(d);
        }
      }
    }
    return grad;
  }

  Mlp & net() { return net_; }

private:
  Mlp net_;
  const Dataset & data_;
  const SeqTrainConfig & cfg_;
  std::vector<Index> steps_;
  std::vector<Vector> states_;
  std::vector<StageCache> stages_;
  Matrix outputs_;
};

}  // namespace detail

/// Unrolled-rollout MSE from the first observation row; +inf when the rollout diverges.
inline double sequential_loss(const Mlp & net, const Dataset & data, const SeqTrainConfig & cfg = {})
{
  detail::UnrolledRollout roll(net, data, cfg);
  double loss = 0.0;
  return roll.forward(loss) ? loss : std::numeric_limits<double>::infinity();
}

/// Gradient of sequential_loss() with respect to theta, by reverse accumulation through the integrator.
inline Vector sequential_loss_gradient(const Mlp & net, const Dataset & data, const SeqTrainConfig & cfg = {})
{
  detail::UnrolledRollout roll(net, data, cfg);
  double loss = 0.0;
  if (!roll.forward(loss)) { throw IntegrationDiverged("sequential_loss_gradient: rollout diverged", {}); }
  return roll.gradient();
}

/**
 * @brief Trains net0 by Adam on the unrolled rollout MSE.
 *
 * A step that makes the loss non-finite or larger is rejected: the step
 * size is halved and the Adam moments restart from zero. Accepted steps let
 * the step size recover toward its configured value. The loss trace is therefore
 * non-increasing. Twenty consecutive non-finite rollouts end training with
 * status diverged.
 */
inline SeqTrainResult sequential_train(const Mlp & net0, const Dataset & data, const SeqTrainConfig & cfg)
{
  cfg.validate();
  net0.validate();
  data.validate();
  detail::require(data.dim() == net0.state_dim(), "sequential_train: dataset and network state widths differ");
  detail::require(data.size() >= 2, "sequential_train: need at least two observations");
  if (!cfg.layer_sizes.empty() && cfg.layer_sizes != net0.layer_sizes) {
    throw InvalidArgument("sequential_train: network architecture does not match the configuration");
  }

  const auto start = std::chrono::steady_clock::now();
  auto elapsed     = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  SeqTrainResult res;
  res.net = net0;
  detail::UnrolledRollout roll(net0, data, cfg);
  double loss = 0.0;
  if (!roll.forward(loss)) {
    res.status = SeqTrainStatus::diverged;
    res.trace.push_back({0, elapsed(), std::numeric_limits<double>::infinity()});
    return res;
  }
  res.trace.push_back({0, elapsed(), loss});
  if (cfg.epochs == 0) { return res; }

  const Index P = net0.param_count();
  Vector m      = Vector::Zero(P);
  Vector v      = Vector::Zero(P);
  Vector grad   = roll.gradient();
  Vector theta  = net0.theta;
  double lr     = cfg.adam.step_size;
  Index t       = 0;
  int bad_rollouts = 0;

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.time_limit && elapsed() >= *cfg.time_limit) {
      res.status = SeqTrainStatus::time_limit;
      break;
    }
    const Vector m_new = cfg.adam.beta1 * m + (1.0 - cfg.adam.beta1) * grad;
    const Vector v_new = cfg.adam.beta2 * v + (1.0 - cfg.adam.beta2) * grad.cwiseProduct(grad);
    const double bc1   = 1.0 - std::pow(cfg.adam.beta1, static_cast<double>(t + 1));
    const double bc2   = 1.0 - std::pow(cfg.adam.beta2, static_cast<double>(t + 1));
    const Vector step  = (m_new / bc1).array() / ((v_new / bc2).array().sqrt() + cfg.adam.eps);

    roll.net().theta = theta - lr * step;
    double trial     = 0.0;
    const bool finite = roll.forward(trial);
    if (finite && trial <= loss) {
      theta = roll.net().theta;
      m     = m_new;
      v     = v_new;
      ++t;
      loss  = trial;
      grad  = roll.gradient();
      lr    = std::min(cfg.adam.step_size, lr * 1.25);
      bad_rollouts = 0;
    } else {
      ++res.rejected_steps;
      lr *= 0.5;
      // stale momentum can point uphill; restart from the bare gradient
      m.setZero();
      v.setZero();
      t = 0;
      bad_rollouts = finite ? 0 : bad_rollouts + 1;
      roll.net().theta = theta;
      if (bad_rollouts >= 20) {
        res.status = SeqTrainStatus::diverged;
        res.trace.push_back({epoch, elapsed(), loss});
        break;
      }
    }
    res.trace.push_back({epoch, elapsed(), loss});
  }
  res.net.theta = theta;
  res.elapsed_s = elapsed();
  return res;
}

/**
 * @brief Continues training a collocation checkpoint with the sequential trainer.
 *
 * Epoch 0 of the returned trace is evaluate_mse() of the checkpoint.
 */
inline SeqTrainResult hybrid_pretrain_handoff(const Mlp & checkpoint, const Dataset & data, const SeqTrainConfig & cfg)
{
  if (!cfg.layer_sizes.empty() && cfg.layer_sizes != checkpoint.layer_sizes) {
    throw InvalidArgument("hybrid_pretrain_handoff: checkpoint architecture does not match the configuration");
  }
  SeqTrainResult res = sequential_train(checkpoint, data, cfg);
  const EvalResult start = evaluate_mse(checkpoint, data, data.y_obs.row(0).transpose(), EvalMode::train, cfg.max_step);
  if (!res.trace.empty()) { res.trace.front().value = start.mse; }
  return res;
}

}  // namespace colnode
