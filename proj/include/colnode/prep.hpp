#pragma once

// Observation preprocessing: measurement noise, LOESS smoothing and linear
// resampling onto a collocation grid.

#include "colnode/colloc.hpp"
#include "colnode/odesim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace colnode {

/// Where a dataset came from and what has been done to it, in order.
struct Provenance
{
  std::vector<std::pair<std::string, std::string>> params;
  std::vector<std::string> history;

  void set(const std::string & key, const std::string & value)
  {
    for (auto & kv : params) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    params.emplace_back(key, value);
  }

  const std::string * get(const std::string & key) const
  {
    for (const auto & kv : params) {
      if (kv.first == key) { return &kv.second; }
    }
    return nullptr;
  }
};

struct Dataset
{
  Vector times;  ///< strictly increasing
  Matrix y_obs;  ///< one row per time
  Provenance meta;

  Index size() const { return times.size(); }
  Index dim() const { return y_obs.cols(); }

  void validate() const
  {
    detail::require(times.size() == y_obs.rows(), "Dataset: times and observations differ in length");
    detail::require(times.size() >= 1, "Dataset: empty");
    detail::require(times.allFinite() && y_obs.allFinite(), "Dataset: non-finite values");
    for (Index i = 1; i < times.size(); ++i) {
      detail::require(times[i] > times[i - 1], "Dataset: times must be strictly increasing");
    }
  }

  /// Rows [first, first + count).
  Dataset slice(Index first, Index count) const
  {
    detail::require(first >= 0 && count >= 1 && first + count <= size(), "Dataset::slice: out of range");
    Dataset out;
    out.times = times.segment(first, count);
    out.y_obs = y_obs.middleRows(first, count);
    out.meta  = meta;
    out.meta.history.push_back("slice(" + std::to_string(first) + "," + std::to_string(count) + ")");
    return out;
  }
};

inline std::string format_double(double v)
{
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Adds i.i.d. N(0, sigma^2) noise to every observation.
inline Dataset add_noise(const Dataset & data, double sigma, std::uint64_t seed)
{
  detail::require(sigma >= 0.0, "add_noise: sigma must be nonnegative");
  Dataset out = data;
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Index i = 0; i < out.y_obs.rows(); ++i) {
      for (Index k = 0; k < out.y_obs.cols(); ++k) { out.y_obs(i, k) += noise(rng); }
    }
  }
  out.meta.set("noise.sigma", format_double(sigma));
  out.meta.set("noise.seed", std::to_string(seed));
  out.meta.history.push_back("add_noise(sigma=" + format_double(sigma) + ",seed=" + std::to_string(seed) + ")");
  return out;
}

/// Piecewise-linear value of (times, values) at t; exact at sample times.
inline Vector linear_interp(const Vector & times, const Matrix & values, double t)
{
  const Index n = times.size();
  if (t <= times[0]) { return values.row(0).transpose(); }
  if (t >= times[n - 1]) { return values.row(n - 1).transpose(); }
  const auto it = std::upper_bound(times.data(), times.data() + n, t);
  const Index hi = static_cast<Index>(it - times.data());
  const Index lo = hi - 1;
  if (times[lo] == t) { return values.row(lo).transpose(); }
  const double a = (t - times[lo]) / (times[hi] - times[lo]);
  return ((1.0 - a) * values.row(lo) + a * values.row(hi)).transpose();
}

/// Linear interpolation of every state column onto the grid nodes.
inline Dataset resample_to_grid(const Dataset & data, const CollocationGrid & grid)
{
  data.validate();
  const double slack = 1e-12 * std::max(1.0, std::abs(data.times[data.size() - 1]));
  if (grid.t0 < data.times[0] - slack || grid.t_end > data.times[data.size() - 1] + slack) {
    throw InvalidArgument("resample_to_grid: grid extends beyond the data time range");
  }
  Dataset out;
  out.times = grid.nodes_time;
  out.y_obs.resize(grid.n, data.dim());
  for (Index i = 0; i < grid.n; ++i) { out.y_obs.row(i) = linear_interp(data.times, data.y_obs, grid.nodes_time[i]).transpose(); }
  out.meta = data.meta;
  out.meta.history.push_back("resample_to_grid(n=" + std::to_string(grid.n) + ",linear)");
  return out;
}

/**
 * @brief LOESS smoother: local linear fit with tricube weights.
 *
 * Each output time uses its ceil(span * N) nearest neighbors in time; the
 * farthest neighbor sets the tricube radius. No robustness iterations.
 */
inline Dataset loess_smooth(const Dataset & data, double span)
{
  data.validate();
  detail::require(span > 0.0 && span <= 1.0, "loess_smooth: span must lie in (0, 1]");
  const Index N = data.size();
  const Index q = std::min<Index>(N, static_cast<Index>(std::ceil(span * static_cast<double>(N) - 1e-9)));
  if (q < 3) { throw InvalidArgument("loess_smooth: window holds fewer than 3 points"); }

  const Vector & t = data.times;
  Dataset out      = data;
  Index left       = 0;
  for (Index i = 0; i < N; ++i) {
    while (left + q < N && t[i] - t[left] > t[left + q] - t[i]) { ++left; }
    const double radius = std::max(t[i] - t[left], t[left + q - 1] - t[i]);

    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    Vector r0 = Vector::Zero(data.dim());
    Vector r1 = Vector::Zero(data.dim());
    for (Index j = left; j < left + q; ++j) {
      const double dt = t[j] - t[i];
      const double u  = radius > 0.0 ? std::abs(dt) / radius : 0.0;
      if (u >= 1.0) { continue; }
      const double c = 1.0 - u * u * u;
      const double w = c * c * c;
      s0 += w;
      s1 += w * dt;
      s2 += w * dt * dt;
      r0 += w * data.y_obs.row(j).transpose();
      r1 += (w * dt) * data.y_obs.row(j).transpose();
    }
    // intercept of the weighted line centered at t_i
    const double det = s0 * s2 - s1 * s1;
    if (std::abs(det) > 1e-14 * s0 * s2 && s2 > 0.0) {
      out.y_obs.row(i) = ((s2 * r0 - s1 * r1) / det).transpose();
    } else {
      out.y_obs.row(i) = (r0 / s0).transpose();
    }
  }
  out.meta.set("loess.span", format_double(span));
  out.meta.history.push_back("loess_smooth(span=" + format_double(span) + ",degree=1,tricube)");
  return out;
}

/// LOESS on the raw observations, then linear resampling onto the grid.
inline Matrix init_states(const Dataset & data, const CollocationGrid & grid, double span = 0.1)
{
  return resample_to_grid(loess_smooth(data, span), grid).y_obs;
}

// ---------------------------------------------------------------------------
// Dataset files: trajectory CSV plus a JSON sidecar holding the provenance.

inline nlohmann::ordered_json provenance_to_json(const Provenance & meta)
{
  nlohmann::ordered_json j;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto & [k, v] : meta.params) { params[k] = v; }
  j["params"]  = params;
  j["history"] = meta.history;
  return j;
}

inline Provenance provenance_from_json(const nlohmann::ordered_json & j)
{
  Provenance meta;
  if (j.contains("params")) {
    for (const auto & [k, v] : j.at("params").items()) { meta.params.emplace_back(k, v.get<std::string>()); }
  }
  if (j.contains("history")) { meta.history = j.at("history").get<std::vector<std::string>>(); }
  return meta;
}

inline void save_dataset(const std::string & csv_path, const Dataset & data)
{
  {
    std::ofstream os(csv_path);
    if (!os) { throw IoError("cannot open '" + csv_path + "' for writing"); }
    write_trajectory_csv(os, data.times, data.y_obs);
  }
  std::ofstream meta(csv_path + ".meta.json");
  if (!meta) { throw IoError("cannot open '" + csv_path + ".meta.json' for writing"); }
  meta << provenance_to_json(data.meta).dump(2) << '\n';
}

inline Dataset load_dataset(const std::string & csv_path)
{
  const Trajectory traj = load_trajectory_csv(csv_path);
  Dataset data;
  data.times = traj.times;
  data.y_obs = traj.states;
  std::ifstream meta(csv_path + ".meta.json");
  if (meta) {
    try {
      data.meta = provenance_from_json(nlohmann::ordered_json::parse(meta));
    } catch (const nlohmann::json::exception & e) {
      throw IoError("bad metadata for '" + csv_path + "': " + e.what());
    }
  }
  data.validate();
  return data;
}

}  // namespace colnode
