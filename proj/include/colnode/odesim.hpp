#pragma once

// Fixed-step explicit integrators, the forced Van der Pol oscillator, and
// forward simulation of trained networks.

#include "colnode/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace colnode {

struct OdeSystem
{
  Index dim{0};
  std::function<Vector(const Vector &, double)> rhs;
};

struct Trajectory
{
  Vector times;   ///< strictly increasing
  Matrix states;  ///< one row per time
};

/// Raised when the state stops being finite; carries the rows computed so far.
class IntegrationDiverged : public Error
{
public:
  IntegrationDiverged(const std::string & what, Trajectory partial) : Error(what), partial_(std::move(partial)) {}
  const Trajectory & partial() const { return partial_; }

private:
  Trajectory partial_;
};

enum class Integrator { euler, rk4 };

namespace detail {

template <class F>
Vector rk4_step(F && f, const Vector & y, double t, double h)
{
  const Vector k1 = f(y, t);
  const Vector k2 = f(y + (0.5 * h) * k1, t + 0.5 * h);
  const Vector k3 = f(y + (0.5 * h) * k2, t + 0.5 * h);
  const Vector k4 = f(y + h * k3, t + h);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class F>
Vector euler_step(F && f, const Vector & y, double t, double h)
{
  return y + h * f(y, t);
}

inline void check_times(const Vector & times)
{
  require(times.size() >= 1, "integrate: need at least one output time");
  for (Index i = 0; i < times.size(); ++i) { require(std::isfinite(times[i]), "integrate: non-finite time"); }
  for (Index i = 1; i < times.size(); ++i) {
    require(times[i] > times[i - 1], "integrate: output times must be strictly increasing");
  }
}

}  // namespace detail

/**
 * @brief Integrates y' = f(y, t) and records the state at every output time.
 *
 * substeps(k) internal steps of equal length are taken between times[k] and
 * times[k+1].
 */
template <class F, class Substeps>
Trajectory integrate(F && f, const Vector & y0, const Vector & times, Substeps && substeps, Integrator method)
{
  detail::check_times(times);
  Trajectory traj;
  traj.times = times;
  traj.states.resize(times.size(), y0.size());
  traj.states.row(0) = y0.transpose();

  Vector y = y0;
  for (Index k = 0; k + 1 < times.size(); ++k) {
    const Index m = substeps(k);
    detail::require(m >= 1, "integrate: substeps must be >= 1");
    const double h = (times[k + 1] - times[k]) / static_cast<double>(m);
    for (Index j = 0; j < m; ++j) {
      const double t = times[k] + static_cast<double>(j) * h;
      y = method == Integrator::rk4 ? detail::rk4_step(f, y, t, h) : detail::euler_step(f, y, t, h);
    }
    if (!y.allFinite()) {
      Trajectory partial;
      partial.times  = times.head(k + 1);
      partial.states = traj.states.topRows(k + 1);
      throw IntegrationDiverged("integration diverged between t=" + std::to_string(times[k]) + " and t="
                                    + std::to_string(times[k + 1]),
                                std::move(partial));
    }
    traj.states.row(k + 1) = y.transpose();
  }
  return traj;
}

/// Classical fourth-order Runge-Kutta with `substeps` steps per output interval.
inline Trajectory rk4_integrate(const OdeSystem & system, const Vector & y0, const Vector & times, Index substeps)
{
  detail::require(y0.size() == system.dim, "rk4_integrate: y0 dimension mismatch");
  detail::require(substeps >= 1, "rk4_integrate: substeps must be >= 1");
  return integrate(system.rhs, y0, times, [substeps](Index) { return substeps; }, Integrator::rk4);
}

/// Forward Euler with `substeps` steps per output interval.
inline Trajectory euler_integrate(const OdeSystem & system, const Vector & y0, const Vector & times, Index substeps)
{
  detail::require(y0.size() == system.dim, "euler_integrate: y0 dimension mismatch");
  detail::require(substeps >= 1, "euler_integrate: substeps must be >= 1");
  return integrate(system.rhs, y0, times, [substeps](Index) { return substeps; }, Integrator::euler);
}

/// u' = v,  v' = mu (1 - u^2) v - u + amplitude cos(omega t).
inline OdeSystem vdp_system(double mu, double amplitude, double omega)
{
  OdeSystem sys;
  sys.dim = 2;
  sys.rhs = [mu, amplitude, omega](const Vector & y, double t) {
    Vector dy(2);
    dy[0] = y[1];
    dy[1] = mu * (1.0 - y[0] * y[0]) * y[1] - y[0] + amplitude * std::cos(omega * t);
    return dy;
  };
  return sys;
}

inline OdeSystem mlp_system(Mlp net)
{
  net.validate();
  OdeSystem sys;
  sys.dim = net.state_dim();
  sys.rhs = [net = std::move(net)](const Vector & y, double t) { return forward(net, y, t); };
  return sys;
}

/// Internal step count keeping every RK4 step at or below max_step.
inline Index substeps_for(double interval, double max_step)
{
  return std::max<Index>(1, static_cast<Index>(std::ceil(interval / max_step - 1e-9)));
}

/**
 * @brief Rolls a trained network forward from y0 with RK4.
 *
 * Internal steps never exceed max_step time units.
 */
inline Trajectory predict(const Mlp & net, const Vector & y0, const Vector & times, double max_step = 0.01)
{
  net.validate();
  detail::require(y0.size() == net.state_dim(), "predict: y0 dimension mismatch");
  detail::check_times(times);
  ForwardCache cache;
  auto f = [&](const Vector & y, double t) { return forward_cached(net, y, t, cache); };
  return integrate(f, y0, times, [&](Index k) { return substeps_for(times[k + 1] - times[k], max_step); },
                   Integrator::rk4);
}

// ---------------------------------------------------------------------------
// CSV: header t,y0,...,y{d-1}; 17 significant digits.

inline void write_trajectory_csv(std::ostream & os, const Vector & times, const Matrix & states)
{
  detail::require(times.size() == states.rows(), "write_trajectory_csv: row mismatch");
  os << 't';
  for (Index k = 0; k < states.cols(); ++k) { os << ",y" << k; }
  os << '\n';
  const auto old = os.precision(17);
  for (Index i = 0; i < states.rows(); ++i) {
    os << times[i];
    for (Index k = 0; k < states.cols(); ++k) { os << ',' << states(i, k); }
    os << '\n';
  }
  os.precision(old);
}

inline Trajectory read_trajectory_csv(std::istream & is)
{
  std::string line;
  if (!std::getline(is, line) || line.empty() || line[0] != 't') { throw IoError("trajectory csv: missing header"); }
  const Index d = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  if (d < 1) { throw IoError("trajectory csv: no state columns"); }

  std::vector<double> values;
  Index rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) { continue; }
    std::stringstream ls(line);
    std::string cell;
    Index cols = 0;
    while (std::getline(ls, cell, ',')) {
      char * end     = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) { throw IoError("trajectory csv: bad number '" + cell + "'"); }
      values.push_back(v);
      ++cols;
    }
    if (cols != d + 1) { throw IoError("trajectory csv: row " + std::to_string(rows + 1) + " has wrong width"); }
    ++rows;
  }
  Trajectory traj;
  traj.times.resize(rows);
  traj.states.resize(rows, d);
  for (Index i = 0; i < rows; ++i) {
    traj.times[i] = values[static_cast<std::size_t>(i * (d + 1))];
    for (Index k = 0; k < d; ++k) { traj.states(i, k) = values[static_cast<std::size_t>(i * (d + 1) + 1 + k)]; }
  }
  return traj;
}

inline void save_trajectory_csv(const std::string & path, const Trajectory & traj)
{
  std::ofstream os(path);
  if (!os) { throw IoError("cannot open '" + path + "' for writing"); }
  write_trajectory_csv(os, traj.times, traj.states);
}

inline Trajectory load_trajectory_csv(const std::string & path)
{
  std::ifstream is(path);
  if (!is) { throw IoError("cannot open '" + path + "'"); }
  return read_trajectory_csv(is);
}

}  // namespace colnode
