#pragma once

// Chebyshev collocation grids and barycentric Lagrange machinery: nodes,
// weights, differentiation matrices and interpolant evaluation.

#include "colnode/core.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace colnode {

/**
 * @brief Chebyshev nodes of the second kind, cos(i*pi/(n-1)), i = 0..n-1.
 *
 * Returned in descending order, from 1 down to -1. build_grid() reverses them
 * so grids run forward in time.
 */
inline Vector chebyshev_nodes(Index n)
{
  if (n < 2) { throw InvalidArgument("chebyshev_nodes: need n >= 2, got " + std::to_string(n)); }
  Vector x(n);
  const double m = static_cast<double>(n - 1);
  for (Index i = 0; i < n; ++i) { x[i] = std::cos(static_cast<double>(i) * std::numbers::pi / m); }
  // exact endpoints and symmetric center
  x[0]     = 1.0;
  x[n - 1] = -1.0;
  if (n % 2 == 1) { x[n / 2] = 0.0; }
  return x;
}

namespace detail {

inline void check_distinct(const Vector & nodes, const char * who)
{
  for (Index i = 0; i < nodes.size(); ++i) {
    if (!std::isfinite(nodes[i])) { throw InvalidArgument(std::string(who) + ": non-finite node"); }
    for (Index k = i + 1; k < nodes.size(); ++k) {
      if (nodes[i] == nodes[k]) {
        throw DegenerateGrid(std::string(who) + ": duplicate node at index " + std::to_string(i) + " and "
                             + std::to_string(k));
      }
    }
  }
}

}  // namespace detail

/**
 * @brief Barycentric weights w_i = 1 / prod_{k != i} (x_i - x_k).
 *
 * Up to 64 nodes the plain product is returned. Larger grids divide every
 * factor by the half-width of the node span to stay clear of overflow and
 * underflow; only ratios w_j / w_i are used downstream, so the uniform
 * rescaling is harmless.
 */
inline Vector barycentric_weights(const Vector & nodes)
{
  const Index n = nodes.size();
  if (n < 1) { throw InvalidArgument("barycentric_weights: empty node set"); }
  detail::check_distinct(nodes, "barycentric_weights");

  double scale = 1.0;
  if (n > 64) { scale = 0.5 * (nodes.maxCoeff() - nodes.minCoeff()); }

  Vector w(n);
  for (Index i = 0; i < n; ++i) {
    double prod = 1.0;
    for (Index k = 0; k < n; ++k) {
      if (k != i) { prod *= (nodes[i] - nodes[k]) / scale; }
    }
    w[i] = 1.0 / prod;
  }
  return w;
}

/**
 * @brief Differentiation matrix D_ij = l_j'(x_i) of the Lagrange interpolant.
 *
 * Off-diagonal entries are (w_j / w_i) / (x_i - x_j); each diagonal entry is
 * the negated sum of its row, so D annihilates constants.
 */
inline Matrix differentiation_matrix(const Vector & nodes, const Vector & weights)
{
  const Index n = nodes.size();
  if (weights.size() != n) { throw InvalidArgument("differentiation_matrix: nodes/weights size mismatch"); }
  detail::check_distinct(nodes, "differentiation_matrix");

  Matrix D(n, n);
  for (Index i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (i == j) { continue; }
      D(i, j) = (weights[j] / weights[i]) / (nodes[i] - nodes[j]);
      row_sum += D(i, j);
    }
    D(i, i) = -row_sum;
  }
  return D;
}

struct CollocationGrid
{
  Index n{0};
  Vector nodes_ref;     ///< ascending reference nodes in [-1, 1]
  Vector nodes_time;    ///< ascending nodes in [t0, t_end]
  Vector bary_weights;  ///< barycentric weights on nodes_time
  Matrix diff_matrix;   ///< D(i, j) = l_j'(nodes_time[i])
  double t0{0.0};
  double t_end{1.0};
};

/// Chebyshev grid with n nodes mapped affinely onto [t0, t_end], ascending in time.
inline CollocationGrid build_grid(Index n, double t0, double t_end)
{
  if (!(t_end > t0)) { throw InvalidInterval("build_grid: need t_end > t0"); }
  if (!std::isfinite(t0) || !std::isfinite(t_end)) { throw InvalidInterval("build_grid: non-finite interval"); }

  CollocationGrid g;
  g.n         = n;
  g.t0        = t0;
  g.t_end     = t_end;
  g.nodes_ref = chebyshev_nodes(n).reverse();

  const double half = 0.5 * (t_end - t0);
  g.nodes_time.resize(n);
  for (Index i = 0; i < n; ++i) { g.nodes_time[i] = t0 + (g.nodes_ref[i] + 1.0) * half; }
  g.nodes_time[0]     = t0;
  g.nodes_time[n - 1] = t_end;
  for (Index i = 1; i < n; ++i) {
    if (!(g.nodes_time[i] > g.nodes_time[i - 1])) {
      throw DegenerateGrid("build_grid: interval too short to separate " + std::to_string(n) + " nodes");
    }
  }

  g.bary_weights = barycentric_weights(g.nodes_time);
  g.diff_matrix  = differentiation_matrix(g.nodes_time, g.bary_weights);
  return g;
}

struct InterpResult
{
  Vector value;
  bool extrapolated{false};  ///< t lies outside [t0, t_end]
};

/**
 * @brief Evaluates the interpolant sum_i coeffs.row(i) * l_i(t).
 *
 * Uses the second (true) barycentric form. When t coincides with a node
 * (relative distance <= 1e-14) the node's row is returned verbatim.
 */
inline InterpResult interp_eval(const CollocationGrid & grid, const Matrix & coeffs, double t)
{
  if (coeffs.rows() != grid.n) { throw InvalidArgument("interp_eval: coefficient rows must equal grid size"); }

  InterpResult out;
  out.extrapolated = t < grid.t0 || t > grid.t_end;

  const auto & x = grid.nodes_time;
  for (Index i = 0; i < grid.n; ++i) {
    const double diff = t - x[i];
    if (diff == 0.0 || std::abs(diff) <= 1e-14 * std::abs(x[i])) {
      out.value = coeffs.row(i).transpose();
      return out;
    }
  }

  Vector num = Vector::Zero(coeffs.cols());
  double den = 0.0;
  for (Index i = 0; i < grid.n; ++i) {
    const double c = grid.bary_weights[i] / (t - x[i]);
    num += c * coeffs.row(i).transpose();
    den += c;
  }
  out.value = num / den;
  return out;
}

}  // namespace colnode
