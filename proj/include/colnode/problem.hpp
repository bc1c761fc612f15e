#pragma once

// The simultaneous training NLP: states at the collocation nodes and network
// parameters are decision variables, the collocated ODE is a set of equality
// constraints D Y* = F_theta(Y*, nodes).
//
// Decision-vector layout: Y* row-major (node-major, state-minor), then theta.

#include "colnode/colloc.hpp"
#include "colnode/neuralnet.hpp"

#include <algorithm>
#include <cmath>

namespace colnode {

struct Bounds
{
  Vector lower;
  Vector upper;
};

/**
 * @brief Default box for the decision vector.
 *
 * Each state column gets [min - 3 range, max + 3 range] of its observations
 * (a constant column gets +-1 around its value); every parameter gets
 * [-100, 100].
 */
inline Bounds default_bounds(const Matrix & y_obs, Index n_params)
{
  detail::require(y_obs.rows() > 0 && y_obs.cols() > 0, "default_bounds: empty observations");
  const Index N = y_obs.rows();
  const Index d = y_obs.cols();
  Bounds b;
  b.lower.resize(N * d + n_params);
  b.upper.resize(N * d + n_params);
  for (Index k = 0; k < d; ++k) {
    const double lo    = y_obs.col(k).minCoeff();
    const double hi    = y_obs.col(k).maxCoeff();
    const double range = hi - lo;
    const double l     = range > 0.0 ? lo - 3.0 * range : lo - 1.0;
    const double u     = range > 0.0 ? hi + 3.0 * range : hi + 1.0;
    for (Index i = 0; i < N; ++i) {
      b.lower[i * d + k] = l;
      b.upper[i * d + k] = u;
    }
  }
  b.lower.tail(n_params).setConstant(-100.0);
  b.upper.tail(n_params).setConstant(100.0);
  return b;
}

class NlpProblem
{
public:
  /// y_obs has one row per grid node. An empty bounds argument selects default_bounds().
  NlpProblem(CollocationGrid grid, Mlp net, Matrix y_obs, double lambda_reg = 1e-4, Bounds bounds = {})
      : grid_(std::move(grid)), net_(std::move(net)), y_obs_(std::move(y_obs)), lambda_(lambda_reg)
  {
    net_.validate();
    detail::require(y_obs_.rows() == grid_.n, "NlpProblem: observation rows must equal grid size");
    detail::require(y_obs_.cols() == net_.state_dim(), "NlpProblem: observation width must equal state dimension");
    detail::require(lambda_ >= 0.0, "NlpProblem: lambda_reg must be nonnegative");
    if (bounds.lower.size() == 0 && bounds.upper.size() == 0) { bounds = default_bounds(y_obs_, net_.param_count()); }
    detail::require(bounds.lower.size() == dimension() && bounds.upper.size() == dimension(),
                    "NlpProblem: bounds length must equal decision-vector length");
    detail::require((bounds.lower.array() <= bounds.upper.array()).all(), "NlpProblem: lower bound exceeds upper");
    bounds_ = std::move(bounds);
  }

  Index num_nodes() const { return grid_.n; }
  Index state_dim() const { return net_.state_dim(); }
  Index num_states() const { return grid_.n * net_.state_dim(); }
  Index num_params() const { return net_.param_count(); }
  Index dimension() const { return num_states() + num_params(); }
  Index num_constraints() const { return num_states(); }

  const CollocationGrid & grid() const { return grid_; }
  const Mlp & net() const { return net_; }
  const Matrix & y_obs() const { return y_obs_; }
  double lambda_reg() const { return lambda_; }
  const Vector & lower() const { return bounds_.lower; }
  const Vector & upper() const { return bounds_.upper; }

  /**
   * @brief Adds (rho / 2) ||theta - center||^2 to the objective.
   *
   * Used by consensus ADMM, where center = consensus - dual / rho. rho = 0
   * removes the term.
   */
  void set_proximal(double rho, Vector center)
  {
    detail::require(rho >= 0.0, "set_proximal: rho must be nonnegative");
    detail::require(rho == 0.0 || center.size() == num_params(), "set_proximal: center length mismatch");
    prox_rho_    = rho;
    prox_center_ = std::move(center);
  }
  double proximal_rho() const { return prox_rho_; }

  Vector pack(const Matrix & states, const Vector & theta) const
  {
    detail::require(states.rows() == num_nodes() && states.cols() == state_dim(), "pack: state shape mismatch");
    detail::require(theta.size() == num_params(), "pack: theta length mismatch");
    Vector z(dimension());
    for (Index i = 0; i < num_nodes(); ++i) {
      for (Index k = 0; k < state_dim(); ++k) { z[i * state_dim() + k] = states(i, k); }
    }
    z.tail(num_params()) = theta;
    return z;
  }

  Matrix states(const Vector & z) const
  {
    check_size(z);
    return Eigen::Map<const Matrix>(z.data(), num_nodes(), state_dim());
  }

  Vector theta(const Vector & z) const
  {
    check_size(z);
    return z.tail(num_params());
  }

  /// Network with theta taken from z.
  Mlp net_at(const Vector & z) const
  {
    Mlp net   = net_;
    net.theta = theta(z);
    return net;
  }

  /// (1/N) ||Y* - Y_obs||_F^2 + lambda ||theta||^2 (+ proximal term).
  double objective(const Vector & z) const
  {
    check_size(z);
    const auto Y     = state_map(z);
    const auto theta = z.tail(num_params());
    double f         = (Y - y_obs_).squaredNorm() / static_cast<double>(num_nodes()) + lambda_ * theta.squaredNorm();
    if (prox_rho_ > 0.0) { f += 0.5 * prox_rho_ * (theta - prox_center_).squaredNorm(); }
    return f;
  }

  /// Mean squared state-to-observation misfit alone.
  double data_misfit(const Vector & z) const
  {
    return (state_map(z) - y_obs_).squaredNorm() / static_cast<double>(num_nodes());
  }

  Vector objective_gradient(const Vector & z) const
  {
    check_size(z);
    Vector g(dimension());
    const Matrix r = (state_map(z) - y_obs_) * (2.0 / static_cast<double>(num_nodes()));
    g.head(num_states()) = Eigen::Map<const Vector>(r.data(), num_states());
    const auto theta     = z.tail(num_params());
    g.tail(num_params()) = 2.0 * lambda_ * theta;
    if (prox_rho_ > 0.0) { g.tail(num_params()) += prox_rho_ * (theta - prox_center_); }
    return g;
  }

  /// Diagonal of the (constant) objective Hessian.
  Vector objective_hessian_diagonal(const Vector & /*z*/) const
  {
    Vector h(dimension());
    h.head(num_states()).setConstant(2.0 / static_cast<double>(num_nodes()));
    h.tail(num_params()).setConstant(2.0 * lambda_ + prox_rho_);
    return h;
  }

  /// vec(D Y* - F_theta(Y*, nodes)), row-major.
  Vector constraints(const Vector & z) const
  {
    check_size(z);
    const auto Y    = state_map(z);
    const Mlp net   = net_at(z);
    const Matrix F  = batch_forward(net, Matrix(Y), grid_.nodes_time);
    const Matrix DY = grid_.diff_matrix * Y;
    const Matrix C  = DY - F;
    return Eigen::Map<const Vector>(C.data(), num_states());
  }

  /// Dense Jacobian of constraints(), num_constraints() x dimension().
  Matrix constraint_jacobian(const Vector & z) const
  {
    check_size(z);
    const Index N = num_nodes();
    const Index d = state_dim();
    const Index S = num_states();
    const auto Y  = state_map(z);
    const Mlp net = net_at(z);

    Matrix J = Matrix::Zero(S, dimension());
    const Matrix & D = grid_.diff_matrix;
    for (Index i = 0; i < N; ++i) {
      for (Index k = 0; k < d; ++k) {
        auto row = J.row(i * d + k);
        for (Index j = 0; j < N; ++j) { row[j * d + k] = D(i, j); }
      }
    }
    for (Index i = 0; i < N; ++i) {
      const NetJacobians jac = jacobians(net, Y.row(i).transpose(), grid_.nodes_time[i]);
      J.block(i * d, i * d, d, d) -= jac.d_state;
      J.block(i * d, S, d, num_params()) = -jac.d_theta;
    }
    return J;
  }

private:
  Eigen::Map<const Matrix> state_map(const Vector & z) const
  {
    return Eigen::Map<const Matrix>(z.data(), num_nodes(), state_dim());
  }

  void check_size(const Vector & z) const
  {
    if (z.size() != dimension()) { throw InvalidArgument("NlpProblem: decision vector has wrong length"); }
  }

  CollocationGrid grid_;
  Mlp net_;
  Matrix y_obs_;
  double lambda_;
  Bounds bounds_;
  double prox_rho_{0.0};
  Vector prox_center_;
};

}  // namespace colnode
