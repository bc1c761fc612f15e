#pragma once

// Fully connected network used as the right-hand side f_theta(y, t) of a
// neural ODE, with analytic input and parameter Jacobians.
//
// Parameter layout (public contract, shared with the NLP and checkpoints):
// for every layer in order, the fan_out x fan_in weight matrix in row-major
// order followed by the fan_out bias vector.

#include "colnode/core.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace colnode {

enum class Activation { tanh, identity };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string & s)
{
  if (s == "tanh") { return Activation::tanh; }
  if (s == "identity") { return Activation::identity; }
  throw InvalidArgument("unknown activation '" + s + "'");
}

inline Index param_count(const std::vector<Index> & layer_sizes)
{
  Index count = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    count += layer_sizes[l - 1] * layer_sizes[l] + layer_sizes[l];
  }
  return count;
}

/// Layer widths for a d-state network with the given hidden widths.
inline std::vector<Index> architecture(Index state_dim, const std::vector<Index> & hidden, bool time_input)
{
  std::vector<Index> sizes;
  sizes.push_back(state_dim + (time_input ? 1 : 0));
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(state_dim);
  return sizes;
}

struct Mlp
{
  std::vector<Index> layer_sizes;
  Activation activation{Activation::tanh};  ///< hidden layers; the output layer is linear
  bool time_input{false};                   ///< append t to the state input
  Vector theta;

  Index state_dim() const { return layer_sizes.back(); }
  Index input_dim() const { return layer_sizes.front(); }
  Index num_layers() const { return static_cast<Index>(layer_sizes.size()) - 1; }
  Index param_count() const { return colnode::param_count(layer_sizes); }

  /// Throws InvalidArgument unless the architecture and theta are consistent.
  void validate() const
  {
    detail::require(layer_sizes.size() >= 3, "Mlp: need at least one hidden layer");
    for (auto w : layer_sizes) { detail::require(w >= 1, "Mlp: layer widths must be >= 1"); }
    detail::require(input_dim() == state_dim() + (time_input ? 1 : 0),
                    "Mlp: input width must equal state width (+1 with time input)");
    detail::require(theta.size() == param_count(), "Mlp: theta length does not match architecture");
  }

  /// Offset into theta of layer l's weights; its bias follows the weights.
  Index weight_offset(Index l) const
  {
    Index off = 0;
    for (Index k = 0; k < l; ++k) { off += layer_sizes[k] * layer_sizes[k + 1] + layer_sizes[k + 1]; }
    return off;
  }
};

inline Mlp make_mlp(std::vector<Index> layer_sizes, bool time_input, Activation act = Activation::tanh)
{
  Mlp net;
  net.layer_sizes = std::move(layer_sizes);
  net.time_input  = time_input;
  net.activation  = act;
  net.theta       = Vector::Zero(param_count(net.layer_sizes));
  net.validate();
  return net;
}

/// Glorot-uniform weights on [-sqrt(6/(fan_in+fan_out)), +sqrt(...)], zero biases.
inline Vector xavier_init(const std::vector<Index> & layer_sizes, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  Vector theta(param_count(layer_sizes));
  Index off = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    const Index fan_in  = layer_sizes[l - 1];
    const Index fan_out = layer_sizes[l];
    const double limit  = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index k = 0; k < fan_in * fan_out; ++k) { theta[off++] = dist(rng); }
    for (Index k = 0; k < fan_out; ++k) { theta[off++] = 0.0; }
  }
  return theta;
}

namespace detail {

using ConstRowMap = Eigen::Map<const Matrix>;

inline double act(Activation a, double x) { return a == Activation::tanh ? std::tanh(x) : x; }

// derivative expressed through the activation output
inline double act_deriv_from_output(Activation a, double out) { return a == Activation::tanh ? 1.0 - out * out : 1.0; }

}  // namespace detail

/// Activations of one forward pass, kept for reverse accumulation.
struct ForwardCache
{
  std::vector<Vector> outputs;  ///< outputs[0] is the network input, outputs[L] the network output
};

inline Vector network_input(const Mlp & net, const Eigen::Ref<const Vector> & y, double t)
{
  if (y.size() != net.state_dim()) {
    throw InvalidArgument("Mlp: state has dimension " + std::to_string(y.size()) + ", expected "
                          + std::to_string(net.state_dim()));
  }
  Vector in(net.input_dim());
  in.head(y.size()) = y;
  if (net.time_input) { in[y.size()] = t; }
  return in;
}

inline const Vector & forward_cached(const Mlp & net, const Eigen::Ref<const Vector> & y, double t,
                                     ForwardCache & cache)
{
  const Index L = net.num_layers();
  cache.outputs.resize(static_cast<std::size_t>(L + 1));
  cache.outputs[0] = network_input(net, y, t);
  Index off = 0;
  for (Index l = 0; l < L; ++l) {
    const Index fan_in  = net.layer_sizes[l];
    const Index fan_out = net.layer_sizes[l + 1];
    detail::ConstRowMap W(net.theta.data() + off, fan_out, fan_in);
    Eigen::Map<const Vector> b(net.theta.data() + off + fan_in * fan_out, fan_out);
    off += fan_in * fan_out + fan_out;

    Vector z = W * cache.outputs[l] + b;
    if (l + 1 < L) {
      for (Index k = 0; k < fan_out; ++k) { z[k] = detail::act(net.activation, z[k]); }
    }
    cache.outputs[l + 1] = std::move(z);
  }
  return cache.outputs[L];
}

/// f_theta(y, t).
inline Vector forward(const Mlp & net, const Eigen::Ref<const Vector> & y, double t)
{
  ForwardCache cache;
  return forward_cached(net, y, t, cache);
}

/**
 * @brief Reverse pass for the cotangent v of the network output.
 *
 * Returns v^T df/d(input) over the full input (state, then t if present) and
 * adds v^T df/dtheta into grad_theta when it is non-empty.
 */
inline Vector backward(const Mlp & net, const ForwardCache & cache, const Eigen::Ref<const Vector> & v,
                       std::span<double> grad_theta)
{
  const Index L = net.num_layers();
  Vector delta  = v;
  for (Index l = L - 1; l >= 0; --l) {
    const Index fan_in  = net.layer_sizes[l];
    const Index fan_out = net.layer_sizes[l + 1];
    const Index off     = net.weight_offset(l);
    detail::ConstRowMap W(net.theta.data() + off, fan_out, fan_in);

    if (!grad_theta.empty()) {
      Eigen::Map<Matrix> gW(grad_theta.data() + off, fan_out, fan_in);
      Eigen::Map<Vector> gb(grad_theta.data() + off + fan_in * fan_out, fan_out);
      gW.noalias() += delta * cache.outputs[l].transpose();
      gb += delta;
    }
    Vector next = W.transpose() * delta;
    if (l > 0) {
      const Vector & a = cache.outputs[l];
      for (Index k = 0; k < fan_in; ++k) { next[k] *= detail::act_deriv_from_output(net.activation, a[k]); }
    }
    delta = std::move(next);
  }
  return delta;
}

struct NetJacobians
{
  Vector value;   ///< f_theta(y, t)
  Matrix d_state; ///< d x d
  Matrix d_theta; ///< d x |theta|
};

/// Value plus both Jacobians from one forward pass and d reverse passes.
inline NetJacobians jacobians(const Mlp & net, const Eigen::Ref<const Vector> & y, double t)
{
  ForwardCache cache;
  const Index d = net.state_dim();
  NetJacobians out;
  out.value = forward_cached(net, y, t, cache);
  out.d_state.resize(d, d);
  out.d_theta = Matrix::Zero(d, net.param_count());
  Vector e = Vector::Zero(d);
  for (Index k = 0; k < d; ++k) {
    e.setZero();
    e[k]          = 1.0;
    Vector g_in   = backward(net, cache, e, std::span<double>(out.d_theta.row(k).data(), out.d_theta.cols()));
    out.d_state.row(k) = g_in.head(d).transpose();
  }
  return out;
}

/// df/dy, d x d.
inline Matrix jacobian_input(const Mlp & net, const Eigen::Ref<const Vector> & y, double t)
{
  return jacobians(net, y, t).d_state;
}

/// df/dtheta, d x |theta|, columns in parameter-layout order.
inline Matrix jacobian_params(const Mlp & net, const Eigen::Ref<const Vector> & y, double t)
{
  return jacobians(net, y, t).d_theta;
}

/// Row i of the result is forward(net, Y.row(i), ts[i]).
inline Matrix batch_forward(const Mlp & net, const Matrix & Y, const Vector & ts)
{
  if (Y.rows() != ts.size()) { throw InvalidArgument("batch_forward: row count of Y must match ts"); }
  if (Y.cols() != net.state_dim()) { throw InvalidArgument("batch_forward: state width mismatch"); }
  Matrix out(Y.rows(), net.state_dim());
  ForwardCache cache;
  for (Index i = 0; i < Y.rows(); ++i) { out.row(i) = forward_cached(net, Y.row(i).transpose(), ts[i], cache).transpose(); }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: plain text, one header line, key lines, then theta values with
// 17 significant digits, one per line.

inline void write_checkpoint(std::ostream & os, const Mlp & net)
{
  net.validate();
  os << "colnode-checkpoint 1\n";
  os << "layer_sizes";
  for (auto w : net.layer_sizes) { os << ' ' << w; }
  os << "\ntime_input " << (net.time_input ? 1 : 0) << "\nactivation " << to_string(net.activation)
     << "\ntheta " << net.theta.size() << '\n';
  os << std::setprecision(17);
  for (Index i = 0; i < net.theta.size(); ++i) { os << net.theta[i] << '\n'; }
}

inline Mlp read_checkpoint(std::istream & is)
{
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "colnode-checkpoint" || version != 1) {
    throw IoError("checkpoint: bad header");
  }
  Mlp net;
  std::string key;
  Index n_theta = -1;
  std::string line;
  std::getline(is, line);
  while (n_theta < 0 && std::getline(is, line)) {
    std::istringstream ls(line);
    ls >> key;
    if (key == "layer_sizes") {
      Index w = 0;
      while (ls >> w) { net.layer_sizes.push_back(w); }
    } else if (key == "time_input") {
      int flag = 0;
      ls >> flag;
      net.time_input = flag != 0;
    } else if (key == "activation") {
      std::string a;
      ls >> a;
      net.activation = activation_from_string(a);
    } else if (key == "theta") {
      ls >> n_theta;
    } else {
      throw IoError("checkpoint: unknown key '" + key + "'");
    }
  }
  if (n_theta < 0) { throw IoError("checkpoint: missing theta section"); }
  net.theta.resize(n_theta);
  for (Index i = 0; i < n_theta; ++i) {
    if (!(is >> net.theta[i])) { throw IoError("checkpoint: truncated theta"); }
  }
  try {
    net.validate();
  } catch (const InvalidArgument & e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return net;
}

inline void save_checkpoint(const std::string & path, const Mlp & net)
{
  std::ofstream os(path);
  if (!os) { throw IoError("cannot open '" + path + "' for writing"); }
  write_checkpoint(os, net);
}

inline Mlp load_checkpoint(const std::string & path)
{
  std::ifstream is(path);
  if (!is) { throw IoError("cannot open checkpoint '" + path + "'"); }
  return read_checkpoint(is);
}

}  // namespace colnode
