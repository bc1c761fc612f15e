#include "colnode/nlp.hpp"
#include "colnode/train.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <limits>
#include <sstream>

using namespace colnode;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Small hand-written NLPs; the objective curvature hook is optional.
struct Toy
{
  Index n{0};
  Index m{0};
  Vector lo, hi;
  std::function<double(const Vector &)> f;
  std::function<Vector(const Vector &)> grad;
  std::function<Vector(const Vector &)> c;    ///< empty: no constraints
  std::function<Matrix(const Vector &)> jac;

  Index dimension() const { return n; }
  Index num_constraints() const { return m; }
  const Vector & lower() const { return lo; }
  const Vector & upper() const { return hi; }
  double objective(const Vector & z) const { return f(z); }
  Vector objective_gradient(const Vector & z) const { return grad(z); }
  Vector constraints(const Vector & z) const { return c ? c(z) : Vector(Vector::Zero(m)); }
  Matrix constraint_jacobian(const Vector & z) const { return jac ? jac(z) : Matrix(Matrix::Zero(m, n)); }
};

struct ToyWithCurvature : Toy
{
  Vector hdiag;
  Vector objective_hessian_diagonal(const Vector &) const { return hdiag; }
};

Toy shifted_quadratic(const Vector & a)
{
  Toy t;
  t.n    = a.size();
  t.lo   = Vector::Constant(t.n, -kInf);
  t.hi   = Vector::Constant(t.n, kInf);
  t.f    = [a](const Vector & z) { return (z - a).squaredNorm(); };
  t.grad = [a](const Vector & z) { return Vector(2.0 * (z - a)); };
  return t;
}

template <class T>
T equality_qp()
{
  T t;
  t.n    = 2;
  t.m    = 1;
  t.lo   = Vector::Constant(2, -10.0);
  t.hi   = Vector::Constant(2, 10.0);
  t.f    = [](const Vector & z) { return (z.array() - 1.0).square().sum(); };
  t.grad = [](const Vector & z) { return Vector(2.0 * (z.array() - 1.0)); };
  t.c    = [](const Vector & z) { return Vector(Vector::Constant(1, z[0] + z[1] - 1.0)); };
  t.jac  = [](const Vector &) { return Matrix(Matrix::Ones(1, 2)); };
  return t;
}

// min z1 + z2 on the circle z1^2 + z2^2 = 2; the minimizer is (-1, -1), mu = 1/2.
Toy circle_problem()
{
  Toy t;
  t.n    = 2;
  t.m    = 1;
  t.lo   = Vector::Constant(2, -5.0);
  t.hi   = Vector::Constant(2, 5.0);
  t.f    = [](const Vector & z) { return z[0] + z[1]; };
  t.grad = [](const Vector &) { return Vector(Vector::Ones(2)); };
  t.c    = [](const Vector & z) { return Vector(Vector::Constant(1, z.squaredNorm() - 2.0)); };
  t.jac  = [](const Vector & z) { return Matrix(2.0 * z.transpose()); };
  return t;
}

Vector vec2(double a, double b)
{
  Vector v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST(Solve, UnconstrainedQuadratic)
{
  Vector a(4);
  a << 1.0, -2.0, 0.5, 3.0;
  for (auto inner : {InnerMethod::lbfgs, InnerMethod::gauss_newton}) {
    ToyWithCurvature t;
    static_cast<Toy &>(t) = shifted_quadratic(a);
    t.hdiag               = Vector::Constant(4, 2.0);
    SolverConfig cfg;
    cfg.inner            = inner;
    const SolveReport r  = solve(t, Vector::Constant(4, 7.0), cfg);
    EXPECT_EQ(r.status, SolveStatus::converged);
    EXPECT_LE((r.z_final - a).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Solve, EqualityConstrainedQuadratic)
{
  {
    const Toy t         = equality_qp<Toy>();
    const SolveReport r = solve(t, vec2(3.0, -4.0));
    EXPECT_EQ(r.status, SolveStatus::converged) << r.message;
    EXPECT_NEAR(r.z_final[0], 0.5, 1e-6);
    EXPECT_NEAR(r.z_final[1], 0.5, 1e-6);
    EXPECT_NEAR(r.multipliers[0], 1.0, 1e-5);
  }
  {
    ToyWithCurvature t = equality_qp<ToyWithCurvature>();
    t.hdiag            = Vector::Constant(2, 2.0);
    const SolveReport r = solve(t, vec2(3.0, -4.0));
    EXPECT_EQ(r.status, SolveStatus::converged) << r.message;
    EXPECT_NEAR(r.z_final[0], 0.5, 1e-6);
    EXPECT_NEAR(r.z_final[1], 0.5, 1e-6);
  }
}

TEST(Solve, ActiveBoundIsRespectedExactly)
{
  Toy t  = shifted_quadratic(vec2(2.0, -3.0));
  t.lo   = vec2(-1.0, -1.0);
  t.hi   = vec2(1.0, 1.0);
  const auto out = solve_with_checkpoints(t, vec2(0.3, 0.3), SolverConfig{}, 1e-9);
  EXPECT_EQ(out.report.status, SolveStatus::converged);
  EXPECT_EQ(out.report.z_final[0], 1.0);
  EXPECT_EQ(out.report.z_final[1], -1.0);
  for (const auto & s : out.snapshots) {
    EXPECT_TRUE((s.z.array() >= t.lo.array()).all());
    EXPECT_TRUE((s.z.array() <= t.hi.array()).all());
  }
}

TEST(Solve, InitialPointOutsideBoxIsProjected)
{
  Toy t = shifted_quadratic(vec2(0.0, 0.0));
  t.lo  = vec2(-1.0, -1.0);
  t.hi  = vec2(1.0, 1.0);
  SolverConfig cfg;
  cfg.max_outer_iters = 1;
  cfg.max_inner_iters = 1;
  const auto out      = solve_with_checkpoints(t, vec2(50.0, -50.0), cfg, 1e-9);
  for (const auto & s : out.snapshots) { EXPECT_LE(s.z.cwiseAbs().maxCoeff(), 1.0); }
}

TEST(Solve, NonconvexKktSpotCheck)
{
  const Toy t = circle_problem();
  SolverConfig cfg;
  cfg.inner           = InnerMethod::lbfgs;
  const SolveReport r = solve(t, vec2(-0.5, -1.5), cfg);
  ASSERT_EQ(r.status, SolveStatus::converged) << r.message;
  EXPECT_LE(r.max_constraint_violation, cfg.constraint_tol);
  EXPECT_NEAR(r.z_final[0], -1.0, 1e-5);
  EXPECT_NEAR(r.z_final[1], -1.0, 1e-5);
  const Vector kkt = t.grad(r.z_final) + t.jac(r.z_final).transpose() * r.multipliers;
  EXPECT_LE(detail::projected_gradient_norm(r.z_final, kkt, t.lo, t.hi), 10.0 * cfg.opt_tol);
}

TEST(Solve, Deterministic)
{
  const Toy t = circle_problem();
  SolverConfig cfg;
  cfg.inner            = InnerMethod::lbfgs;
  const SolveReport a  = solve(t, vec2(0.2, -1.5), cfg);
  const SolveReport b  = solve(t, vec2(0.2, -1.5), cfg);
  EXPECT_EQ(a.z_final, b.z_final);
  EXPECT_EQ(a.multipliers, b.multipliers);
  EXPECT_EQ(a.outer_iters, b.outer_iters);
  EXPECT_EQ(a.inner_iters_total, b.inner_iters_total);
  EXPECT_EQ(a.status, b.status);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].objective, b.trace[i].objective);
    EXPECT_EQ(a.trace[i].max_violation, b.trace[i].max_violation);
    EXPECT_EQ(a.trace[i].penalty, b.trace[i].penalty);
  }
}

TEST(Solve, InfeasibleProblemHitsPenaltyCap)
{
  // z1 = 5 is outside the box, so feasibility never improves.
  Toy t  = shifted_quadratic(vec2(0.0, 0.0));
  t.m    = 1;
  t.lo   = vec2(-1.0, -1.0);
  t.hi   = vec2(1.0, 1.0);
  t.c    = [](const Vector & z) { return Vector(Vector::Constant(1, z[0] - 5.0)); };
  t.jac  = [](const Vector &) { return Matrix(vec2(1.0, 0.0).transpose()); };
  const SolveReport r = solve(t, vec2(0.0, 0.0));
  EXPECT_EQ(r.status, SolveStatus::numerical_failure);
  EXPECT_FALSE(r.trace.empty());
  EXPECT_NEAR(r.max_constraint_violation, 4.0, 1e-9);
}

TEST(Solve, IterationLimitStatus)
{
  const Toy t = circle_problem();
  SolverConfig cfg;
  cfg.inner           = InnerMethod::lbfgs;
  cfg.max_outer_iters = 1;
  cfg.max_inner_iters = 1;
  const SolveReport r = solve(t, vec2(4.0, 4.0), cfg);
  const auto expected = r.max_constraint_violation <= cfg.constraint_tol ? SolveStatus::feasible_suboptimal
                                                                         : SolveStatus::iteration_limit;
  EXPECT_EQ(r.status, expected);
  EXPECT_EQ(r.outer_iters, 1);
  EXPECT_EQ(r.trace.size(), 1u);
}

TEST(Solve, NonFiniteCallbacksNeverCrash)
{
  Toy start_bad = shifted_quadratic(vec2(0.0, 0.0));
  start_bad.f   = [](const Vector &) { return std::nan(""); };
  const SolveReport r1 = solve(start_bad, vec2(1.0, 1.0));
  EXPECT_EQ(r1.status, SolveStatus::numerical_failure);
  EXPECT_FALSE(r1.trace.empty());

  // NaN everywhere except the start point: every step fails its line search.
  Toy trap   = shifted_quadratic(vec2(3.0, 3.0));
  trap.f     = [](const Vector & z) { return z == vec2(1.0, 1.0) ? 8.0 : std::nan(""); };
  const SolveReport r2 = solve(trap, vec2(1.0, 1.0));
  EXPECT_NE(r2.status, SolveStatus::converged);
  EXPECT_TRUE(r2.z_final.allFinite());
}

TEST(Solve, DetectsInconsistentJacobian)
{
  Toy t = equality_qp<Toy>();
  t.jac = [](const Vector &) { return Matrix(vec2(1.0, -1.0).transpose()); };
  EXPECT_THROW(solve(t, vec2(0.3, 0.1)), JacobianMismatch);
  SolverConfig cfg;
  cfg.check_jacobian = false;
  EXPECT_NO_THROW(solve(t, vec2(0.3, 0.1), cfg));
}

TEST(Solve, RejectsBadConfig)
{
  const Toy t = equality_qp<Toy>();
  SolverConfig cfg;
  cfg.rho_growth = 1.0;
  EXPECT_THROW(solve(t, vec2(0.0, 0.0), cfg), InvalidArgument);
  cfg            = {};
  cfg.opt_tol    = 0.0;
  EXPECT_THROW(solve(t, vec2(0.0, 0.0), cfg), InvalidArgument);
  EXPECT_THROW(solve(t, Vector::Zero(3)), InvalidArgument);
}

TEST(Solve, TimeLimitStatus)
{
  const Toy t = circle_problem();
  SolverConfig cfg;
  cfg.time_limit      = 0.0;
  const SolveReport r = solve(t, vec2(2.0, 2.0), cfg);
  EXPECT_EQ(r.status, SolveStatus::time_limit);
}

TEST(Checkpoints, LongCadenceGivesOneTerminalSnapshot)
{
  const Toy t    = equality_qp<Toy>();
  const auto out = solve_with_checkpoints(t, vec2(3.0, -4.0), SolverConfig{}, 1e6);
  ASSERT_EQ(out.snapshots.size(), 1u);
  EXPECT_EQ(out.snapshots.back().z, out.report.z_final);
  EXPECT_THROW(solve_with_checkpoints(t, vec2(0.0, 0.0), SolverConfig{}, 0.0), InvalidArgument);
}

TEST(Checkpoints, ElapsedIsMonotoneAndBufferDropsOldest)
{
  const Toy t    = circle_problem();
  SolverConfig cfg;
  cfg.inner      = InnerMethod::lbfgs;
  const auto out = solve_with_checkpoints(t, vec2(2.0, 0.5), cfg, 1e-9, 3);
  ASSERT_EQ(out.snapshots.size(), 3u);
  EXPECT_GT(out.dropped, 0u);
  for (std::size_t i = 1; i < out.snapshots.size(); ++i) {
    EXPECT_GE(out.snapshots[i].elapsed_s, out.snapshots[i - 1].elapsed_s);
  }
  EXPECT_EQ(out.snapshots.back().z, out.report.z_final);

  SnapshotBuffer buf(2);
  buf.push({1.0, Vector::Zero(1)});
  buf.push({2.0, Vector::Zero(1)});
  buf.push({3.0, Vector::Zero(1)});
  EXPECT_EQ(buf.dropped(), 1u);
  const auto items = buf.take();
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items.front().elapsed_s, 2.0);
  EXPECT_EQ(buf.size(), 0u);
}

TEST(Trace, CsvHeaderAndRows)
{
  std::ostringstream os;
  write_trace_csv(os, {{1, 0.5, 2.0, 1e-3, 10.0}, {2, 1.0, 1.5, 1e-7, 10.0}});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "outer_iter,elapsed_s,objective,max_violation,penalty");
  std::getline(is, line);
  EXPECT_EQ(line, "1,0.5,2,0.001,10");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 2), "2,");
}

TEST(Solve, SmallVanDerPolCollocationConverges)
{
  // Noise-free forced Van der Pol samples at the same density as the full-size setting.
  const Index N  = 50;
  const double T = 10.0 * 49.0 / 199.0;
  const OdeSystem sys = vdp_system(1.0, 1.0, 1.0);
  Vector y0(2);
  y0 << 0.0, 1.0;
  Dataset data;
  data.times = Vector::LinSpaced(N, 0.0, T);
  data.y_obs = integrate(sys.rhs, y0, data.times,
                         [&](Index k) { return substeps_for(data.times[k + 1] - data.times[k], 0.001); }, Integrator::rk4)
                   .states;

  const auto sizes = architecture(2, {8}, false);
  Mlp net          = make_mlp(sizes, false);
  net.theta        = xavier_init(sizes, 0);
  CollocationConfig cfg;
  const CollocationResult res = train_collocation(net, data, cfg);
  EXPECT_EQ(res.report.status, SolveStatus::converged) << res.report.message;
  EXPECT_LE(res.report.max_constraint_violation, 1e-6);
}
