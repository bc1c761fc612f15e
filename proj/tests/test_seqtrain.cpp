#include "colnode/seqtrain.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace colnode;

namespace {

Dataset exponential_data(Index n, double t1)
{
  Dataset data;
  data.times = Vector::LinSpaced(n, 0.0, t1);
  data.y_obs = data.times.array().exp().matrix();
  return data;
}

// f(y) = w2 (w1 y + b1) + b2 with identity activation, so the slope is w2 w1.
Mlp scalar_linear(double w1, double w2)
{
  Mlp net = make_mlp({1, 1, 1}, false, Activation::identity);
  net.theta << w1, 0.0, w2, 0.0;
  return net;
}

Dataset vdp_data(Index n, double t1)
{
  const OdeSystem sys = vdp_system(1.0, 1.0, 1.0);
  Vector y0(2);
  y0 << 0.0, 1.0;
  Dataset data;
  data.times = Vector::LinSpaced(n, 0.0, t1);
  data.y_obs = rk4_integrate(sys, y0, data.times, 50).states;
  return data;
}

}  // namespace

TEST(SequentialLoss, GradientMatchesFiniteDifferences)
{
  const Dataset data = vdp_data(4, 0.6);  // three intervals
  for (auto method : {Integrator::rk4, Integrator::euler}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Mlp net   = make_mlp({3, 3, 2}, true);
      net.theta = xavier_init(net.layer_sizes, seed);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> N01;
      for (Index i = 0; i < net.theta.size(); ++i) { net.theta[i] += 0.3 * N01(rng); }
      SeqTrainConfig cfg;
      cfg.integrator = method;
      cfg.substeps   = 1;
      const Vector g = sequential_loss_gradient(net, data, cfg);
      for (Index j = 0; j < g.size(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(net.theta[j]));
        Mlp p = net, m = net;
        p.theta[j] += h;
        m.theta[j] -= h;
        const double fd = (sequential_loss(p, data, cfg) - sequential_loss(m, data, cfg)) / (2.0 * h);
        EXPECT_LE(std::abs(g[j] - fd) / std::max(1.0, std::abs(g[j])), 1e-5) << "param " << j;
      }
    }
  }
}

TEST(SequentialLoss, GradientWithSubstepsMatchesFiniteDifferences)
{
  const Dataset data = vdp_data(6, 1.0);
  Mlp net            = make_mlp({2, 4, 2}, false);
  net.theta          = xavier_init(net.layer_sizes, 9);
  SeqTrainConfig cfg;
  cfg.max_step   = 0.07;
  const Vector g = sequential_loss_gradient(net, data, cfg);
  for (Index j = 0; j < g.size(); ++j) {
    const double h = 1e-6;
    Mlp p = net, m = net;
    p.theta[j] += h;
    m.theta[j] -= h;
    const double fd = (sequential_loss(p, data, cfg) - sequential_loss(m, data, cfg)) / (2.0 * h);
    EXPECT_LE(std::abs(g[j] - fd) / std::max(1.0, std::abs(g[j])), 1e-5) << "param " << j;
  }
}

TEST(SequentialLoss, AgreesWithEvaluateMse)
{
  const Dataset data = vdp_data(30, 3.0);
  Mlp net            = make_mlp({2, 8, 2}, false);
  net.theta          = xavier_init(net.layer_sizes, 4);
  const double loss  = sequential_loss(net, data);
  const EvalResult e = evaluate_mse(net, data, data.y_obs.row(0).transpose());
  EXPECT_NEAR(loss, e.mse, 1e-12 * std::max(1.0, e.mse));
}

TEST(SequentialTrain, ScalarLinearSystemRecoversRate)
{
  const Dataset data = exponential_data(11, 1.0);
  SeqTrainConfig cfg;
  cfg.epochs         = 3000;
  cfg.adam.step_size = 1e-2;
  const SeqTrainResult res = sequential_train(scalar_linear(0.5, 0.5), data, cfg);
  EXPECT_EQ(res.status, SeqTrainStatus::completed);
  const double slope = jacobian_input(res.net, Vector::Zero(1), 0.0)(0, 0);
  const double shift = forward(res.net, Vector::Zero(1), 0.0)[0];
  EXPECT_NEAR(slope, 1.0, 1e-2);
  EXPECT_NEAR(shift, 0.0, 1e-2);
  ASSERT_EQ(res.trace.size(), 3001u);
  for (std::size_t i = 1; i < res.trace.size(); ++i) {
    EXPECT_LE(res.trace[i].value, res.trace[i - 1].value);
    EXPECT_GE(res.trace[i].elapsed_s, res.trace[i - 1].elapsed_s);
    EXPECT_EQ(res.trace[i].epoch, static_cast<Index>(i));
  }
}

TEST(SequentialTrain, ZeroEpochsReturnsNetUnchanged)
{
  const Dataset data = vdp_data(20, 2.0);
  Mlp net            = make_mlp({2, 8, 2}, false);
  net.theta          = xavier_init(net.layer_sizes, 2);
  SeqTrainConfig cfg;
  cfg.epochs               = 0;
  const SeqTrainResult res = sequential_train(net, data, cfg);
  EXPECT_EQ(res.net.theta, net.theta);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(res.trace[0].value, sequential_loss(net, data));
}

TEST(SequentialTrain, DivergentStartReportsStatus)
{
  Dataset data;
  data.times = Vector::LinSpaced(5, 0.0, 10.0);
  data.y_obs = Matrix::Ones(5, 1);
  SeqTrainConfig cfg;
  cfg.epochs               = 5;
  const SeqTrainResult res = sequential_train(scalar_linear(1e3, 1.0), data, cfg);
  EXPECT_EQ(res.status, SeqTrainStatus::diverged);
  ASSERT_FALSE(res.trace.empty());
  EXPECT_TRUE(std::isinf(res.trace[0].value));
}

TEST(SequentialTrain, TimeLimitAndValidation)
{
  const Dataset data = vdp_data(20, 2.0);
  Mlp net            = make_mlp({2, 8, 2}, false);
  net.theta          = xavier_init(net.layer_sizes, 2);
  SeqTrainConfig cfg;
  cfg.time_limit           = 0.0;
  const SeqTrainResult res = sequential_train(net, data, cfg);
  EXPECT_EQ(res.status, SeqTrainStatus::time_limit);

  SeqTrainConfig bad;
  bad.adam.step_size = 0.0;
  EXPECT_THROW(sequential_train(net, data, bad), InvalidArgument);
  SeqTrainConfig arch;
  arch.layer_sizes = {2, 32, 2};
  EXPECT_THROW(sequential_train(net, data, arch), InvalidArgument);
  EXPECT_THROW(sequential_train(make_mlp({1, 2, 1}, false), data, SeqTrainConfig{}), InvalidArgument);
}

TEST(SequentialTrain, ReducesVanDerPolLoss)
{
  const Dataset data = vdp_data(40, 4.0);
  Mlp net            = make_mlp({2, 8, 2}, false);
  net.theta          = xavier_init(net.layer_sizes, 0);
  SeqTrainConfig cfg;
  cfg.epochs               = 100;
  const SeqTrainResult res = sequential_train(net, data, cfg);
  EXPECT_LT(res.trace.back().value, 0.5 * res.trace.front().value);
  EXPECT_EQ(sequential_train(net, data, cfg).net.theta, res.net.theta);
}

TEST(Hybrid, EpochZeroValueIsCheckpointMse)
{
  const Dataset data = vdp_data(20, 2.0);
  Mlp ckpt           = make_mlp({2, 8, 2}, false);
  ckpt.theta         = xavier_init(ckpt.layer_sizes, 6);
  SeqTrainConfig cfg;
  cfg.epochs               = 0;
  const SeqTrainResult res = hybrid_pretrain_handoff(ckpt, data, cfg);
  EXPECT_EQ(res.net.theta, ckpt.theta);
  EXPECT_EQ(res.trace.front().value, evaluate_mse(ckpt, data, data.y_obs.row(0).transpose()).mse);

  cfg.epochs                = 30;
  const SeqTrainResult more = hybrid_pretrain_handoff(ckpt, data, cfg);
  EXPECT_LE(more.trace.back().value, more.trace.front().value);

  SeqTrainConfig arch;
  arch.layer_sizes = {3, 8, 2};
  EXPECT_THROW(hybrid_pretrain_handoff(ckpt, data, arch), InvalidArgument);
}

TEST(EvaluateMse, PerfectAndConstantPredictions)
{
  Mlp net   = make_mlp({3, 8, 2}, true);
  net.theta = xavier_init(net.layer_sizes, 12);
  Vector y0(2);
  y0 << 0.0, 1.0;
  Dataset data;
  data.times = Vector::LinSpaced(25, 0.0, 5.0);
  data.y_obs = predict(net, y0, data.times).states;
  EXPECT_EQ(evaluate_mse(net, data, y0).mse, 0.0);

  const Dataset test  = vdp_data(40, 4.0);
  const Mlp zero      = make_mlp({2, 8, 2}, false);
  const Vector start  = test.y_obs.row(0).transpose();
  const double closed = (test.y_obs.rowwise() - start.transpose()).squaredNorm() / 40.0;
  const EvalResult e  = evaluate_mse(zero, test, start, EvalMode::test);
  EXPECT_FALSE(e.diverged);
  EXPECT_GT(e.mse, 0.0);
  EXPECT_NEAR(e.mse, closed, 1e-14);
}

TEST(EvaluateMse, DivergedRolloutRanksWorst)
{
  Dataset data;
  data.times = Vector::LinSpaced(5, 0.0, 10.0);
  data.y_obs = Matrix::Ones(5, 1);
  const EvalResult e = evaluate_mse(scalar_linear(1e3, 1.0), data, Vector::Ones(1), EvalMode::test);
  EXPECT_TRUE(e.diverged);
  EXPECT_TRUE(std::isinf(e.mse));
  EXPECT_NE(e.diagnostic.find("test"), std::string::npos);
  EXPECT_THROW(evaluate_mse(make_mlp({2, 2, 2}, false), data, Vector::Ones(2)), InvalidArgument);
}

TEST(LossCsv, Format)
{
  std::ostringstream os;
  write_loss_csv(os, {{0, 0.0, 1.5}, {1, 0.25, 0.75}});
  EXPECT_EQ(os.str(), "iter,elapsed_s,value\n0,0,1.5\n1,0.25,0.75\n");
}
