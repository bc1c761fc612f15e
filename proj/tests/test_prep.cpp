#include "colnode/prep.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace colnode;

namespace {

Dataset make_dataset(const Vector & times, const std::function<double(double, Index)> & f, Index d)
{
  Dataset data;
  data.times = times;
  data.y_obs.resize(times.size(), d);
  for (Index i = 0; i < times.size(); ++i) {
    for (Index k = 0; k < d; ++k) { data.y_obs(i, k) = f(times[i], k); }
  }
  return data;
}

double rmse(const Matrix & a, const Matrix & b)
{
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

std::filesystem::path temp_dir(const std::string & name)
{
  auto dir = std::filesystem::temp_directory_path() / ("colnode_test_prep_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(AddNoise, ZeroSigmaIsIdentity)
{
  const Dataset clean = make_dataset(Vector::LinSpaced(10, 0.0, 1.0), [](double t, Index k) { return t + k; }, 2);
  const Dataset noisy = add_noise(clean, 0.0, 1);
  EXPECT_EQ(noisy.y_obs, clean.y_obs);
  EXPECT_EQ(noisy.times, clean.times);
  ASSERT_NE(noisy.meta.get("noise.sigma"), nullptr);
  EXPECT_EQ(*noisy.meta.get("noise.sigma"), "0");
}

TEST(AddNoise, SampleStdAndDeterminism)
{
  const Dataset clean = make_dataset(Vector::LinSpaced(200, 0.0, 10.0), [](double t, Index k) { return std::sin(t + k); }, 2);
  int in_range = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Dataset noisy = add_noise(clean, 0.1, seed);
    const Matrix diff   = noisy.y_obs - clean.y_obs;
    const double mean   = diff.mean();
    const double sd     = std::sqrt((diff.array() - mean).square().sum() / static_cast<double>(diff.size() - 1));
    in_range += sd >= 0.08 && sd <= 0.12 ? 1 : 0;
  }
  EXPECT_GE(in_range, 99);
  EXPECT_EQ(add_noise(clean, 0.1, 7).y_obs, add_noise(clean, 0.1, 7).y_obs);
  EXPECT_NE(add_noise(clean, 0.1, 7).y_obs, add_noise(clean, 0.1, 8).y_obs);
  EXPECT_THROW(add_noise(clean, -0.1, 0), InvalidArgument);
}

TEST(Resample, ExactOnCoincidentNodesAndAffineData)
{
  const CollocationGrid grid = build_grid(9, 0.0, 2.0);
  Dataset nodes;
  nodes.times = grid.nodes_time;
  nodes.y_obs = Matrix::Random(9, 2);
  EXPECT_EQ(resample_to_grid(nodes, grid).y_obs, nodes.y_obs);

  const Dataset affine = make_dataset(Vector::LinSpaced(7, 0.0, 2.0), [](double t, Index k) { return 3.0 * t - k; }, 2);
  const Dataset out    = resample_to_grid(affine, grid);
  for (Index i = 0; i < grid.n; ++i) {
    EXPECT_NEAR(out.y_obs(i, 0), 3.0 * grid.nodes_time[i], 1e-13);
    EXPECT_NEAR(out.y_obs(i, 1), 3.0 * grid.nodes_time[i] - 1.0, 1e-13);
  }
  EXPECT_EQ(out.times, grid.nodes_time);
}

TEST(Resample, TwoPointMidpoint)
{
  Dataset data;
  data.times = Vector::LinSpaced(2, 0.0, 1.0);
  data.y_obs = Matrix(2, 1);
  data.y_obs << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(linear_interp(data.times, data.y_obs, 0.5)[0], 0.5);
  const Dataset out = resample_to_grid(data, build_grid(3, 0.0, 1.0));
  EXPECT_DOUBLE_EQ(out.y_obs(1, 0), 0.5);
}

TEST(Resample, QuadraticErrorBound)
{
  const Dataset dense = make_dataset(Vector::LinSpaced(401, 0.0, 2.0), [](double t, Index) { return t * t; }, 1);
  const CollocationGrid grid = build_grid(50, 0.0, 2.0);
  const Dataset out          = resample_to_grid(dense, grid);
  double worst               = 0.0;
  for (Index i = 0; i < grid.n; ++i) { worst = std::max(worst, std::abs(out.y_obs(i, 0) - std::pow(grid.nodes_time[i], 2))); }
  EXPECT_LE(worst, 1e-4);
}

TEST(Resample, GridOutsideDataRangeThrows)
{
  const Dataset data = make_dataset(Vector::LinSpaced(5, 0.0, 1.0), [](double t, Index) { return t; }, 1);
  EXPECT_THROW(resample_to_grid(data, build_grid(5, 0.0, 1.5)), InvalidArgument);
  EXPECT_THROW(resample_to_grid(data, build_grid(5, -0.1, 1.0)), InvalidArgument);
}

TEST(Loess, ReproducesLinearData)
{
  const Dataset lin = make_dataset(Vector::LinSpaced(200, 0.0, 10.0), [](double t, Index k) { return 0.3 * t - 2.0 + k; }, 2);
  for (double span : {0.05, 0.1, 0.5, 1.0}) {
    EXPECT_LE((loess_smooth(lin, span).y_obs - lin.y_obs).cwiseAbs().maxCoeff(), 1e-10) << span;
  }
  std::mt19937_64 rng(4);
  Vector irregular(60);
  double t = 0.0;
  for (Index i = 0; i < 60; ++i) {
    t += 0.05 + std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    irregular[i] = t;
  }
  const Dataset lin2 = make_dataset(irregular, [](double s, Index) { return 1.5 - 0.7 * s; }, 1);
  EXPECT_LE((loess_smooth(lin2, 0.2).y_obs - lin2.y_obs).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Loess, SmoothingReducesVarianceAndError)
{
  const Dataset flat = make_dataset(Vector::LinSpaced(200, 0.0, 10.0), [](double, Index) { return 2.0; }, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset noisy  = add_noise(flat, 0.1, seed);
    const Dataset smooth = loess_smooth(noisy, 0.1);
    auto var = [](const Matrix & m) { return (m.array() - m.mean()).square().mean(); };
    EXPECT_LE(var(smooth.y_obs), var(noisy.y_obs));
  }

  const Dataset sine   = make_dataset(Vector::LinSpaced(200, 0.0, 10.0), [](double s, Index) { return std::sin(s); }, 1);
  const Dataset noisy  = add_noise(sine, 0.1, 3);
  const Dataset smooth = loess_smooth(noisy, 0.1);
  EXPECT_LT(rmse(smooth.y_obs, sine.y_obs), rmse(noisy.y_obs, sine.y_obs));
}

TEST(Loess, RejectsTinyWindows)
{
  const Dataset data = make_dataset(Vector::LinSpaced(20, 0.0, 1.0), [](double t, Index) { return t; }, 1);
  EXPECT_THROW(loess_smooth(data, 0.1), InvalidArgument);
  EXPECT_THROW(loess_smooth(data, 0.0), InvalidArgument);
  EXPECT_THROW(loess_smooth(data, 1.5), InvalidArgument);
  EXPECT_NO_THROW(loess_smooth(data, 0.15));
}

TEST(InitStates, LinearDataAndShape)
{
  const Dataset lin          = make_dataset(Vector::LinSpaced(200, 0.0, 10.0), [](double t, Index k) { return t * (k + 1); }, 2);
  const CollocationGrid grid = build_grid(37, 0.0, 10.0);
  const Matrix Y             = init_states(lin, grid);
  ASSERT_EQ(Y.rows(), 37);
  ASSERT_EQ(Y.cols(), 2);
  for (Index i = 0; i < grid.n; ++i) {
    EXPECT_NEAR(Y(i, 0), grid.nodes_time[i], 1e-10);
    EXPECT_NEAR(Y(i, 1), 2.0 * grid.nodes_time[i], 1e-10);
  }
}

TEST(InitStates, CleanVanDerPolWithinResamplingError)
{
  const OdeSystem sys = vdp_system(1.0, 1.0, 1.0);
  Vector y0(2);
  y0 << 0.0, 1.0;
  const Vector times = Vector::LinSpaced(200, 0.0, 10.0);
  Dataset data;
  data.times = times;
  data.y_obs = rk4_integrate(sys, y0, times, 20).states;
  const CollocationGrid grid = build_grid(50, 0.0, 10.0);

  // truth at the nodes from a fine integration
  Matrix truth(grid.n, 2);
  for (Index i = 0; i < grid.n; ++i) {
    if (grid.nodes_time[i] == 0.0) {
      truth.row(i) = y0.transpose();
      continue;
    }
    Vector tt(2);
    tt << 0.0, grid.nodes_time[i];
    truth.row(i) = rk4_integrate(sys, y0, tt, 4000).states.row(1);
  }
  const double resample_err = (resample_to_grid(data, grid).y_obs - truth).cwiseAbs().maxCoeff();
  // The composition bound needs the narrowest admissible window (3 points);
  // wider windows add LOESS bias on the steep segments of the limit cycle.
  const double init_err = (init_states(data, grid, 3.0 / 200.0) - truth).cwiseAbs().maxCoeff();
  EXPECT_GT(resample_err, 0.0);
  EXPECT_LE(init_err, 2.0 * resample_err);
}

TEST(DatasetType, ValidateAndSlice)
{
  Dataset data = make_dataset(Vector::LinSpaced(10, 0.0, 9.0), [](double t, Index) { return t; }, 1);
  EXPECT_NO_THROW(data.validate());
  const Dataset s = data.slice(3, 4);
  EXPECT_EQ(s.size(), 4);
  EXPECT_EQ(s.times[0], 3.0);
  EXPECT_EQ(s.meta.history.back(), "slice(3,4)");
  EXPECT_THROW(data.slice(8, 4), InvalidArgument);
  data.times[5] = data.times[4];
  EXPECT_THROW(data.validate(), InvalidArgument);
}

TEST(DatasetFiles, RoundTripWithProvenance)
{
  const auto dir = temp_dir("roundtrip");
  Dataset data   = make_dataset(Vector::LinSpaced(12, 0.0, 1.1), [](double t, Index k) { return std::exp(t) + k / 3.0; }, 2);
  data.meta.set("system", "vdp");
  data = add_noise(data, 0.1, 11);
  const Dataset smooth = loess_smooth(data, 0.5);
  const std::string path = (dir / "data.csv").string();
  save_dataset(path, smooth);
  EXPECT_TRUE(std::filesystem::exists(path + ".meta.json"));
  const Dataset back = load_dataset(path);
  EXPECT_EQ(back.times, smooth.times);
  EXPECT_EQ(back.y_obs, smooth.y_obs);
  EXPECT_EQ(back.meta.params, smooth.meta.params);
  EXPECT_EQ(back.meta.history, smooth.meta.history);
  ASSERT_EQ(back.meta.history.size(), 2u);
  EXPECT_EQ(back.meta.history[0].rfind("add_noise", 0), 0u);
  EXPECT_EQ(back.meta.history[1].rfind("loess_smooth", 0), 0u);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFiles, MissingOrCorruptFiles)
{
  const auto dir = temp_dir("corrupt");
  EXPECT_THROW(load_dataset((dir / "missing.csv").string()), IoError);
  const std::string path = (dir / "d.csv").string();
  save_dataset(path, make_dataset(Vector::LinSpaced(3, 0.0, 1.0), [](double t, Index) { return t; }, 1));
  {
    std::ofstream os(path + ".meta.json");
    os << "{not json";
  }
  EXPECT_THROW(load_dataset(path), IoError);
  std::filesystem::remove_all(dir);
}
