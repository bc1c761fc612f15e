#pragma once

// Forced Van der Pol benchmark data and per-run seed derivation.

#include "colnode/odesim.hpp"
#include "colnode/prep.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace colnode {

struct VdpSetup
{
  double mu{1.0};
  double amplitude{1.0};
  double omega{1.0};
  Vector y0{Vector::Unit(2, 1)};  ///< (u0, v0) = (0, 1)
  double t0{0.0};
  double t_end{10.0};
  Index n_train{200};
  Index n_test{200};
  double fine_step{1e-3};  ///< RK4 step bound for the reference solution

  void validate() const
  {
    detail::require(y0.size() == 2 && y0.allFinite(), "VdpSetup: y0 must hold two finite values");
    detail::require(t_end > t0, "VdpSetup: t_end must exceed t0");
    detail::require(n_train >= 2 && n_test >= 2, "VdpSetup: need at least two train and two test points");
    detail::require(fine_step > 0.0, "VdpSetup: fine_step must be positive");
  }
};

/// Clean samples: n_train on [t0, T] and n_test on the contiguous interval [T, 2T - t0].
struct VdpData
{
  Dataset train;
  Dataset test;
};

inline VdpData generate_vdp(const VdpSetup & setup)
{
  setup.validate();
  const Index nt     = setup.n_train;
  const Index ns     = setup.n_test;
  const Vector train = Vector::LinSpaced(nt, setup.t0, setup.t_end);
  const Vector test  = Vector::LinSpaced(ns, setup.t_end, 2.0 * setup.t_end - setup.t0);
  Vector all(nt + ns - 1);
  all << train, test.tail(ns - 1);

  const OdeSystem sys  = vdp_system(setup.mu, setup.amplitude, setup.omega);
  const Trajectory ref = integrate(
      sys.rhs, setup.y0, all, [&](Index k) { return substeps_for(all[k + 1] - all[k], setup.fine_step); },
      Integrator::rk4);

  Provenance meta;
  meta.set("system", "forced_van_der_pol");
  meta.set("system.mu", format_double(setup.mu));
  meta.set("system.amplitude", format_double(setup.amplitude));
  meta.set("system.omega", format_double(setup.omega));
  meta.set("system.y0", format_double(setup.y0[0]) + "," + format_double(setup.y0[1]));
  meta.set("system.t0", format_double(setup.t0));
  meta.set("system.t_end", format_double(setup.t_end));
  meta.set("reference.integrator", "rk4");
  meta.set("reference.max_step", format_double(setup.fine_step));
  meta.history.push_back("generate_vdp");

  VdpData out;
  out.train.times = train;
  out.train.y_obs = ref.states.topRows(nt);
  out.train.meta  = meta;
  out.train.meta.set("split", "train");
  out.test.times = test;
  out.test.y_obs = ref.states.bottomRows(ns);
  out.test.meta  = meta;
  out.test.meta.set("split", "test");
  return out;
}

/// `count` sub-seeds drawn from mt19937_64 seeded with the master seed.
inline std::vector<std::uint64_t> derive_seeds(std::uint64_t master, std::size_t count)
{
  std::mt19937_64 rng(master);
  std::vector<std::uint64_t> out(count);
  for (auto & s : out) { s = rng(); }
  return out;
}

/// Independent streams for one run, all keyed by its sub-seed.
struct RunSeeds
{
  std::uint64_t train_noise;
  std::uint64_t test_noise;
  std::uint64_t init;
};

inline RunSeeds run_seeds(std::uint64_t sub_seed)
{
  std::mt19937_64 rng(sub_seed);
  RunSeeds s{};
  s.train_noise = rng();
  s.test_noise  = rng();
  s.init        = rng();
  return s;
}

}  // namespace colnode
