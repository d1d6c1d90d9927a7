#include <gtest/gtest.h>

#include <cmath>

#include "nullctl/harness.hpp"
#include "nullctl/obstruction.hpp"

using namespace nullctl;

namespace {

cd profile_value(const SpectralProfile& p, int n) {
  const double lm = p.log_at(n);
  if (std::isinf(lm)) return 0.0;
  return p.phase_at(n) * std::exp(lm);
}

// (1/2pi) int f e^{-inx} by a fine midpoint rule; f supported inside (0, 2pi).
cd quadrature_coefficient(const std::function<double(double)>& f, int n) {
  const int M = 1 << 16;
  cd s = 0;
  for (int j = 0; j < M; ++j) {
    const double x = (j + 0.5) * kTwoPi / M;
    s += f(x) * std::exp(-kI * (double(n) * x));
  }
  return s / double(M);
}

}  // namespace

TEST(SplineProfile, BoxAndHatAgainstQuadrature) {
  const double c = 2.0, support = 1.2;
  // order 1: unit-mass box of width `support`
  auto box = [&](double x) { return std::abs(x - c) < support / 2 ? 1.0 / support : 0.0; };
  // order 2: unit-mass hat of half width support / 2
  auto hat = [&](double x) {
    const double h = support / 2;
    return std::max(0.0, 1.0 - std::abs(x - c) / h) / h;
  };
  const SpectralProfile p1 = spline_profile(c, support, 1, 12);
  const SpectralProfile p2 = spline_profile(c, support, 2, 12);
  for (int n = -12; n <= 12; ++n) {
    EXPECT_NEAR(std::abs(profile_value(p1, n) - quadrature_coefficient(box, n)), 0.0, 2e-5) << n;
    EXPECT_NEAR(std::abs(profile_value(p2, n) - quadrature_coefficient(hat, n)), 0.0, 1e-8) << n;
  }
}

TEST(HighpassFactor, VanishesOnLowBand) {
  EXPECT_TRUE(std::isinf(log_highpass_factor(3, 4)));
  EXPECT_TRUE(std::isinf(log_highpass_factor(-4, 4)));
  // prod_{j=-1}^{1} (5 - j) = 4 * 5 * 6
  EXPECT_NEAR(log_highpass_factor(5, 1), std::log(120.0), 1e-13);
}

TEST(HighpassProfile, KillsModesUpToN) {
  const SpectralProfile p = spline_profile(1.0, 1.0, 21, 200);
  const HighpassResult h = highpass_profile(p, 6);
  for (int n = -6; n <= 6; ++n) EXPECT_EQ(std::abs(h.chiN.mode(n)(0)), 0.0);
  EXPECT_NEAR(h.chiN.c.cwiseAbs().maxCoeff(), 1.0, 1e-12);
}

TEST(Witness, RefusesAboveMinimalTime) {
  const Scenario s = builtin_scenario("nscl");
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  EXPECT_THROW(build_witness(s.sys, c, s.omega, 1.2 * s.minimal_time(), 8), PreconditionError);
  EXPECT_THROW(build_witness(s.sys, c, s.omega, 0.5 * s.minimal_time(), c.n0), PreconditionError);
}

TEST(Witness, TransportPartAvoidsObservationSet) {
  const Scenario s = builtin_scenario("nscl");
  const double T = 0.5 * s.minimal_time();
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  const ObstructionWitness w = build_witness(s.sys, c, s.omega, T, 8);
  const ObservabilityReport r = observability_ratio(w, s.omega, T);
  EXPECT_LT(r.transport_leak, 1e-8);
  EXPECT_GT(r.lower_constant, 0.1);
  EXPECT_LT(r.sup_approx_error, 1.0);
  EXPECT_LT(r.ratio, 1e-6);
}

// The approximation error of the pure-transport surrogate decreases with N.
TEST(Witness, ApproximationErrorDecreases) {
  const Scenario s = builtin_scenario("nscl");
  const double T = 0.5 * s.minimal_time();
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  const double e8 = observability_ratio(build_witness(s.sys, c, s.omega, T, 8), s.omega, T).sup_approx_error;
  const double e16 = observability_ratio(build_witness(s.sys, c, s.omega, T, 16), s.omega, T).sup_approx_error;
  EXPECT_LT(e16, 0.75 * e8);
}

TEST(PureTransport, DampedWaveRankAndCount) {
  const Scenario s = builtin_scenario("damped-wave(1)");
  const PureTransportSpace a = pure_transport_space(s.sys, 0.0, 16);
  const PureTransportSpace b = pure_transport_space(s.sys, 0.0, 32);
  EXPECT_EQ(a.kalman_rank, 1);
  EXPECT_FALSE(a.rank_condition);
  EXPECT_EQ(a.count(), b.count());
}

TEST(PureTransport, NsclHasNone) {
  const Scenario s = builtin_scenario("nscl");
  const PureTransportSpace a = pure_transport_space(s.sys, 2.0, 32);
  EXPECT_EQ(a.kalman_rank, 2);
  EXPECT_EQ(a.count(), 0);
}
