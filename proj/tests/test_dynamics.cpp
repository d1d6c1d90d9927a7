#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nullctl/dynamics.hpp"
#include "nullctl/harness.hpp"

using namespace nullctl;

namespace {

// Classical RK4 on f' = -L f with a step resolving the fastest rate.
CVec rk4_mode(const CMat& L, const CVec& f0, double T) {
  const Eigen::ComplexEigenSolver<CMat> es(L, false);
  double rate = 1.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) rate = std::max(rate, std::abs(es.eigenvalues()(i)));
  const int steps = static_cast<int>(std::ceil(T * rate * 80));
  const double h = T / steps;
  CVec f = f0;
  for (int s = 0; s < steps; ++s) {
    const CVec k1 = -L * f;
    const CVec k2 = -L * (f + 0.5 * h * k1);
    const CVec k3 = -L * (f + 0.5 * h * k2);
    const CVec k4 = -L * (f + h * k3);
    f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return f;
}

}  // namespace

TEST(ModeGenerator, GeneratorFormula) {
  const SystemMatrices s = builtin_scenario("nscl").sys;
  const ModeGenerator g(s, 3);
  const CMat expect = 9.0 * s.B() + cd(0, 3) * s.A + s.K;
  EXPECT_LT((g.generator() - expect).norm(), 1e-14);
}

TEST(ModeGenerator, BackwardRequiresPermission) {
  const ModeGenerator g(builtin_scenario("nscl").sys, 2);
  EXPECT_THROW(g.propagator(-0.1), PreconditionError);
  EXPECT_NO_THROW(g.propagator(-0.1, true));
}

TEST(ModeGenerator, SemigroupProperty) {
  for (const char* name : {"nscl", "damped-wave(1)", "moving-wave(1,3)"}) {
    const SystemMatrices s = builtin_scenario(name).sys;
    for (int n : {0, 1, 5, 17}) {
      const ModeGenerator g(s, n);
      const CMat lhs = g.propagator(0.7);
      const CMat rhs = g.propagator(0.3) * g.propagator(0.4);
      EXPECT_LT((lhs - rhs).norm(), 1e-12 * (1 + lhs.norm())) << name << " n=" << n;
    }
  }
}

TEST(Evolve, MatchesRungeKuttaOracle) {
  for (const char* name : {"damped-wave(1)", "nscl"}) {
    const SystemMatrices s = builtin_scenario(name).sys;
    const FourierState f0 = random_state(2, 32, 3);
    const FourierState fT = evolve(s, f0, nullptr, 1.0);
    double err = 0, ref = 0;
    for (int n = -32; n <= 32; ++n) {
      const CVec r = rk4_mode(ModeGenerator(s, n).generator(), f0.mode(n), 1.0);
      err += (r - fT.mode(n)).squaredNorm();
      ref += r.squaredNorm();
    }
    EXPECT_LT(std::sqrt(err / ref), 1e-7) << name;
  }
}

TEST(Evolve, SerialReferenceAgrees) {
  const Scenario sc = builtin_scenario("moving-wave(1,1)");
  const FourierState f0 = random_state(2, 16, 9);
  TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 4, 8);
  ControlSignal u = ControlSignal::zeros(grid, 1, 16);
  std::mt19937 rng(2);
  std::normal_distribution<double> nd;
  for (auto& c : u.coeffs)
    for (int k = 0; k < c.cols(); ++k) c(0, k) = cd(nd(rng), nd(rng));
  const FourierState a = evolve(sc.sys, f0, &u, 1.0, Exec::kParallel);
  const FourierState b = evolve(sc.sys, f0, &u, 1.0, Exec::kSerial);
  const FourierState c = evolve_serial_reference(sc.sys, f0, &u, 1.0);
  EXPECT_LT(l2_norm(a - b), 1e-13 * l2_norm(a));
  EXPECT_LT(l2_norm(a - c), 1e-12 * l2_norm(a));
}

// Duhamel term: a constant control on one mode of the heat system integrates in closed form.
TEST(Evolve, ConstantControlClosedForm) {
  const SystemMatrices s = decoupled_heat();
  const int nmax = 4;
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 4, 8);
  ControlSignal u = ControlSignal::zeros(grid, 2, nmax);
  for (auto& c : u.coeffs) c(1, 3 + nmax) = 1.0;
  const FourierState fT = evolve(s, FourierState::zeros(2, nmax), &u, 1.0);
  EXPECT_NEAR(std::abs(fT.mode(3)(1) - cd((1 - std::exp(-9.0)) / 9.0)), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(fT.mode(3)(0)), 0.0, 1e-15);
}

// Property: <f(T), g0> = <f0, g(T)> for the free flow and its adjoint.
TEST(Adjoint, DualityPairing) {
  for (const char* name : {"nscl", "moving-wave(1,1)", "heat-memory"}) {
    const SystemMatrices s = builtin_scenario(name).sys;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const FourierState f0 = random_state(2, 12, seed);
      const FourierState g0 = random_state(2, 12, seed + 100);
      const cd lhs = inner(evolve(s, f0, nullptr, 0.8), g0);
      const cd rhs = inner(f0, evolve_adjoint(s, g0, 0.8));
      EXPECT_NEAR(std::abs(lhs - rhs), 0.0, 1e-12 * (1 + std::abs(lhs))) << name;
    }
  }
}

TEST(FourierState, RealityAndResize) {
  FourierState f = FourierState::zeros(1, 3);
  f.mode_ref(2)(0) = cd(1, 2);
  f.mode_ref(-2)(0) = cd(1, -2);
  EXPECT_TRUE(f.is_real());
  const FourierState g = f.resized(5);
  EXPECT_EQ(g.nmax, 5);
  EXPECT_EQ(g.mode(2)(0), cd(1, 2));
  EXPECT_NEAR(l2_norm(f), std::sqrt(kTwoPi * 10.0), 1e-14);
  EXPECT_NEAR(f.eval(0.3)(0).imag(), 0.0, 1e-14);
}

TEST(SpatialNorm, ExactAndSampledAgree) {
  const FourierState f = random_state(2, 10, 4);
  const TorusSubset om = TorusSubset::from_arcs({{0.3, 2.5}});
  const double exact = spatial_l2_squared(f, om);
  const double sampled = sampled_l2_squared(f, om, 1 << 16);
  EXPECT_NEAR(exact, sampled, 1e-3 * exact);
  EXPECT_NEAR(spatial_l2_squared(f, TorusSubset::full()), std::pow(l2_norm(f), 2), 1e-10);
}

TEST(ControlSignal, AppendConcatenatesAndWidensSupport) {
  const TimeGrid g1 = TimeGrid::uniform(0.0, 1.0, 2, 4);
  const TimeGrid g2 = TimeGrid::uniform(1.0, 2.0, 2, 4);
  ControlSignal a = ControlSignal::zeros(g1, 1, 3);
  const ControlSignal b = ControlSignal::zeros(g2, 1, 3);
  a.append(b);
  EXPECT_EQ(a.grid.size(), g1.size() + g2.size());
  EXPECT_DOUBLE_EQ(a.support.t1, 2.0);
  EXPECT_EQ(a.coeffs.size(), static_cast<std::size_t>(a.grid.size()));
}

TEST(Decompose, PartsSumToState) {
  const SystemMatrices s = builtin_scenario("nscl").sys;
  const BranchConstants c = branch_constants(s, separation_radius(s));
  const BranchTable bt(s, c, 16);
  const FourierState f = random_state(2, 16, 8);
  const Decomposition d = decompose(f, bt);
  EXPECT_LT(l2_norm(d.low + d.para + d.hyp - f), 1e-12 * l2_norm(f));
}
