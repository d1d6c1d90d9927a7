#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nullctl/control.hpp"
#include "nullctl/harness.hpp"

using namespace nullctl;

namespace {

struct TrigPoly {
  std::vector<double> a, b;  // cos and sin coefficients, degree a.size() - 1
  double operator()(double x) const {
    double s = a[0];
    for (std::size_t k = 1; k < a.size(); ++k) s += a[k] * std::cos(k * x) + b[k] * std::sin(k * x);
    return s;
  }
};

TrigPoly random_poly(std::mt19937& rng, int degree) {
  std::normal_distribution<double> nd;
  TrigPoly p;
  p.a.resize(degree + 1);
  p.b.resize(degree + 1);
  for (int k = 0; k <= degree; ++k) {
    p.a[k] = nd(rng) / (1 + k);
    p.b[k] = nd(rng) / (1 + k);
  }
  return p;
}

BranchTable table_for(const Scenario& s, int nmax) {
  return BranchTable(s.sys, branch_constants(s.sys, separation_radius(s.sys, s.n0_override)), nmax);
}

}  // namespace

// Oracle: the characteristic integral of the synthesized control lands on the target.
TEST(Transport, RandomSteeringAgainstCharacteristics) {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const double mu = (u(rng) < 0.5 ? -1 : 1) * (0.5 + 1.5 * u(rng));
    const double a = kTwoPi * u(rng);
    const double b = a + 1.0 + 2.0 * u(rng);
    const double delta = 0.1;
    const double Tprime = (kTwoPi - (b - a) + 4 * delta) / std::abs(mu) + 4 * delta + 0.5 + u(rng);
    const TrigPoly f0 = random_poly(rng, 3), fT = random_poly(rng, 3);
    const CutoffEta eta = cutoff_eta(a, b, Tprime, mu, delta);
    const TransportControl ctl = transport_control(f0, fT, eta);
    double err = 0;
    for (int j = 0; j < 16; ++j) {
      const double x = kTwoPi * (j + 0.37) / 16;
      err = std::max(err, std::abs(characteristic_final_state(ctl, x) - fT(x)));
    }
    EXPECT_LE(err, 1e-6) << "trial " << trial;
    // Outside the cut-off box the control is exactly zero.
    for (int j = 0; j < 200; ++j) {
      const double t = Tprime * u(rng), y = kTwoPi * u(rng);
      if (!eta.inside_box(t, y)) EXPECT_LE(std::abs(ctl(t, y)), 1e-10);
    }
  }
}

TEST(Transport, RefusesShortHorizon) {
  EXPECT_THROW(cutoff_eta(0.0, 1.0, 2.0, 1.0, 0.1), PreconditionError);
  EXPECT_THROW(cutoff_eta(0.0, 1.0, 10.0, 0.0, 0.1), PreconditionError);
}

TEST(Gramian, HermitianPositiveAndSerialMatchesParallel) {
  const Scenario s = builtin_scenario("moving-wave(1,1)");
  const BranchTable bt = table_for(s, 12);
  const auto fun = target_functionals(s.sys, bt, TargetKind::kHyperbolic, 12);
  HumOptions po, so;
  so.gram.exec = Exec::kSerial;
  const double T = 1.5 * s.minimal_time();
  const GramianControl gp = build_hum_gramian(s.sys, fun, 0.0, T, s.omega, transport_mask(s.sys), 12, po);
  const GramianControl gs = build_hum_gramian(s.sys, fun, 0.0, T, s.omega, transport_mask(s.sys), 12, so);
  EXPECT_LT((gp.gram() - gp.gram().adjoint()).norm(), 1e-13 * gp.gram().norm());
  EXPECT_GT(gp.min_eigenvalue(), 0.0);
  EXPECT_LT((gp.gram() - gs.gram()).norm(), 1e-14 * gp.gram().norm());
}

// HUM: the multipliers solve G lambda = rhs, so lambda^H G lambda equals the dual pairing.
TEST(Hum, ReachesTargetsWithDualCertificate) {
  const Scenario s = builtin_scenario("nscl");
  const int nmax = 16;
  const BranchTable bt = table_for(s, nmax);
  const FourierState f0 = random_state(2, nmax, 5);
  const double T = 1.2 * s.minimal_time();
  const HumResult r = hum_gramian_control(s.sys, bt, TargetKind::kHyperbolic, nmax, FourierState::zeros(2, nmax),
                                          f0, 0.0, T, s.omega, transport_mask(s.sys));
  EXPECT_LT(r.relative_error, 1e-10);
  EXPECT_LE(r.u.leakage(), 1e-10);
  const auto fun = target_functionals(s.sys, bt, TargetKind::kHyperbolic, nmax);
  const GramianControl g = build_hum_gramian(s.sys, fun, 0.0, T, s.omega, transport_mask(s.sys), nmax);
  const double quad = r.lambda.dot(g.gram() * r.lambda).real();
  EXPECT_GT(r.dual_energy, 0.0);
  EXPECT_NEAR(quad, r.dual_energy, 1e-8 * r.dual_energy);
}

TEST(Hum, GramCollapsesBelowMinimalTime) {
  const Scenario s = builtin_scenario("nscl");
  const int nmax = 16;
  const BranchTable bt = table_for(s, nmax);
  const auto fun = target_functionals(s.sys, bt, TargetKind::kHyperbolic, nmax);
  HumOptions opt;
  opt.gram.throw_on_singular = false;
  const double Ts = s.minimal_time();
  const auto above = build_hum_gramian(s.sys, fun, 0.0, 1.5 * Ts, s.omega, transport_mask(s.sys), nmax, opt);
  const auto below = build_hum_gramian(s.sys, fun, 0.0, 0.5 * Ts, s.omega, transport_mask(s.sys), nmax, opt);
  EXPECT_LT(below.min_eigenvalue(), 1e-3 * above.min_eigenvalue());
}

// E2(n) is the restriction of L_n^* to Im Pp^*:  L_n^* (G; I) = (G; I) n^2 E2(n).
TEST(Moment, ParabolicSymbolIsAdjointRestriction) {
  for (const char* name : {"nscl", "moving-wave(1,1)", "heat-memory"}) {
    const Scenario s = builtin_scenario(name);
    const BranchTable bt = table_for(s, 20);
    for (int n : {bt.n0() + 1, bt.n0() + 4, -(bt.n0() + 2), 20}) {
      const CMat& G = bt.at(n).G;
      CMat basis(s.sys.d(), s.sys.d2);
      basis.topRows(s.sys.d1) = G;
      basis.bottomRows(s.sys.d2).setIdentity();
      const CMat lhs = ModeGenerator(s.sys, n).generator().adjoint() * basis;
      const CMat rhs = basis * (double(n) * n) * parabolic_symbol(s.sys, G, n);
      EXPECT_LT((lhs - rhs).norm(), 1e-9 * lhs.norm()) << name << " n=" << n;
    }
  }
}

TEST(Moment, DecoupledHeatResidualAndSupport) {
  const Scenario s = builtin_scenario("heat");
  const BranchTable bt = table_for(s, 8);
  const FourierState f0 = random_state(2, 8, 12);
  const MomentResult r = parabolic_moment_control(s.sys, bt, f0, 0.0, 1.0, 8, s.omega, parabolic_mask(s.sys));
  EXPECT_LT(r.residual, 1e-8);
  EXPECT_GT(r.problem.min_eigenvalue, 0.0);
  EXPECT_LE(r.u.leakage(), 1e-10);
  EXPECT_LT(l2_norm(parabolic_part(r.final_state, bt, 8)), 1e-8 * l2_norm(parabolic_part(f0, bt, 8)));
}

TEST(Moment, RefusesControlOnTransportRows) {
  const Scenario s = builtin_scenario("heat");
  const BranchTable bt = table_for(s, 4);
  EXPECT_THROW(parabolic_moment_control(s.sys, bt, random_state(2, 4, 1), 0.0, 1.0, 4, s.omega, {true, true}),
               PreconditionError);
}

TEST(LebeauRobbiano, ScheduleFitsHorizon) {
  const LRSchedule sch = LRSchedule::build(0.0, 4.0, 0.5, 0.5, 32);
  ASSERT_EQ(sch.stages.size(), 5u);
  for (std::size_t l = 0; l < sch.stages.size(); ++l) {
    EXPECT_EQ(sch.stages[l].N, 1 << (l + 1));
    if (l > 0) EXPECT_LT(sch.stages[l].T_ell, sch.stages[l - 1].T_ell);
  }
  EXPECT_LE(sch.stages.back().end, 4.0 - 0.5 + 1e-12);
  EXPECT_THROW(LRSchedule::build(0.0, 1.0, 0.6, 0.5, 8), PreconditionError);
}

TEST(LebeauRobbiano, SmallHeatRunDecreases) {
  const Scenario s = builtin_scenario("heat");
  const BranchTable bt = table_for(s, 8);
  const FourierState f0 = random_state(2, 8, 4);
  const LRResult r = lebeau_robbiano(s.sys, bt, f0, 0.0, 4.0, 0.5, 0.5, 8, s.omega, parabolic_mask(s.sys));
  for (std::size_t l = 1; l < r.stage_norms.size(); ++l) EXPECT_LT(r.stage_norms[l], r.stage_norms[l - 1]);
  EXPECT_LT(r.final_residual, 1e-6);
}

TEST(Pipeline, RefusalMessages) {
  const FourierState f0 = random_state(2, 8, 1);
  try {
    const Scenario s = builtin_scenario("damped-wave(1)");
    full_pipeline(s.sys, f0, 5.0, s.omega);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("not controllable even with an additional control"), std::string::npos);
  }
  const Scenario n = builtin_scenario("nscl");
  EXPECT_THROW(full_pipeline(n.sys, f0, 0.5 * n.minimal_time(), n.omega), PreconditionError);
  Scenario mw = builtin_scenario("moving-wave(1,1)");
  mw.sys.K(1, 0) = 0.0;
  try {
    full_pipeline(mw.sys, f0, 1.5 * mw.minimal_time(), mw.omega);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("Kalman"), std::string::npos);
  }
}

TEST(DerivativeControl, MultipliesByFrequency) {
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 1, 4);
  ControlSignal u = ControlSignal::zeros(g, 1, 3);
  for (auto& c : u.coeffs) c(0, 3 + 2) = 1.0;
  const ControlSignal d = derivative_control(u, 2);
  for (const auto& c : d.coeffs) EXPECT_NEAR(std::abs(c(0, 3 + 2) - cd(-4.0)), 0.0, 1e-14);
}

TEST(Masks, TransportAndParabolic) {
  const Scenario s = builtin_scenario("nscl");
  EXPECT_EQ(transport_mask(s.sys), (std::vector<bool>{true, false}));
  EXPECT_EQ(parabolic_mask(s.sys), (std::vector<bool>{false, true}));
}
