// Acceptance run: one PASS/FAIL line per criterion; exit status 1 when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nullctl/analysis.hpp"
#include "nullctl/control.hpp"
#include "nullctl/harness.hpp"
#include "nullctl/obstruction.hpp"

using namespace nullctl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double linear_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> ex(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ex[i] = std::exp(x[i]);
  return loglog_slope(ex, y);
}

BranchConstants constants_of(const Scenario& s) {
  return branch_constants(s.sys, separation_radius(s.sys, s.n0_override));
}

const std::vector<std::string> kBuiltins = {"damped-wave(1)", "moving-wave(1,1)", "heat-memory", "nscl", "heat"};

// ---------------------------------------------------------------------------------------------

Outcome spectral_identities() {
  const Stopwatch clock;
  double worst = 0, worst_trace = 0;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (const auto& name : kBuiltins) {
    const Scenario s = builtin_scenario(name);
    const BranchConstants c = constants_of(s);
    const GroupContours groups = group_contours(s.sys);
    for (int k = 0; k < 200; ++k) {
      const double rad = std::min(c.r, 1.0 / std::max(1, c.n0)) * std::sqrt(u(rng));
      const cd z = std::polar(rad, kTwoPi * u(rng));
      const ProjectionPair pp = projection_split(s.sys, z, c.R);
      const CMat E = eval_symbol(s.sys, z);
      const double scale = std::max(1.0, pp.Ph.norm());
      worst = std::max(worst, (pp.Ph * pp.Ph - pp.Ph).norm() / scale);
      worst = std::max(worst, (pp.Ph * E - E * pp.Ph).norm() / (scale * E.norm()));
      worst_trace = std::max(worst_trace, std::abs(pp.Ph.trace() - cd(s.sys.d1)));
      CMat sum = CMat::Zero(s.sys.d(), s.sys.d());
      for (const auto& b : hyperbolic_branches(s.sys, z, pp.Ph, groups)) {
        sum += b.P;
        worst = std::max(worst, (E * b.P - b.mu * z * b.P - z * z * b.R).norm() / (scale * std::max(1.0, E.norm())));
      }
      worst = std::max(worst, (sum - pp.Ph).norm() / scale);
    }
  }
  const double t = clock.seconds();
  return {worst <= 1e-9 && worst_trace <= 1e-8 && t < 10.0,
          "max identity residual " + fmt(worst) + ", trace error " + fmt(worst_trace) + ", " + fmt(t) + " s"};
}

Outcome limit_values() {
  double worst = 0;
  for (const auto& name : kBuiltins) {
    const Scenario s = builtin_scenario(name);
    const BranchConstants c = separation_radius(s.sys, s.n0_override);
    const ProjectionPair pp = projection_split(s.sys, cd(0), c.R);
    CMat expect = CMat::Zero(s.sys.d(), s.sys.d());
    expect.topLeftCorner(s.sys.d1, s.sys.d1).setIdentity();
    worst = std::max(worst, (pp.Ph - expect).norm());
    worst = std::max(worst, graph_map(s.sys, pp.Pp).norm());
  }
  return {worst <= 1e-12, "max deviation " + fmt(worst)};
}

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

Outcome semigroup_correctness() {
  const Stopwatch clock;
  double worst = 0;
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
    worst = std::max(worst, std::sqrt(err / ref));
  }
  const double t = clock.seconds();
  return {worst <= 1e-7 && t < 30.0, "relative error " + fmt(worst) + ", " + fmt(t) + " s"};
}

Outcome obstruction() {
  const Stopwatch clock;
  const Scenario s = builtin_scenario("nscl");
  const double T = 0.5 * s.minimal_time();
  const BranchConstants c = constants_of(s);
  std::vector<double> Ns, ratio, err;
  for (int N : {8, 16, 32, 64, 128}) {
    const ObservabilityReport r = observability_ratio(build_witness(s.sys, c, s.omega, T, N), s.omega, T);
    Ns.push_back(N);
    ratio.push_back(r.ratio);
    err.push_back(r.sup_approx_error);
  }
  const double rs = loglog_slope(Ns, ratio), es = loglog_slope(Ns, err);
  const double t = clock.seconds();
  return {rs <= -1.5 && es <= -0.8 && t < 120.0, "ratio slope " + fmt(rs) + " (ratios " + fmt(ratio.front()) + " .. " +
                                                     fmt(ratio.back()) + "), sup-error slope " + fmt(es) + ", " +
                                                     fmt(t) + " s"};
}

double trig_poly(const std::vector<double>& a, const std::vector<double>& b, double x) {
  double s = a[0];
  for (std::size_t k = 1; k < a.size(); ++k) s += a[k] * std::cos(k * x) + b[k] * std::sin(k * x);
  return s;
}

Outcome transport_control_check() {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> nd;
  double worst = 0, leak = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const double mu = (u(rng) < 0.5 ? -1 : 1) * (0.5 + 1.5 * u(rng));
    const double a = kTwoPi * u(rng);
    const double b = a + 1.0 + 2.0 * u(rng);
    const double delta = 0.1;
    const double Tprime = (kTwoPi - (b - a) + 4 * delta) / std::abs(mu) + 4 * delta + 0.5 + u(rng);
    std::vector<double> ca(4), sa(4), cb(4), sb(4);
    for (int k = 0; k < 4; ++k) {
      ca[k] = nd(rng) / (1 + k);
      sa[k] = nd(rng) / (1 + k);
      cb[k] = nd(rng) / (1 + k);
      sb[k] = nd(rng) / (1 + k);
    }
    auto f0 = [=](double x) { return trig_poly(ca, sa, x); };
    auto fT = [=](double x) { return trig_poly(cb, sb, x); };
    const TransportControl ctl = transport_control(f0, fT, cutoff_eta(a, b, Tprime, mu, delta));
    for (int j = 0; j < 32; ++j) {
      const double x = kTwoPi * (j + 0.37) / 32;
      worst = std::max(worst, std::abs(characteristic_final_state(ctl, x) - fT(x)));
    }
    for (int j = 0; j < 2000; ++j) {
      const double t = Tprime * u(rng), y = kTwoPi * u(rng);
      if (!ctl.eta.inside_box(t, y)) leak = std::max(leak, std::abs(ctl(t, y)));
    }
  }
  return {worst <= 1e-6 && leak <= 1e-10, "max final error " + fmt(worst) + ", max outside box " + fmt(leak)};
}

Outcome moment_control() {
  std::ostringstream os;
  bool pass = true;
  for (const char* name : {"heat", "nscl"}) {
    const Scenario s = builtin_scenario(name);
    const BranchConstants c = constants_of(s);
    const BranchTable bt(s.sys, c, 12);
    const FourierState f0 = random_state(s.sys.d(), 12, 11);
    std::vector<double> Ns, logc;
    double worst = 0;
    bool pd = true;
    for (int N = c.n0 + 2; N <= 12; N += 2) {
      const MomentResult r = parabolic_moment_control(s.sys, bt, f0, 0.0, 1.0, N, s.omega, parabolic_mask(s.sys));
      worst = std::max(worst, r.residual);
      pd = pd && r.problem.min_eigenvalue > 0;
      Ns.push_back(N);
      logc.push_back(std::log(r.problem.condition));
    }
    const double slope = Ns.size() >= 2 ? linear_slope(Ns, logc) : NAN;
    pass = pass && worst <= 1e-8 && pd && std::isfinite(slope);
    os << name << ": residual " << fmt(worst) << ", d log cond / dN " << fmt(slope) << "; ";
  }
  return {pass, os.str()};
}

Outcome lebeau_robbiano_check() {
  const Stopwatch clock;
  const Scenario s = builtin_scenario("heat");
  const BranchTable bt(s.sys, constants_of(s), 32);
  // Data on the diffusive component only; the static component would pin Pp f at its roundoff.
  FourierState f0 = random_state(2, 32, 5);
  f0.c.row(0).setZero();
  const double T = 4.0;
  const LRResult r = lebeau_robbiano(s.sys, bt, f0, 0.0, T, T / 8, 0.5, 32, s.omega, parabolic_mask(s.sys));
  const auto& nrm = r.stage_norms;
  bool decreasing = true, concave = true;
  for (std::size_t l = 1; l < nrm.size(); ++l) decreasing = decreasing && nrm[l] < nrm[l - 1];
  for (std::size_t l = 2; l < std::min<std::size_t>(nrm.size(), 5); ++l)
    concave = concave && std::log(nrm[l]) - 2 * std::log(nrm[l - 1]) + std::log(nrm[l - 2]) <= 0;
  const double t = clock.seconds();
  return {decreasing && concave && r.final_residual <= 1e-6 && nrm.size() >= 5 && t < 120.0,
          std::to_string(nrm.size() - 1) + " stages" +
              (decreasing ? ", decreasing" : ", NOT decreasing") +
              (concave ? ", concave" : ", NOT concave") + ", final residual " + fmt(r.final_residual) + ", " + fmt(t) +
              " s"};
}

double hyperbolic_min_eigenvalue(const Scenario& s, const BranchTable& bt, int nmax, double T) {
  const auto fun = target_functionals(s.sys, bt, TargetKind::kHyperbolic, nmax);
  HumOptions opt;
  opt.gram.throw_on_singular = false;
  return build_hum_gramian(s.sys, fun, 0.0, T, s.omega, transport_mask(s.sys), nmax, opt).min_eigenvalue();
}

Outcome full_pipeline_check() {
  const Scenario s = builtin_scenario("nscl");
  const double Ts = s.minimal_time();
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PipelineResult r = full_pipeline(s.sys, random_state(2, 24, seed), 1.5 * Ts, s.omega);
    worst = std::max(worst, r.relative_norm);
  }
  const BranchTable bt(s.sys, constants_of(s), 24);
  const double above = hyperbolic_min_eigenvalue(s, bt, 24, 1.5 * Ts);
  const double below = hyperbolic_min_eigenvalue(s, bt, 24, 0.5 * Ts);
  const double gap = above / std::max(below, 1e-300);
  return {worst <= 1e-4 && gap >= 1e4, "max |f(T)|/|f0| " + fmt(worst) + ", lambda_min(1.5T*) / lambda_min(0.5T*) " +
                                           fmt(gap)};
}

Outcome kalman_dichotomy() {
  Scenario s = builtin_scenario("moving-wave(1,1)");
  const double T = 1.5 * s.minimal_time();
  const PipelineResult r = full_pipeline(s.sys, random_state(2, 24, 1), T, s.omega);
  s.sys.K(1, 0) = 0.0;
  const BranchTable bt(s.sys, constants_of(s), 24);
  const auto fun = target_functionals(s.sys, bt, TargetKind::kParabolic, 24);
  HumOptions opt;
  opt.gram.throw_on_singular = false;
  const double cond = build_hum_gramian(s.sys, fun, 0.0, T, s.omega, transport_mask(s.sys), 24, opt).condition();
  bool refused = false;
  std::string msg;
  try {
    full_pipeline(s.sys, random_state(2, 24, 1), T, s.omega);
  } catch (const PreconditionError& e) {
    refused = true;
    msg = e.what();
  }
  return {r.relative_norm <= 1e-3 && cond > 1e12 && refused,
          "coupled residual " + fmt(r.relative_norm) + ", decoupled parabolic Gram condition " + fmt(cond) +
              (refused ? ", refused: " + msg : ", NOT refused")};
}

Outcome counterexample() {
  const Stopwatch clock;
  auto datum = [&](int nmax, std::uint64_t seed) {
    FourierState f = FourierState::zeros(2, nmax);
    f.c.row(0) = random_state(1, nmax, seed, 2.0).c.row(0);
    f.c.row(1) = random_state(1, nmax, seed + 1000, 1.0).c.row(0);
    f.c(0, nmax) = 0.0;
    return f;
  };
  const CounterexampleReport r = memory_counterexample_control(datum(64, 1), 1.0);
  bool bound = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const CounterexampleReport q = memory_counterexample_control(datum(64, seed), 1.0, false);
    bound = bound && q.energy >= q.lower_bound;
  }
  auto f01 = [](int n) { return n == 0 ? cd(0) : cd(1.0 / (n * std::pow(std::log(2.0 + std::abs(n)), 2))); };
  auto f02 = [](int) { return cd(0); };
  std::vector<double> e;
  for (int k = 21; k <= 24; ++k) e.push_back(counterexample_energy(f01, f02, 1.0, 1 << k));
  double min_growth = INFINITY;
  std::ostringstream g;
  for (std::size_t i = 1; i < e.size(); ++i) {
    min_growth = std::min(min_growth, e[i] / e[i - 1]);
    g << (i > 1 ? ", " : "") << fmt(e[i] / e[i - 1]);
  }
  return {r.max_residual <= 1e-10 && bound && min_growth >= 1.5,
          "max mode residual " + fmt(r.max_residual) + ", lower bound " + (bound ? "holds" : "VIOLATED") +
              ", partial-sum growth per doubling " + g.str() + ", " + fmt(clock.seconds()) + " s"};
}

Outcome appendix_a() {
  const Scenario s = builtin_scenario("damped-wave(1)");
  const PureTransportSpace a = pure_transport_space(s.sys, 0.0, 32);
  const PureTransportSpace b = pure_transport_space(s.sys, 0.0, 64);
  return {a.kalman_rank == s.sys.d() && a.count() == b.count(),
          "rank (B | AB) " + std::to_string(a.kalman_rank) + " of " + std::to_string(s.sys.d()) + ", pure transport count " +
              std::to_string(a.count()) + " -> " + std::to_string(b.count()) + " under doubling"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "nullctl_acceptance_determinism";
  fs::remove_all(root);
  int compared = 0;
  bool same = true;
  const std::vector<std::pair<std::string, ExperimentKind>> runs = {
      {"nscl", ExperimentKind::kPipeline},
      {"moving-wave(1,1)", ExperimentKind::kSimulate},
      {"nscl", ExperimentKind::kSpectrum},
      {"heat", ExperimentKind::kControl}};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    Scenario s = builtin_scenario(runs[i].first);
    s.kind = runs[i].second;
    s.nmax = 12;
    const fs::path a = root / (std::to_string(i) + "a"), b = root / (std::to_string(i) + "b");
    const RunResult r = run_experiment(s, a.string());
    run_experiment(load_scenario((a / "manifest.json").string()), b.string());
    for (const auto& f : r.files) {
      if (fs::path(f).extension() != ".csv") continue;
      ++compared;
      same = same && slurp(a / f) == slurp(b / f);
    }
  }
  fs::remove_all(root);
  return {same && compared > 0, std::to_string(compared) + " CSV files " + (same ? "identical" : "DIFFER")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion> kCriteria = {
    {"spectral identities", spectral_identities},
    {"limit values", limit_values},
    {"semigroup correctness", semigroup_correctness},
    {"obstruction slopes", obstruction},
    {"transport control", transport_control_check},
    {"moment control", moment_control},
    {"Lebeau-Robbiano", lebeau_robbiano_check},
    {"full pipeline", full_pipeline_check},
    {"Kalman dichotomy", kalman_dichotomy},
    {"memory counterexample", counterexample},
    {"pure transport rank", appendix_a},
    {"determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nullctl acceptance criteria"};
  std::vector<int> selected;
  app.add_option("--criterion,-c", selected, "criteria to run (1-based); all when omitted")
      ->check(CLI::Range(1, static_cast<int>(kCriteria.size())));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty())
    for (std::size_t k = 1; k <= kCriteria.size(); ++k) selected.push_back(static_cast<int>(k));

  int failed = 0;
  for (int k : selected) {
    const Criterion& c = kCriteria[k - 1];
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << k << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
