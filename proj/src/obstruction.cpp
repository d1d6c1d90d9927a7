#include "nullctl/obstruction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace nullctl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

SpectralProfile empty_profile(int nmax) {
  SpectralProfile p;
  p.nmax = nmax;
  p.logmag.assign(2 * nmax + 1, kNegInf);
  p.phase.assign(2 * nmax + 1, cd(1));
  return p;
}

}  // namespace

SpectralProfile profile_from_state(const FourierState& chi) {
  if (chi.dim() != 1) throw PreconditionError("profile_from_state: expects a scalar profile");
  SpectralProfile p = empty_profile(chi.nmax);
  for (int n = -chi.nmax; n <= chi.nmax; ++n) {
    const cd a = chi.c(0, n + chi.nmax);
    if (a == cd(0)) continue;
    p.logmag[n + chi.nmax] = std::log(std::abs(a));
    p.phase[n + chi.nmax] = a / std::abs(a);
  }
  return p;
}

SpectralProfile spline_profile(double center, double support, int order, int nmax) {
  if (order < 1 || !(support > 0)) throw PreconditionError("spline_profile: order >= 1 and support > 0 required");
  SpectralProfile p = empty_profile(nmax);
  const double h = support / order;
  for (int n = -nmax; n <= nmax; ++n) {
    const double y = 0.5 * n * h;
    const double s = (n == 0) ? 1.0 : std::sin(y) / y;
    if (s == 0.0) continue;
    p.logmag[n + nmax] = order * std::log(std::abs(s)) - std::log(kTwoPi);
    const double sign = (s < 0 && order % 2 == 1) ? -1.0 : 1.0;
    p.phase[n + nmax] = sign * std::exp(-kI * (double(n) * center));
  }
  return p;
}

SpectralProfile bump_profile(double center, double halfwidth, int nmax) {
  auto f = [=](double x) {
    double y = std::remainder(x - center, kTwoPi);
    return bump(y / halfwidth);
  };
  const auto a = fourier_coefficients(f, nmax, std::max(16384, next_pow2(8 * nmax)));
  FourierState s = FourierState::zeros(1, nmax);
  for (int n = -nmax; n <= nmax; ++n) s.c(0, n + nmax) = a[n + nmax];
  return profile_from_state(s);
}

double log_highpass_factor(int n, int N) {
  if (std::abs(n) <= N) return kNegInf;
  double acc = 0;
  for (int j = -N; j <= N; ++j) acc += std::log(std::abs(double(n - j)));
  return acc;
}

HighpassResult highpass_profile(const SpectralProfile& chi, int N) {
  if (N < 0) throw PreconditionError("highpass_profile: N must be non-negative");
  HighpassResult r;
  const int nmax = chi.nmax;
  std::vector<double> lg(2 * nmax + 1, kNegInf);
  double top = kNegInf;
  for (int n = -nmax; n <= nmax; ++n) {
    if (std::abs(n) <= N) continue;
    const double l = chi.log_at(n) + log_highpass_factor(n, N);
    lg[n + nmax] = l;
    top = std::max(top, l);
  }
  if (!std::isfinite(top))
    throw NumericalError("highpass_profile: no finite coefficient above N; raise the band or lower N");
  r.log_scale = top;
  r.chiN = FourierState::zeros(1, nmax);
  for (int n = -nmax; n <= nmax; ++n) {
    if (!std::isfinite(lg[n + nmax])) continue;
    // P_N(n) has the sign of n for |n| > N.
    const double sign = n > 0 ? 1.0 : -1.0;
    r.chiN.c(0, n + nmax) = sign * std::exp(lg[n + nmax] - top) * chi.phase_at(n);
  }
  return r;
}

HighpassResult highpass_profile(const FourierState& chi, int N) {
  return highpass_profile(profile_from_state(chi), N);
}

std::vector<BranchLimit> branch_limits(const SystemMatrices& sys, const BranchConstants& consts) {
  const GroupContours groups = group_contours(sys);
  const double rho = 0.5 / consts.n0;
  const int nodes = 32;
  std::vector<BranchLimit> out(groups.speeds.size());
  for (std::size_t g = 0; g < out.size(); ++g) {
    out[g].mu = groups.speeds[g].mu;
    out[g].P = CMat::Zero(sys.d(), sys.d());
    out[g].R = CMat::Zero(sys.d(), sys.d());
  }
  // Mean value property of the analytic maps z -> P_mu(z), R_mu(z).
  for (int k = 0; k < nodes; ++k) {
    const cd z = rho * std::exp(kI * (kTwoPi * (k + 0.5) / nodes));
    const CMat ph = projection_split(sys, z, consts.R).Ph;
    const auto br = hyperbolic_branches(sys, z, ph, groups);
    for (std::size_t g = 0; g < out.size(); ++g) {
      out[g].P += br[g].P / double(nodes);
      out[g].R += br[g].R / double(nodes);
    }
  }
  return out;
}

namespace {

struct Gap {
  double lo = 0, hi = kTwoPi;
};

Gap largest_complement_arc(const TorusSubset& omega) {
  Gap best;
  if (omega.empty()) return best;
  if (omega.is_full()) return Gap{0, 0};
  const auto& arcs = omega.arcs();
  best = Gap{0, 0};
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const double lo = arcs[i].second;
    double hi = (i + 1 < arcs.size()) ? arcs[i + 1].first : arcs[0].first + kTwoPi;
    while (hi < lo) hi += kTwoPi;
    if (hi - lo > best.hi - best.lo) best = Gap{lo, hi};
  }
  return best;
}

}  // namespace

ObstructionWitness build_witness(const SystemMatrices& sys, const BranchConstants& consts,
                                 const TorusSubset& omega, double T, int N, const WitnessOptions& opt) {
  if (N <= consts.n0)
    throw PreconditionError("build_witness: N must exceed the branch cutoff n0 = " + std::to_string(consts.n0));
  if (!(T > 0)) throw PreconditionError("build_witness: T must be positive");
  const auto speeds = transport_speeds(sys);
  std::size_t gi = 0;
  for (std::size_t g = 1; g < speeds.size(); ++g)
    if (std::abs(speeds[g].mu) < std::abs(speeds[gi].mu)) gi = g;

  ObstructionWitness w;
  w.N = N;
  w.T = T;
  w.mu = speeds[gi].mu;

  const Gap gap = largest_complement_arc(omega);
  const double sweep = std::abs(w.mu) * T;
  const double len = (gap.hi - gap.lo) - sweep - 2 * opt.margin;
  if (!(len > 0)) {
    std::ostringstream os;
    os << "build_witness: no room for a profile avoiding omega (gap " << gap.hi - gap.lo << ", sweep " << sweep
       << "); T must be below the minimal time";
    throw PreconditionError(os.str());
  }
  // The profile at time t occupies [lo - mu t, hi - mu t].
  if (w.mu >= 0) {
    w.support_lo = gap.lo + opt.margin + sweep;
    w.support_hi = gap.hi - opt.margin;
  } else {
    w.support_lo = gap.lo + opt.margin;
    w.support_hi = gap.hi - opt.margin - sweep;
  }

  const int order = 2 * N + 1 + opt.spline_excess;
  const double h = len / order;
  const double center = 0.5 * (w.support_lo + w.support_hi);
  const SpectralProfile full = spline_profile(center, len, order, opt.max_band);

  // Band: past both the coefficient peak and the envelope turning point, with the envelope
  // log |P_N(n)| + order min(0, log(2 / (n h))) below the peak by tail_log.
  double top = kNegInf;
  int band = 0;
  const double turn = 2.0 / h;
  for (int n = N + 1; n <= opt.max_band; ++n) {
    const double lp = log_highpass_factor(n, N);
    const double l = full.log_at(n) + lp;
    if (l > top) top = l;
    const double env = lp + order * std::min(0.0, std::log(2.0 / (n * h))) - std::log(kTwoPi);
    if (n > turn && env < top - opt.tail_log) {
      band = n;
      break;
    }
  }
  if (band == 0) throw NumericalError("build_witness: spectral band exceeds max_band; lower N or raise max_band");
  w.band = band;

  SpectralProfile cut = empty_profile(band);
  for (int n = -band; n <= band; ++n) {
    cut.logmag[n + band] = full.log_at(n);
    cut.phase[n + band] = full.phase_at(n);
  }
  w.chi = highpass_profile(cut, N);

  const auto limits = branch_limits(sys, consts);
  w.P0 = limits[gi].P;
  w.R0 = limits[gi].R;
  Eigen::JacobiSVD<CMat> svd(w.P0.adjoint(), Eigen::ComputeFullV);
  const CVec v = svd.matrixV().col(0);
  w.phi0 = w.P0.adjoint() * v;
  w.phi0 /= w.phi0.norm();

  const GroupContours groups = group_contours(sys);
  w.mode_vec.assign(2 * band + 1, CVec::Zero(sys.d()));
  w.mode_rem.assign(2 * band + 1, CMat::Zero(sys.d(), sys.d()));
  std::vector<std::string> errs(2 * band + 1);
  auto body = [&](int i) {
    const int n = i - band;
    if (std::abs(n) <= N) return;
    try {
      const SpectralBranch b = compute_branch(sys, groups, consts.R, n);
      w.mode_vec[i] = b.groups[gi].P.adjoint() * w.phi0;
      w.mode_rem[i] = b.groups[gi].R.adjoint();
    } catch (const std::exception& e) {
      errs[i] = e.what();
    }
  };
  if (opt.exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < 2 * band + 1; ++i) body(i);
  } else {
    for (int i = 0; i < 2 * band + 1; ++i) body(i);
  }
  for (const auto& e : errs)
    if (!e.empty()) throw NumericalError("build_witness: " + e);
  return w;
}

FourierState ObstructionWitness::exact_at(double t) const {
  const int d = static_cast<int>(phi0.size());
  FourierState g = FourierState::zeros(d, band);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < 2 * band + 1; ++i) {
    const int n = i - band;
    const cd a = chi.chiN.c(0, i);
    if (a == cd(0)) continue;
    const CMat ex = CMat(t * mode_rem[i]).exp();
    g.c.col(i) = a * std::exp(kI * (mu * n * t)) * (ex * mode_vec[i]);
  }
  return g;
}

FourierState ObstructionWitness::transport_at(double t) const {
  const int d = static_cast<int>(phi0.size());
  const CVec amp = CMat(t * R0.adjoint()).exp() * phi0;
  FourierState g = FourierState::zeros(d, band);
  for (int i = 0; i < 2 * band + 1; ++i) {
    const int n = i - band;
    const cd a = chi.chiN.c(0, i);
    if (a == cd(0)) continue;
    g.c.col(i) = a * std::exp(kI * (mu * n * t)) * amp;
  }
  return g;
}

ObservabilityReport observability_ratio(const ObstructionWitness& w, const TorusSubset& omega, double T,
                                        const WitnessOptions& opt) {
  ObservabilityReport rep;
  const TimeGrid grid = TimeGrid::uniform(0.0, T, opt.time_panels);
  const double chi = w.chi_norm();
  double leak = 0;
  for (int q = 0; q < grid.size(); ++q) {
    const double t = grid.nodes[q];
    const FourierState g = w.exact_at(t);
    const FourierState gt = w.transport_at(t);
    rep.window_sq += grid.weights[q] * sampled_l2_squared(g, omega);
    leak += grid.weights[q] * sampled_l2_squared(gt, omega);
    rep.sup_approx_error = std::max(rep.sup_approx_error, l2_norm(g - gt) / chi);
  }
  const FourierState gT = w.exact_at(T);
  rep.sup_approx_error = std::max(rep.sup_approx_error, l2_norm(gT - w.transport_at(T)) / chi);
  const double nT = l2_norm(gT);
  rep.final_sq = nT * nT;
  rep.ratio = rep.window_sq / rep.final_sq;
  rep.lower_constant = nT / chi;
  rep.transport_leak = std::sqrt(leak) / chi;
  return rep;
}

PureTransportSpace pure_transport_space(const SystemMatrices& sys, double mu, int nmax) {
  PureTransportSpace out;
  const int d = sys.d();
  const CMat B = sys.B();
  CMat kal(d, d * d);
  CMat blk = B;
  for (int k = 0; k < d; ++k) {
    kal.middleCols(k * d, d) = blk;
    blk = sys.A * blk;
  }
  out.kalman_rank = numerical_rank(kal, d * d);
  out.rank_condition = out.kalman_rank == d;
  const cd target = kI * mu;
  for (int n = -nmax; n <= nmax; ++n) {
    if (n == 0) continue;
    const CMat s = double(n) * eval_symbol(sys, kI / double(n)).adjoint();
    Eigen::ComplexEigenSolver<CMat> es(s, true);
    for (int i = 0; i < d; ++i) {
      const cd lam = es.eigenvalues()(i);
      if (std::abs(lam - target) < 1e-8 * (1.0 + std::abs(n))) {
        CVec v = es.eigenvectors().col(i);
        out.matches.push_back({n, lam, v / v.norm()});
      }
    }
  }
  return out;
}

}  // namespace nullctl
