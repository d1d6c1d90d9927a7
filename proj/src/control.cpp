#include "nullctl/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "nullctl/algebra.hpp"

namespace nullctl {

// ---------------------------------------------------------------------------------------------
// Transport control.

namespace {

constexpr double kRamp = 0.25;

double box_weight(double y, double lo, double hi) {
  const double len = hi - lo;
  return plateau(y, lo, hi, lo + kRamp * len, hi - kRamp * len);
}

}  // namespace

bool CutoffEta::inside_box(double t, double x) const {
  if (t <= delta || t >= Tprime - delta) return false;
  const double y = wrap_angle(x - a);
  return y > delta && y < (b - a) - delta;
}

double CutoffEta::eta(double t, double x) const {
  if (!inside_box(t, x)) return 0.0;
  const double y = wrap_angle(x - a);
  return box_weight(t, delta, Tprime - delta) * box_weight(y, delta, (b - a) - delta);
}

double CutoffEta::Q(double x) const {
  // 8-point periodic Lagrange interpolation on the uniform table.
  const int size = static_cast<int>(q_table.size());
  const double h = kTwoPi / size;
  const double s = wrap_angle(x) / h;
  const int base = static_cast<int>(std::floor(s)) - 3;
  double out = 0;
  for (int j = 0; j < 8; ++j) {
    double lj = 1.0;
    for (int k = 0; k < 8; ++k)
      if (k != j) lj *= (s - (base + k)) / double(j - k);
    const int idx = ((base + j) % size + size) % size;
    out += lj * q_table[idx];
  }
  return out;
}

CutoffEta cutoff_eta(double a, double b, double Tprime, double mu, double delta, int table_size) {
  if (!(b > a) || b - a >= kTwoPi) throw PreconditionError("cutoff_eta: need a single proper arc");
  if (mu == 0.0) throw PreconditionError("cutoff_eta: zero transport speed never sweeps the torus");
  if (!(delta > 0) || 2 * delta >= b - a || 2 * delta >= Tprime)
    throw PreconditionError("cutoff_eta: the cut-off box is empty");
  // Every characteristic must cross the box (a + delta, b - delta) during (delta, T' - delta).
  const double sweep = (kTwoPi - (b - a) + 2 * delta) / std::abs(mu);
  if (Tprime - 2 * delta <= sweep)
    throw PreconditionError("cutoff_eta: T' does not exceed the sweep time of the complement of the cut-off box");
  CutoffEta e;
  e.a = a;
  e.b = b;
  e.Tprime = Tprime;
  e.mu = mu;
  e.delta = delta;
  e.q_table.assign(table_size, 0.0);
  std::vector<double> gx, gw;
  gauss_legendre(16, gx, gw);
  const int panels = 64;
  const double h = Tprime / panels;
  for (int j = 0; j < table_size; ++j) {
    const double x = kTwoPi * j / table_size;
    double acc = 0;
    for (int p = 0; p < panels; ++p)
      for (int k = 0; k < 16; ++k) {
        const double s = h * (p + 0.5 * (gx[k] + 1.0));
        acc += 0.5 * h * gw[k] * e.eta(s, x + mu * s);
      }
    e.q_table[j] = acc;
  }
  e.q_min = *std::min_element(e.q_table.begin(), e.q_table.end());
  if (e.q_min < 1e-8) throw NumericalError("cutoff_eta: some characteristic misses the cut-off box");
  return e;
}

double TransportControl::operator()(double t, double y) const {
  const double w = eta.eta(t, y);
  if (w == 0.0) return 0.0;
  const double foot = y - eta.mu * t;
  return w * (fT(foot + eta.mu * eta.Tprime) - f0(foot)) / eta.Q(foot);
}

TransportControl transport_control(std::function<double(double)> f0, std::function<double(double)> fT,
                                   const CutoffEta& eta) {
  TransportControl u;
  u.eta = eta;
  u.f0 = std::move(f0);
  u.fT = std::move(fT);
  return u;
}

double characteristic_final_state(const TransportControl& u, double x, int panels) {
  std::vector<double> gx, gw;
  gauss_legendre(16, gx, gw);
  const double Tp = u.eta.Tprime, mu = u.eta.mu;
  const double foot = x - mu * Tp;
  const double h = Tp / panels;
  double acc = u.f0(foot);
  for (int p = 0; p < panels; ++p)
    for (int k = 0; k < 16; ++k) {
      const double s = h * (p + 0.5 * (gx[k] + 1.0));
      acc += 0.5 * h * gw[k] * u(s, foot + mu * s);
    }
  return acc;
}

// ---------------------------------------------------------------------------------------------
// Target functionals.

std::vector<GramFunctional> target_functionals(const SystemMatrices& sys, const BranchTable& branches,
                                               TargetKind kind, int nmax) {
  std::vector<GramFunctional> out;
  const int n0 = branches.n0();
  const int d = sys.d();
  if (kind == TargetKind::kLow) {
    for (int n = -std::min(n0, nmax); n <= std::min(n0, nmax); ++n)
      for (int c = 0; c < d; ++c) out.push_back({n, CVec::Unit(d, c)});
    return out;
  }
  if (nmax > branches.nmax()) throw PreconditionError("target_functionals: branch table too small");
  for (int n = -nmax; n <= nmax; ++n) {
    if (!branches.has(n)) continue;
    const SpectralBranch& br = branches.at(n);
    if (kind == TargetKind::kHyperbolic) {
      Eigen::JacobiSVD<CMat> svd(br.Ph.adjoint(), Eigen::ComputeThinU);
      for (int c = 0; c < sys.d1; ++c) out.push_back({n, svd.matrixU().col(c)});
    } else {
      for (int c = 0; c < sys.d2; ++c) {
        CVec phi(d);
        phi.head(sys.d1) = br.G.col(c);
        phi.tail(sys.d2) = CVec::Unit(sys.d2, c);
        out.push_back({n, phi});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Gramian engine.

GramianControl::GramianControl(std::vector<GramFunctional> functionals, std::vector<CMat> dirs, TimeGrid grid,
                               std::vector<double> time_weight, const TorusSubset& omega, double omega_fraction,
                               std::vector<bool> mask, int state_nmax, const GramOptions& opt)
    : functionals_(std::move(functionals)),
      dirs_(std::move(dirs)),
      grid_(std::move(grid)),
      tw_(std::move(time_weight)),
      omega_(omega),
      fraction_(omega_fraction),
      mask_(std::move(mask)),
      nmax_(state_nmax) {
  const int F = size();
  const int Q = grid_.size();
  if (static_cast<int>(dirs_.size()) != Q || static_cast<int>(tw_.size()) != Q)
    throw PreconditionError("GramianControl: one direction block and one time weight per node");
  for (const auto& f : functionals_)
    if (std::abs(f.n) > nmax_) throw PreconditionError("GramianControl: functional outside the state band");
  const int m = Q > 0 ? static_cast<int>(dirs_[0].rows()) : static_cast<int>(mask_.size());
  for (auto& dq : dirs_)
    for (int c = 0; c < m; ++c)
      if (c < static_cast<int>(mask_.size()) && !mask_[c]) dq.row(c).setZero();

  band_ = 2 * nmax_;
  if (omega_.is_full()) {
    sigma_hat_.assign(2 * band_ + 1, cd(0));
    sigma_hat_[band_] = 1.0;
  } else {
    const double frac = fraction_;
    const TorusSubset om = omega_;
    sigma_hat_ = fourier_coefficients([om, frac](double x) { return om.plateau_weight(x, frac); }, band_,
                                      std::max(16384, next_pow2(8 * band_ + 8)));
  }

  CMat D(static_cast<Eigen::Index>(m) * Q, F);
  for (int q = 0; q < Q; ++q) D.middleRows(static_cast<Eigen::Index>(q) * m, m) =
      std::sqrt(std::max(0.0, grid_.weights[q] * tw_[q])) * dirs_[q];
  gram_.resize(F, F);
  auto column = [&](int j) {
    for (int i = 0; i <= j; ++i) {
      const cd v = D.col(i).dot(D.col(j)) * sigma_hat_[functionals_[i].n - functionals_[j].n + band_];
      gram_(i, j) = v;
      gram_(j, i) = std::conj(v);
    }
    gram_(j, j) = gram_(j, j).real();
  };
  if (opt.exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (int j = 0; j < F; ++j) column(j);
  } else {
    for (int j = 0; j < F; ++j) column(j);
  }

  if (F == 0) return;
  scale_.resize(F);
  bool degenerate = false;
  for (int i = 0; i < F; ++i) {
    const double g = gram_(i, i).real();
    if (!(g > 0)) degenerate = true;
    scale_(i) = g > 0 ? 1.0 / std::sqrt(g) : 1.0;
  }
  equilibrated_ = scale_.asDiagonal() * gram_ * scale_.asDiagonal();
  Eigen::SelfAdjointEigenSolver<CMat> es_eq(equilibrated_, Eigen::EigenvaluesOnly);
  const double lo = es_eq.eigenvalues()(0), hi = es_eq.eigenvalues()(F - 1);
  condition_ = (lo > 0 && !degenerate) ? hi / lo : std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<CMat> es_raw(gram_, Eigen::EigenvaluesOnly);
  min_eig_ = es_raw.eigenvalues()(0);
  max_eig_ = es_raw.eigenvalues()(F - 1);
  singular_ = !(condition_ <= opt.max_condition);
  if (singular_ && opt.throw_on_singular) {
    std::ostringstream os;
    os << "target too high-dimensional for this (T, omega): equilibrated Gram condition " << condition_;
    throw NumericalError(os.str());
  }
  ldlt_.compute(equilibrated_);
}

CVec GramianControl::values(const FourierState& f) const {
  CVec v(size());
  for (int i = 0; i < size(); ++i) {
    const auto& fn = functionals_[i];
    v(i) = f.has(fn.n) ? fn.phi.dot(f.mode(fn.n)) : cd(0);
  }
  return v;
}

CVec GramianControl::solve(const CVec& rhs) const {
  if (singular_) throw NumericalError("GramianControl::solve: Gram matrix is numerically singular");
  const CVec y = scale_.cast<cd>().cwiseProduct(rhs);
  CVec x = ldlt_.solve(y);
  x += ldlt_.solve(y - equilibrated_ * x);
  return scale_.cast<cd>().cwiseProduct(x);
}

ControlSignal GramianControl::synthesize(const CVec& lambda, int m) const {
  ControlSignal u = ControlSignal::zeros(grid_, m, nmax_);
  const double frac = fraction_;
  const TorusSubset om = omega_;
  u.weights = {[om, frac](double x) { return om.plateau_weight(x, frac); }};
  u.support.omega = omega_;
  u.support.mask = mask_;
  if (u.support.mask.empty()) u.support.mask.assign(m, true);
  std::vector<int> active;
  for (const auto& f : functionals_)
    if (std::find(active.begin(), active.end(), f.n) == active.end()) active.push_back(f.n);
  const int width = 2 * nmax_ + 1;
  for (int q = 0; q < grid_.size(); ++q) {
    CMat poly = CMat::Zero(m, width);
    for (int j = 0; j < size(); ++j) poly.col(functionals_[j].n + nmax_) += tw_[q] * lambda(j) * dirs_[q].col(j);
    CMat coeffs = CMat::Zero(m, width);
    for (int n = -nmax_; n <= nmax_; ++n)
      for (int k : active) coeffs.col(n + nmax_) += sigma_hat_[n - k + band_] * poly.col(k + nmax_);
    u.weight_index[q] = 0;
    u.poly[q] = std::move(poly);
    u.coeffs[q] = std::move(coeffs);
  }
  return u;
}

CMat GramianControl::adjoint_columns() const {
  const int Q = grid_.size();
  const int m = Q > 0 ? static_cast<int>(dirs_[0].rows()) : 0;
  CMat D(static_cast<Eigen::Index>(m) * Q, size());
  for (int q = 0; q < Q; ++q) D.middleRows(static_cast<Eigen::Index>(q) * m, m) =
      std::sqrt(std::max(0.0, grid_.weights[q] * tw_[q])) * dirs_[q];
  return D;
}

int panels_for(double len, double rate, int min_panels, int max_panels) {
  const double want = std::ceil(len * rate / 4.0);
  if (!(want > min_panels)) return min_panels;
  return static_cast<int>(std::min<double>(want, max_panels));
}

// ---------------------------------------------------------------------------------------------
// HUM.

namespace {

std::vector<int> distinct_modes(const std::vector<GramFunctional>& fs) {
  std::vector<int> modes;
  for (const auto& f : fs) modes.push_back(f.n);
  std::sort(modes.begin(), modes.end());
  modes.erase(std::unique(modes.begin(), modes.end()), modes.end());
  return modes;
}

double rayleigh_rate(const SystemMatrices& sys, const std::vector<GramFunctional>& fs) {
  double rate = 0;
  for (const auto& f : fs) {
    const double dn = f.n;
    const CMat L = dn * dn * sys.B() + kI * dn * sys.A + sys.K;
    const double nrm = f.phi.squaredNorm();
    if (nrm > 0) rate = std::max(rate, std::abs(f.phi.dot(L.adjoint() * f.phi)) / nrm);
  }
  return rate;
}

std::vector<double> plateau_profile(const TimeGrid& grid, double t0, double t1, double ramp) {
  std::vector<double> tw(grid.size());
  const double len = t1 - t0;
  for (int q = 0; q < grid.size(); ++q)
    tw[q] = ramp > 0 ? plateau(grid.nodes[q], t0, t1, t0 + ramp * len, t1 - ramp * len) : 1.0;
  return tw;
}

}  // namespace

GramianControl build_hum_gramian(const SystemMatrices& sys, const std::vector<GramFunctional>& functionals,
                                 double t0, double t1, const TorusSubset& omega, const std::vector<bool>& mask,
                                 int state_nmax, const HumOptions& opt) {
  if (!(t1 > t0)) throw PreconditionError("build_hum_gramian: empty window");
  const int panels = opt.panels > 0 ? opt.panels : panels_for(t1 - t0, rayleigh_rate(sys, functionals));
  TimeGrid grid = TimeGrid::uniform(t0, t1, panels, 8);
  const int Q = grid.size(), m = sys.m(), F = static_cast<int>(functionals.size());
  std::vector<CMat> dirs(Q, CMat::Zero(m, F));
  const std::vector<int> modes = distinct_modes(functionals);
  const CMat Mh = sys.M.adjoint();
  auto body = [&](int idx) {
    const int n = modes[idx];
    const ModeGenerator gen(sys, n);
    for (int q = 0; q < Q; ++q) {
      const CMat back = Mh * gen.adjoint_propagator(t1 - grid.nodes[q]);
      for (int i = 0; i < F; ++i)
        if (functionals[i].n == n) dirs[q].col(i) = back * functionals[i].phi;
    }
  };
  const int count = static_cast<int>(modes.size());
  if (opt.gram.exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) body(i);
  } else {
    for (int i = 0; i < count; ++i) body(i);
  }
  std::vector<double> tw = plateau_profile(grid, t0, t1, opt.ramp_fraction);
  return GramianControl(functionals, std::move(dirs), std::move(grid), std::move(tw), omega, opt.omega_fraction,
                        mask, state_nmax, opt.gram);
}

HumResult hum_gramian_control(const SystemMatrices& sys, const BranchTable& branches, TargetKind kind,
                              int target_nmax, const FourierState& fstar, const FourierState& f0, double t0,
                              double t1, const TorusSubset& omega, const std::vector<bool>& mask,
                              const HumOptions& opt) {
  const auto functionals = target_functionals(sys, branches, kind, std::min(target_nmax, f0.nmax));
  if (functionals.empty()) throw PreconditionError("hum_gramian_control: no target functionals");
  const GramianControl gram = build_hum_gramian(sys, functionals, t0, t1, omega, mask, f0.nmax, opt);
  const PropagatorBank bank(sys, f0.nmax, opt.gram.exec);
  const FourierState free = evolve_window(sys, bank, f0, t0, t1, nullptr, opt.gram.exec);
  HumResult r;
  r.target = gram.values(fstar.resized(f0.nmax));
  const CVec base = gram.values(free);
  r.lambda = gram.solve(r.target - base);
  r.u = gram.synthesize(r.lambda, sys.m());
  r.final_state = evolve_window(sys, bank, f0, t0, t1, &r.u, opt.gram.exec);
  r.achieved = gram.values(r.final_state);
  const double scale = std::max({r.target.norm(), base.norm(), 1e-300});
  r.relative_error = (r.achieved - r.target).norm() / scale;
  r.energy = r.u.energy();
  r.dual_energy = r.lambda.dot(r.target - base).real();
  r.condition = gram.condition();
  r.min_eigenvalue = gram.min_eigenvalue();
  return r;
}

// ---------------------------------------------------------------------------------------------
// Parabolic moment problem.

CMat parabolic_symbol(const SystemMatrices& sys, const CMat& G, int n) {
  if (n == 0) throw PreconditionError("parabolic_symbol: mode 0 has no parabolic branch");
  const cd iz = kI / double(n);
  const double z2 = 1.0 / (double(n) * n);
  return sys.D.adjoint() - iz * sys.a22().adjoint() + z2 * sys.k22().adjoint() -
         (iz * sys.a12().adjoint() - z2 * sys.k12().adjoint()) * G;
}

FourierState parabolic_part(const FourierState& f, const BranchTable& branches, int N) {
  const int top = N < 0 ? f.nmax : std::min(f.nmax, N);
  FourierState out = FourierState::zeros(f.dim(), f.nmax);
  for (int n = -top; n <= top; ++n)
    if (branches.has(n)) out.mode_ref(n) = branches.at(n).Pp * f.mode(n);
  return out;
}

FourierState hyperbolic_part(const FourierState& f, const BranchTable& branches, int N) {
  const int top = N < 0 ? f.nmax : std::min(f.nmax, N);
  FourierState out = FourierState::zeros(f.dim(), f.nmax);
  for (int n = -top; n <= top; ++n)
    if (branches.has(n)) out.mode_ref(n) = branches.at(n).Ph * f.mode(n);
  return out;
}

namespace {

bool acts_on_parabolic_rows_only(const SystemMatrices& sys, const std::vector<bool>& mask) {
  const CMat m1 = sys.m1();
  for (int c = 0; c < sys.m(); ++c)
    if (mask[c] && m1.col(c).norm() > 0) return false;
  return true;
}

struct MomentGram {
  MomentProblem problem;
  GramianControl gram;
};

// Gram matrix of the parabolic functionals, with adjoint directions from exp(-s n^2 E2(n)).
MomentGram build_moment_gram(const SystemMatrices& sys, const BranchTable& branches, double t0, double T, int N,
                             int state_nmax, const TorusSubset& omega, const std::vector<bool>& mask,
                             int panels, double omega_fraction, const GramOptions& gopt) {
  if (!acts_on_parabolic_rows_only(sys, mask))
    throw PreconditionError("moment control: the masked control reaches transported components");
  MomentGram out;
  MomentProblem& mp = out.problem;
  mp.n0 = branches.n0();
  mp.N = std::min(N, state_nmax);
  mp.t0 = t0;
  mp.T = T;
  auto functionals = target_functionals(sys, branches, TargetKind::kParabolic, mp.N);
  if (functionals.empty()) throw PreconditionError("moment control: no parabolic modes in the band");
  for (int n = -mp.N; n <= mp.N; ++n)
    if (branches.has(n)) {
      mp.modes.push_back(n);
      mp.E2.push_back(parabolic_symbol(sys, branches.at(n).G, n));
    }
  double rate = 0;
  for (std::size_t k = 0; k < mp.modes.size(); ++k)
    rate = std::max(rate, double(mp.modes[k]) * mp.modes[k] * mp.E2[k].norm());
  const int P = panels > 0 ? panels : panels_for(T, rate);
  TimeGrid grid = TimeGrid::uniform(t0, t0 + T, P, 8);
  const int Q = grid.size(), m = sys.m(), F = static_cast<int>(functionals.size());
  const int d2 = sys.d2;
  std::vector<CMat> dirs(Q, CMat::Zero(m, F));
  const CMat M2h = sys.m2().adjoint();
  auto body = [&](int k) {
    const int n = mp.modes[k];
    const CMat gen = double(n) * n * mp.E2[k];
    for (int q = 0; q < Q; ++q) {
      // chi(t) = exp(-(T - t) n^2 E2) chi(T), and M^H psi = M2^H chi on parabolic-only columns.
      const CMat chi = CMat(-(t0 + T - grid.nodes[q]) * gen).exp();
      dirs[q].middleCols(k * d2, d2) = M2h * chi;
    }
  };
  const int count = static_cast<int>(mp.modes.size());
  if (gopt.exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < count; ++k) body(k);
  } else {
    for (int k = 0; k < count; ++k) body(k);
  }
  std::vector<double> tw(Q);
  for (int q = 0; q < Q; ++q) tw[q] = moment_time_profile((grid.nodes[q] - t0) / T);
  out.gram = GramianControl(std::move(functionals), std::move(dirs), std::move(grid), std::move(tw), omega,
                            omega_fraction, mask, state_nmax, gopt);
  mp.gram = out.gram.gram();
  mp.condition = out.gram.condition();
  mp.min_eigenvalue = out.gram.min_eigenvalue();
  return out;
}

}  // namespace

MomentResult parabolic_moment_control(const SystemMatrices& sys, const BranchTable& branches,
                                      const FourierState& f0, double t0, double T, int N,
                                      const TorusSubset& omega, const std::vector<bool>& mask,
                                      const MomentOptions& opt) {
  MomentGram mg = build_moment_gram(sys, branches, t0, T, N, f0.nmax, omega, mask, opt.panels, opt.omega_fraction,
                                    opt.gram);
  const PropagatorBank bank(sys, f0.nmax, opt.gram.exec);
  const FourierState free = evolve_window(sys, bank, f0, t0, t0 + T, nullptr, opt.gram.exec);
  MomentResult r;
  r.problem = std::move(mg.problem);
  r.problem.rhs = -mg.gram.values(free);
  r.problem.V = mg.gram.solve(r.problem.rhs);
  r.u = mg.gram.synthesize(r.problem.V, sys.m());
  r.final_state = evolve_window(sys, bank, f0, t0, t0 + T, &r.u, opt.gram.exec);
  const double before = l2_norm(parabolic_part(f0, branches));
  const double after = l2_norm(parabolic_part(r.final_state, branches, r.problem.N));
  r.residual = before > 0 ? after / before : after;
  return r;
}

// ---------------------------------------------------------------------------------------------
// Lebeau-Robbiano.

LRSchedule LRSchedule::build(double t0, double T, double delta, double rho, int Nmax) {
  if (!(rho > 0)) throw PreconditionError("LRSchedule: rho must be positive");
  if (!(delta > 0) || 2 * delta >= T) throw PreconditionError("LRSchedule: need 0 < 2 delta < T");
  LRSchedule s;
  s.t0 = t0;
  s.T = T;
  s.delta = delta;
  s.rho = rho;
  const double q = std::pow(2.0, -rho);
  const double sum = q / (1.0 - q);
  s.A_const = (T - 2 * delta) / (2 * sum);
  double anchor = t0 + delta;
  for (int ell = 1; (1 << ell) <= Nmax; ++ell) {
    LRStage st;
    st.ell = ell;
    st.N = 1 << ell;
    st.T_ell = s.A_const * std::pow(2.0, -rho * ell);
    st.control_start = anchor;
    st.control_end = anchor + st.T_ell;
    st.end = anchor + 2 * st.T_ell;
    anchor = st.end;
    s.stages.push_back(st);
  }
  return s;
}

namespace {

// Stage Gram matrices built once so repeated applications only solve.
struct LRPlan {
  LRSchedule schedule;
  std::vector<std::optional<GramianControl>> grams;

  LRPlan(const SystemMatrices& sys, const BranchTable& branches, int state_nmax, double t0, double T, double delta,
         double rho, int Nmax, const TorusSubset& omega, const std::vector<bool>& mask, const LROptions& opt)
      : schedule(LRSchedule::build(t0, T, delta, rho, Nmax)) {
    grams.resize(schedule.stages.size());
    for (std::size_t k = 0; k < schedule.stages.size(); ++k) {
      LRStage& st = schedule.stages[k];
      if (st.N <= branches.n0()) continue;
      GramOptions gopt = opt.gram;
      gopt.throw_on_singular = false;
      MomentGram mg = build_moment_gram(sys, branches, st.control_start, st.T_ell, st.N, state_nmax, omega, mask,
                                        0, opt.omega_fraction, gopt);
      st.gram_condition = mg.gram.condition();
      if (mg.gram.singular()) {
        if (opt.skip_singular_stages) {
          st.skipped = true;
          continue;
        }
        std::ostringstream os;
        os << "Lebeau-Robbiano stage " << st.ell << " (N = " << st.N << ", T_l = " << st.T_ell
           << "): Gram condition " << st.gram_condition << "; use fewer frequencies or a longer horizon";
        throw NumericalError(os.str());
      }
      grams[k] = std::move(mg.gram);
    }
  }

  LRResult apply(const SystemMatrices& sys, const PropagatorBank& bank, const BranchTable& branches,
                 const FourierState& f0, Exec exec) const {
    LRResult r;
    r.schedule = schedule;
    const int m = sys.m(), nmax = f0.nmax;
    const double a0 = schedule.t0 + schedule.delta;
    FourierState f = evolve_window(sys, bank, f0, schedule.t0, a0, nullptr, exec);
    r.u = ControlSignal::zeros(TimeGrid::gap(schedule.t0, a0), m, nmax);
    r.stage_norms.push_back(l2_norm(parabolic_part(f, branches)));
    for (std::size_t k = 0; k < schedule.stages.size(); ++k) {
      const LRStage& st = schedule.stages[k];
      if (grams[k]) {
        const GramianControl& g = *grams[k];
        const FourierState free = evolve_window(sys, bank, f, st.control_start, st.control_end, nullptr, exec);
        const ControlSignal piece = g.synthesize(g.solve(-g.values(free)), m);
        f = evolve_window(sys, bank, f, st.control_start, st.control_end, &piece, exec);
        r.u.append(piece);
      } else {
        f = evolve_window(sys, bank, f, st.control_start, st.control_end, nullptr, exec);
        r.u.append(ControlSignal::zeros(TimeGrid::gap(st.control_start, st.control_end), m, nmax));
      }
      f = evolve_window(sys, bank, f, st.control_end, st.end, nullptr, exec);
      r.u.append(ControlSignal::zeros(TimeGrid::gap(st.control_end, st.end), m, nmax));
      r.stage_norms.push_back(l2_norm(parabolic_part(f, branches)));
    }
    const double last = schedule.stages.empty() ? a0 : schedule.stages.back().end;
    const double tend = schedule.t0 + schedule.T;
    f = evolve_window(sys, bank, f, last, tend, nullptr, exec);
    if (tend > last) r.u.append(ControlSignal::zeros(TimeGrid::gap(last, tend), m, nmax));
    const double before = l2_norm(parabolic_part(f0, branches));
    const double after = l2_norm(parabolic_part(f, branches));
    r.final_residual = before > 0 ? after / before : after;
    r.final_state = std::move(f);
    return r;
  }
};

}  // namespace

LRResult lebeau_robbiano(const SystemMatrices& sys, const BranchTable& branches, const FourierState& f0,
                         double t0, double T, double delta, double rho, int Nmax, const TorusSubset& omega,
                         const std::vector<bool>& mask, const LROptions& opt) {
  const LRPlan plan(sys, branches, f0.nmax, t0, T, delta, rho, Nmax, omega, mask, opt);
  const PropagatorBank bank(sys, f0.nmax, opt.gram.exec);
  LRResult r = plan.apply(sys, bank, branches, f0, opt.gram.exec);
  r.reached_tol = r.final_residual <= opt.tol;
  return r;
}

// ---------------------------------------------------------------------------------------------
// Pipeline.

ControlSignal derivative_control(const ControlSignal& u, int order) {
  if (order < 0) throw PreconditionError("derivative_control: negative order");
  ControlSignal out = u;
  for (int q = 0; q < out.grid.size(); ++q) {
    for (int n = -out.nmax; n <= out.nmax; ++n) out.coeffs[q].col(n + out.nmax) *= std::pow(kI * double(n), order);
    out.weight_index[q] = -1;
    out.poly[q] = CMat();
  }
  out.weights.clear();
  return out;
}

std::vector<bool> transport_mask(const SystemMatrices& sys) {
  std::vector<bool> mask(sys.m());
  const CMat m1 = sys.m1();
  for (int c = 0; c < sys.m(); ++c) mask[c] = m1.col(c).norm() > 0;
  return mask;
}

std::vector<bool> parabolic_mask(const SystemMatrices& sys) {
  std::vector<bool> mask(sys.m());
  const CMat m2 = sys.m2();
  for (int c = 0; c < sys.m(); ++c) mask[c] = m2.col(c).norm() > 0;
  return mask;
}

namespace {

// Dimension of the smallest subspace containing the columns of A21 and K21 and invariant
// under A22 and K22.
int coupled_reachable_rank(const SystemMatrices& sys) {
  const int d2 = sys.d2;
  CMat span(d2, 0);
  auto grow = [&](const CMat& cols) {
    CMat next(d2, span.cols() + cols.cols());
    next << span, cols;
    Eigen::ColPivHouseholderQR<CMat> qr(next);
    qr.setThreshold(1e-10);
    const int r = static_cast<int>(qr.rank());
    span = CMat(qr.householderQ()).leftCols(r);
  };
  CMat seed(d2, 2 * sys.d1);
  seed << sys.a21(), sys.k21();
  grow(seed);
  for (int it = 0; it < d2 && span.cols() > 0; ++it) {
    const int before = static_cast<int>(span.cols());
    CMat cols(d2, 2 * before);
    cols << sys.a22() * span, sys.k22() * span;
    grow(cols);
    if (span.cols() == before) break;
  }
  return static_cast<int>(span.cols());
}

// exp(s L_n) Ph, with Ph = U W^H (W^H U = I) and L_n restricted to the invariant range of Ph.
CMat restricted_backward(const SystemMatrices& sys, const CMat& Ph, int n, double s, int rank) {
  Eigen::JacobiSVD<CMat> svd(Ph, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const CMat U = svd.matrixU().leftCols(rank);
  const CMat Wh = svd.singularValues().head(rank).cast<cd>().asDiagonal() * svd.matrixV().leftCols(rank).adjoint();
  const double dn = n;
  const CMat L = dn * dn * sys.B() + kI * dn * sys.A + sys.K;
  const CMat Lh = Wh * L * U;
  return U * CMat(s * Lh).exp() * Wh;
}

bool control_reaches_parabolic(const SystemMatrices& sys) {
  return numerical_rank(sys.m2(), sys.d2) == sys.d2;
}

}  // namespace

PipelineResult full_pipeline(const SystemMatrices& sys, const FourierState& f0, double T, const TorusSubset& omega,
                             const PipelineOptions& opt) {
  const ValidationReport vr = validate_system(sys);
  if (!vr.ok()) throw PreconditionError("full_pipeline: " + vr.summary());
  PipelineResult res;
  res.Tstar = minimal_time(sys, omega);
  if (!std::isfinite(res.Tstar))
    throw PreconditionError("not controllable even with an additional control: some transport speed vanishes");
  if (T <= res.Tstar) {
    std::ostringstream os;
    os << "T = " << T << " does not exceed the minimal time T* = " << res.Tstar;
    throw PreconditionError(os.str());
  }
  if (numerical_rank(sys.m1(), sys.d1) < sys.d1)
    throw PreconditionError("full_pipeline: the control does not reach every transported component");
  if (!control_reaches_parabolic(sys) && coupled_reachable_rank(sys) < sys.d2)
    throw PreconditionError("full_pipeline: Kalman condition fails, the diffusive block is not reached");
  // Mode 0 evolves by f' = -K f + M u.
  if (!kalman_rank(-sys.K, sys.M).satisfied)
    throw PreconditionError("full_pipeline: the mean mode is not controllable, rank (M | KM | ...) < d");

  res.Tprime = opt.Tprime > 0 ? opt.Tprime : res.Tstar + opt.Tprime_fraction * (T - res.Tstar);
  if (res.Tprime <= res.Tstar || res.Tprime >= T) throw PreconditionError("full_pipeline: need T* < T' < T");
  res.tau = std::min(0.1 * T, T - res.Tprime) / 2;
  const double Tp = res.Tprime, Tz = T - res.tau;
  const int nmax = f0.nmax, m = sys.m();
  const Exec exec = opt.exec;

  const BranchConstants consts = branch_constants(sys, separation_radius(sys, opt.n0_override));
  const BranchTable branches(sys, consts, std::max(nmax, consts.n0 + 1), exec);
  const PropagatorBank bank(sys, nmax, exec);
  const std::vector<bool> all(m, true);

  HumOptions hopt;
  hopt.gram.exec = exec;
  hopt.gram.throw_on_singular = false;
  const auto hyp = target_functionals(sys, branches, TargetKind::kHyperbolic, nmax);
  std::optional<GramianControl> Hg;
  if (!hyp.empty()) {
    Hg = build_hum_gramian(sys, hyp, 0.0, Tp, omega, transport_mask(sys), nmax, hopt);
    res.hyperbolic_condition = Hg->condition();
    res.hyperbolic_min_eigenvalue = Hg->min_eigenvalue();
    if (Hg->singular()) {
      std::ostringstream os;
      os << "full_pipeline: transport Gramian singular (condition " << Hg->condition() << ")";
      throw NumericalError(os.str());
    }
  }

  // Parabolic stage on (T', Tz).
  std::optional<LRPlan> lr;
  std::optional<GramianControl> Pg;
  const auto para = target_functionals(sys, branches, TargetKind::kParabolic, nmax);
  const std::vector<bool> pmask = parabolic_mask(sys);
  const bool direct = !para.empty() && acts_on_parabolic_rows_only(sys, pmask) && control_reaches_parabolic(sys);
  if (direct) {
    LROptions lopt;
    lopt.gram.exec = exec;
    lopt.skip_singular_stages = true;
    const double len = Tz - Tp;
    lr.emplace(sys, branches, nmax, Tp, len, opt.lr_delta_fraction * len, opt.lr_rho, nmax, omega, pmask, lopt);
    res.parabolic_stage = "lebeau-robbiano";
    for (const auto& st : lr->schedule.stages) res.parabolic_condition = std::max(res.parabolic_condition,
                                                                                   st.gram_condition);
  } else if (!para.empty()) {
    Pg = build_hum_gramian(sys, para, Tp, Tz, omega, all, nmax, hopt);
    res.parabolic_stage = "gramian";
    res.parabolic_condition = Pg->condition();
    if (!std::isfinite(Pg->condition())) {
      std::ostringstream os;
      os << "full_pipeline: parabolic Gramian singular (condition " << Pg->condition() << ")";
      throw PreconditionError(os.str());
    }
    // Too ill-conditioned to solve on its own: the window runs free and the trailing stage absorbs it.
    if (Pg->singular()) {
      Pg.reset();
      res.parabolic_stage = "free";
    }
  }

  auto trailing = target_functionals(sys, branches, TargetKind::kLow, nmax);
  const GramianControl Zg = build_hum_gramian(sys, trailing, Tz, T, omega, all, nmax, hopt);
  res.trailing_condition = Zg.condition();
  if (!std::isfinite(Zg.condition())) {
    std::ostringstream os;
    os << "full_pipeline: trailing Gramian singular (condition " << Zg.condition() << ")";
    throw PreconditionError(os.str());
  }

  const FourierState free_h = evolve_window(sys, bank, f0, 0.0, Tp, nullptr, exec);
  const CVec base_h = Hg ? Hg->values(free_h) : CVec();

  struct Run {
    ControlSignal u;
    FourierState fT;
  };
  auto run = [&](const CVec& y) {
    Run out;
    FourierState f = free_h;
    if (Hg) {
      ControlSignal uh = Hg->synthesize(Hg->solve(y - base_h), m);
      f = evolve_window(sys, bank, f0, 0.0, Tp, &uh, exec);
      out.u = std::move(uh);
    } else {
      out.u = ControlSignal::zeros(TimeGrid::gap(0.0, Tp), m, nmax);
    }
    if (lr) {
      LRResult r = lr->apply(sys, bank, branches, f, exec);
      f = r.final_state;
      out.u.append(r.u);
    } else if (Pg) {
      const FourierState free = evolve_window(sys, bank, f, Tp, Tz, nullptr, exec);
      const ControlSignal up = Pg->synthesize(Pg->solve(-Pg->values(free)), m);
      f = evolve_window(sys, bank, f, Tp, Tz, &up, exec);
      out.u.append(up);
    } else {
      f = evolve_window(sys, bank, f, Tp, Tz, nullptr, exec);
      out.u.append(ControlSignal::zeros(TimeGrid::gap(Tp, Tz), m, nmax));
    }
    const FourierState free = evolve_window(sys, bank, f, Tz, T, nullptr, exec);
    const ControlSignal uz = Zg.synthesize(Zg.solve(-Zg.values(free)), m);
    out.fT = evolve_window(sys, bank, f, Tz, T, &uz, exec);
    out.u.append(uz);
    return out;
  };

  // Hyperbolic content of f(T) read at T' through backward transport, propagated inside
  // Im Ph only so that diffusive roundoff is never amplified.
  std::map<int, CMat> back;
  for (const auto& f : hyp) {
    if (back.count(f.n)) continue;
    back[f.n] = restricted_backward(sys, branches.at(f.n).Ph, f.n, T - Tp, sys.d1);
  }
  auto pullback = [&](const FourierState& fT) {
    CVec v(hyp.size());
    for (std::size_t i = 0; i < hyp.size(); ++i) v(i) = hyp[i].phi.dot(back.at(hyp[i].n) * fT.mode(hyp[i].n));
    return v;
  };

  const double f0norm = std::max(l2_norm(f0), 1e-300);
  bool converged = false;
  Run best;
  if (!Zg.singular()) {
    res.path = "fixed-point";
    CVec y = CVec::Zero(hyp.size());
    best = run(y);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iterations && !hyp.empty(); ++it) {
      const CVec r = pullback(best.fT);
      const double rel = r.norm() / f0norm;
      res.iteration_residuals.push_back(rel);
      res.iterations = it + 1;
      if (rel <= opt.tol) break;
      if (!(rel < 0.9 * prev) && it >= 2) break;
      prev = rel;
      y -= r;
      best = run(y);
    }
    converged = l2_norm(best.fT) <= opt.accept * f0norm;
  }
  if (!converged) {
    // Stacked system: every functional at T against controls spread over the whole horizon.
    res.path = "direct";
    std::vector<GramFunctional> stacked = target_functionals(sys, branches, TargetKind::kLow, nmax);
    stacked.insert(stacked.end(), hyp.begin(), hyp.end());
    stacked.insert(stacked.end(), para.begin(), para.end());
    const GramianControl Sg = build_hum_gramian(sys, stacked, 0.0, T, omega, all, nmax, hopt);
    res.stacked_condition = Sg.condition();
    if (Sg.singular()) {
      std::ostringstream os;
      os << "full_pipeline: stacked Gramian singular (condition " << Sg.condition() << ")";
      if (!std::isfinite(Sg.condition())) throw PreconditionError(os.str());
      throw NumericalError(os.str());
    }
    const FourierState free = evolve_window(sys, bank, f0, 0.0, T, nullptr, exec);
    best.u = Sg.synthesize(Sg.solve(-Sg.values(free)), m);
    best.fT = evolve_window(sys, bank, f0, 0.0, T, &best.u, exec);
    res.iteration_residuals.push_back(l2_norm(best.fT) / f0norm);
  }

  res.u = std::move(best.u);
  res.final_state = evolve(sys, f0, &res.u, T, exec);
  res.relative_norm = l2_norm(res.final_state) / f0norm;
  res.energy = res.u.energy();
  return res;
}

}  // namespace nullctl
