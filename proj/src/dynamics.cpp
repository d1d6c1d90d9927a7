#include "nullctl/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "nullctl/fft.hpp"

namespace nullctl {

FourierState FourierState::zeros(int dim, int nmax) {
  FourierState f;
  f.nmax = nmax;
  f.c = CMat::Zero(dim, 2 * nmax + 1);
  return f;
}

FourierState FourierState::resized(int new_nmax) const {
  FourierState out = zeros(dim(), new_nmax);
  const int k = std::min(nmax, new_nmax);
  for (int n = -k; n <= k; ++n) out.c.col(n + new_nmax) = c.col(n + nmax);
  return out;
}

bool FourierState::is_real(double tol) const {
  for (int n = 0; n <= nmax; ++n)
    if ((c.col(n + nmax) - c.col(-n + nmax).conjugate()).norm() > tol * std::max(1.0, c.norm())) return false;
  return true;
}

CVec FourierState::eval(double x) const {
  CVec v = CVec::Zero(dim());
  for (int n = -nmax; n <= nmax; ++n) v += c.col(n + nmax) * std::exp(kI * (double(n) * x));
  return v;
}

FourierState FourierState::operator+(const FourierState& o) const {
  const int k = std::max(nmax, o.nmax);
  FourierState a = resized(k), b = o.resized(k);
  a.c += b.c;
  return a;
}

FourierState FourierState::operator-(const FourierState& o) const {
  const int k = std::max(nmax, o.nmax);
  FourierState a = resized(k), b = o.resized(k);
  a.c -= b.c;
  return a;
}

FourierState FourierState::operator*(cd s) const {
  FourierState a = *this;
  a.c *= s;
  return a;
}

double l2_norm(const FourierState& f) { return std::sqrt(kTwoPi) * f.c.norm(); }

cd inner(const FourierState& f, const FourierState& g) {
  const int k = std::max(f.nmax, g.nmax);
  const FourierState a = f.resized(k), b = g.resized(k);
  return kTwoPi * (b.c.conjugate().cwiseProduct(a.c)).sum();
}

double sobolev_norm(const FourierState& f, double s) {
  double acc = 0;
  for (int n = -f.nmax; n <= f.nmax; ++n)
    acc += std::pow(1.0 + double(n) * n, s) * f.c.col(n + f.nmax).squaredNorm();
  return std::sqrt(acc);
}

double negative_norm_highpass(const FourierState& f, int n0) {
  double acc = 0;
  for (int n = -f.nmax; n <= f.nmax; ++n)
    if (std::abs(n) > n0) acc += f.c.col(n + f.nmax).squaredNorm() / (double(n) * n);
  return std::sqrt(acc);
}

ControlSignal ControlSignal::zeros(const TimeGrid& grid, int m, int nmax) {
  ControlSignal u;
  u.grid = grid;
  u.m = m;
  u.nmax = nmax;
  u.coeffs.assign(grid.size(), CMat::Zero(m, 2 * nmax + 1));
  u.weight_index.assign(grid.size(), -1);
  u.poly.assign(grid.size(), CMat());
  u.support.t0 = grid.start();
  u.support.t1 = grid.end();
  u.support.omega = TorusSubset::full();
  u.support.mask.assign(m, true);
  return u;
}

CVec ControlSignal::sample(int node, double x) const {
  const int wi = weight_index.empty() ? -1 : weight_index[node];
  if (wi < 0) {
    CVec v = CVec::Zero(m);
    for (int n = -nmax; n <= nmax; ++n) v += coeffs[node].col(n + nmax) * std::exp(kI * (double(n) * x));
    return v;
  }
  const double w = weights[wi](x);
  if (w == 0.0) return CVec::Zero(m);
  const CMat& p = poly[node];
  const int pn = static_cast<int>(p.cols() - 1) / 2;
  CVec v = CVec::Zero(m);
  for (int k = -pn; k <= pn; ++k) v += p.col(k + pn) * std::exp(kI * (double(k) * x));
  return w * v;
}

double ControlSignal::energy() const {
  double e = 0;
  for (int q = 0; q < grid.size(); ++q) e += grid.weights[q] * kTwoPi * coeffs[q].squaredNorm();
  return e;
}

double ControlSignal::leakage(int grid_points) const {
  double worst = 0;
  for (int q = 0; q < grid.size(); ++q) {
    const bool in_time = grid.nodes[q] > support.t0 && grid.nodes[q] < support.t1;
    for (int j = 0; j < grid_points; ++j) {
      const double x = kTwoPi * (j + 0.5) / grid_points;
      const CVec v = sample(q, x);
      const bool in_space = support.omega.contains(x);
      for (int c = 0; c < m; ++c) {
        const bool allowed = in_time && in_space && (support.mask.empty() || support.mask[c]);
        if (!allowed) worst = std::max(worst, std::abs(v(c)));
      }
    }
  }
  return worst;
}

double ControlSignal::sup_norm(int grid_points) const {
  double best = 0;
  for (int q = 0; q < grid.size(); ++q)
    for (int j = 0; j < grid_points; ++j)
      best = std::max(best, sample(q, kTwoPi * (j + 0.5) / grid_points).cwiseAbs().maxCoeff());
  return best;
}

void ControlSignal::append(const ControlSignal& other) {
  if (other.grid.breaks.empty()) return;
  if (grid.breaks.empty()) {
    *this = other;
    return;
  }
  if (other.m != m || other.nmax != nmax) throw std::invalid_argument("ControlSignal::append: shape mismatch");
  const bool had_nodes = !grid.nodes.empty();
  grid = TimeGrid::concat({grid, other.grid});
  coeffs.insert(coeffs.end(), other.coeffs.begin(), other.coeffs.end());
  const int offset = static_cast<int>(weights.size());
  weights.insert(weights.end(), other.weights.begin(), other.weights.end());
  for (int wi : other.weight_index) weight_index.push_back(wi < 0 ? -1 : wi + offset);
  poly.insert(poly.end(), other.poly.begin(), other.poly.end());
  // Node-free stretches do not widen the declared support.
  if (other.grid.nodes.empty()) return;
  if (!had_nodes) {
    support = other.support;
    return;
  }
  support.t0 = std::min(support.t0, other.support.t0);
  support.t1 = std::max(support.t1, other.support.t1);
  for (int c = 0; c < m && c < static_cast<int>(other.support.mask.size()); ++c)
    support.mask[c] = support.mask[c] || other.support.mask[c];
  if (!support.omega.is_full() && other.support.omega.arcs() != support.omega.arcs()) {
    auto arcs = support.omega.arcs();
    arcs.insert(arcs.end(), other.support.omega.arcs().begin(), other.support.omega.arcs().end());
    support.omega = TorusSubset::from_arcs(arcs);
  }
}

void ControlSignal::write_csv(std::ostream& os, int grid_points) const {
  os << "t,x,component,re,im\n" << std::setprecision(17);
  for (int q = 0; q < grid.size(); ++q)
    for (int j = 0; j < grid_points; ++j) {
      const double x = kTwoPi * j / grid_points;
      const CVec v = sample(q, x);
      for (int c = 0; c < m; ++c)
        os << grid.nodes[q] << ',' << x << ',' << c << ',' << v(c).real() << ',' << v(c).imag() << '\n';
    }
}

ModeGenerator::ModeGenerator(const SystemMatrices& sys, int n) : n_(n) {
  const double dn = n;
  L_ = dn * dn * sys.B() + kI * dn * sys.A + sys.K;
  Eigen::ComplexEigenSolver<CMat> es(L_);
  V_ = es.eigenvectors();
  lambda_ = es.eigenvalues();
  Eigen::JacobiSVD<CMat> svd(V_);
  const auto& s = svd.singularValues();
  cond_ = s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
  eig_ok_ = cond_ < 1e8;
  if (eig_ok_) Vinv_ = V_.partialPivLu().inverse();
}

CMat ModeGenerator::propagator(double t, bool allow_backward) const {
  if (t < 0 && !allow_backward)
    throw PreconditionError("mode_propagator: negative time is only allowed on transport-branch data");
  if (t == 0.0) return CMat::Identity(L_.rows(), L_.cols());
  CMat out;
  if (eig_ok_) {
    CVec e(lambda_.size());
    for (int i = 0; i < lambda_.size(); ++i) e(i) = std::exp(-t * lambda_(i));
    out = V_ * e.asDiagonal() * Vinv_;
  } else {
    out = CMat(-t * L_).exp();
  }
  if (!out.allFinite()) throw NumericalError("mode_propagator: overflow (backward propagation of diffusive data?)");
  return out;
}

CMat mode_propagator(const SystemMatrices& sys, int n, double t, bool adjoint, bool allow_backward) {
  ModeGenerator g(sys, n);
  return adjoint ? g.adjoint_propagator(t, allow_backward) : g.propagator(t, allow_backward);
}

PropagatorBank::PropagatorBank(const SystemMatrices& sys, int nmax, Exec exec) : nmax_(nmax) {
  gens_.resize(2 * nmax + 1);
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < 2 * nmax + 1; ++i) gens_[i] = ModeGenerator(sys, i - nmax);
  } else {
    for (int i = 0; i < 2 * nmax + 1; ++i) gens_[i] = ModeGenerator(sys, i - nmax);
  }
}

namespace {

// Control nodes contributing to [t0, t1); panels may not straddle the endpoints.
std::vector<int> window_nodes(const ControlSignal& u, double t0, double t1) {
  const auto& br = u.grid.breaks;
  const double tol = 1e-12 * (1.0 + std::abs(t1));
  for (std::size_t p = 0; p + 1 < br.size(); ++p) {
    for (double edge : {t0, t1}) {
      if (edge > br[p] + tol && edge < br[p + 1] - tol) {
        std::ostringstream os;
        os << "control panel [" << br[p] << ", " << br[p + 1] << "] straddles t = " << edge;
        throw PreconditionError(os.str());
      }
    }
  }
  std::vector<int> idx;
  for (int q = 0; q < u.grid.size(); ++q)
    if (u.grid.nodes[q] >= t0 - tol && u.grid.nodes[q] < t1 + tol) idx.push_back(q);
  return idx;
}

void evolve_mode(const SystemMatrices& sys, const ModeGenerator& gen, const FourierState& f, FourierState& out,
                 double t0, double t1, const ControlSignal* u, const std::vector<int>& nodes, int n) {
  CVec v = gen.propagator(t1 - t0) * f.mode(n);
  if (u && std::abs(n) <= u->nmax) {
    for (int q : nodes) {
      const CVec src = sys.M * u->coeffs[q].col(n + u->nmax);
      if (src.squaredNorm() == 0.0) continue;
      v += u->grid.weights[q] * (gen.propagator(t1 - u->grid.nodes[q]) * src);
    }
  }
  out.mode_ref(n) = v;
}

}  // namespace

FourierState evolve_window(const SystemMatrices& sys, const PropagatorBank& bank, const FourierState& f,
                           double t0, double t1, const ControlSignal* u, Exec exec) {
  if (t1 < t0) throw PreconditionError("evolve_window: t1 < t0");
  if (bank.nmax() < f.nmax) throw PreconditionError("evolve_window: propagator bank too small");
  if (u && u->m != sys.m()) throw PreconditionError("evolve_window: control width differs from M");
  const std::vector<int> nodes = u ? window_nodes(*u, t0, t1) : std::vector<int>{};
  FourierState out = FourierState::zeros(f.dim(), f.nmax);
  const int count = 2 * f.nmax + 1;
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) evolve_mode(sys, bank.mode(i - f.nmax), f, out, t0, t1, u, nodes, i - f.nmax);
  } else {
    for (int i = 0; i < count; ++i) evolve_mode(sys, bank.mode(i - f.nmax), f, out, t0, t1, u, nodes, i - f.nmax);
  }
  return out;
}

namespace {

void check_control_range(const ControlSignal* u, double T) {
  if (!u) return;
  const double tol = 1e-12 * (1.0 + T);
  for (double t : u->grid.nodes)
    if (t < -tol || t > T + tol) throw PreconditionError("evolve: control nodes do not lie in [0, T]");
}

}  // namespace

FourierState evolve(const SystemMatrices& sys, const FourierState& f0, const ControlSignal* u, double T, Exec exec) {
  check_control_range(u, T);
  const PropagatorBank bank(sys, f0.nmax, exec);
  return evolve_window(sys, bank, f0, 0.0, T, u, exec);
}

FourierState evolve_serial_reference(const SystemMatrices& sys, const FourierState& f0, const ControlSignal* u,
                                     double T) {
  check_control_range(u, T);
  FourierState out = FourierState::zeros(f0.dim(), f0.nmax);
  for (int n = -f0.nmax; n <= f0.nmax; ++n) {
    const CMat L = double(n) * n * sys.B() + kI * double(n) * sys.A + sys.K;
    CVec v = CMat(-T * L).exp() * f0.mode(n);
    if (u && std::abs(n) <= u->nmax) {
      for (int q = 0; q < u->grid.size(); ++q) {
        const CVec src = sys.M * u->coeffs[q].col(n + u->nmax);
        v += u->grid.weights[q] * (CMat(-(T - u->grid.nodes[q]) * L).exp() * src);
      }
    }
    out.mode_ref(n) = v;
  }
  return out;
}

Trajectory evolve_trajectory(const SystemMatrices& sys, const FourierState& f0, const TimeGrid& grid, Exec exec) {
  const PropagatorBank bank(sys, f0.nmax, exec);
  Trajectory tr;
  tr.times = grid.nodes;
  tr.weights = grid.weights;
  tr.states.resize(grid.size());
  for (int q = 0; q < grid.size(); ++q) {
    FourierState s = FourierState::zeros(f0.dim(), f0.nmax);
    const double t = grid.nodes[q];
    for (int n = -f0.nmax; n <= f0.nmax; ++n) s.mode_ref(n) = bank.mode(n).propagator(t) * f0.mode(n);
    tr.states[q] = std::move(s);
  }
  return tr;
}

FourierState evolve_adjoint(const SystemMatrices& sys, const FourierState& g0, double T, Exec exec) {
  FourierState out = FourierState::zeros(g0.dim(), g0.nmax);
  const int count = 2 * g0.nmax + 1;
  auto body = [&](int i) {
    const int n = i - g0.nmax;
    out.mode_ref(n) = ModeGenerator(sys, n).adjoint_propagator(T) * g0.mode(n);
  };
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) body(i);
  } else {
    for (int i = 0; i < count; ++i) body(i);
  }
  return out;
}

Trajectory evolve_adjoint_trajectory(const SystemMatrices& sys, const FourierState& g0, const TimeGrid& grid,
                                     Exec exec) {
  const PropagatorBank bank(sys, g0.nmax, exec);
  Trajectory tr;
  tr.times = grid.nodes;
  tr.weights = grid.weights;
  tr.states.assign(grid.size(), FourierState::zeros(g0.dim(), g0.nmax));
  for (int q = 0; q < grid.size(); ++q)
    for (int n = -g0.nmax; n <= g0.nmax; ++n)
      tr.states[q].mode_ref(n) = bank.mode(n).adjoint_propagator(grid.nodes[q]) * g0.mode(n);
  return tr;
}

Decomposition decompose(const FourierState& f, const BranchTable& branches) {
  if (f.nmax > branches.nmax())
    throw PreconditionError("decompose: branch table does not cover the state band");
  Decomposition d;
  d.low = FourierState::zeros(f.dim(), f.nmax);
  d.para = FourierState::zeros(f.dim(), f.nmax);
  d.hyp = FourierState::zeros(f.dim(), f.nmax);
  for (int n = -f.nmax; n <= f.nmax; ++n) {
    if (std::abs(n) <= branches.n0()) {
      d.low.mode_ref(n) = f.mode(n);
    } else {
      const auto& b = branches.at(n);
      d.hyp.mode_ref(n) = b.Ph * f.mode(n);
      d.para.mode_ref(n) = f.mode(n) - d.hyp.mode(n);
    }
  }
  return d;
}

double spatial_l2_squared(const FourierState& f, const TorusSubset& omega, int grid) {
  if (grid == 0) grid = next_pow2(4 * f.nmax + 2);
  if (grid < 2 * f.nmax) throw PreconditionError("spatial_l2_squared: grid below Nyquist (2 nmax)");
  if (omega.is_full()) return kTwoPi * f.c.squaredNorm();
  std::vector<cd> sq(grid, cd(0));
  for (int c = 0; c < f.dim(); ++c) {
    const CVec row = f.c.row(c).transpose();
    const auto vals = synthesize(row.data(), f.nmax, std::max(grid, 2 * f.nmax + 1));
    for (int j = 0; j < grid; ++j) sq[j] += std::norm(vals[j]);
  }
  const int band = std::min(2 * f.nmax, (grid - 1) / 2);
  const auto coeffs = analyze(sq, band);
  double acc = 0;
  for (const auto& [a, b] : omega.arcs()) acc += integrate_trig_real(coeffs, band, a, b);
  return std::max(acc, 0.0);
}

double sampled_l2_squared(const FourierState& f, const TorusSubset& omega, int grid) {
  if (grid == 0) grid = next_pow2(8 * f.nmax + 2);
  if (grid < 4 * f.nmax) throw PreconditionError("sampled_l2_squared: grid below 4 nmax");
  if (omega.is_full()) return kTwoPi * f.c.squaredNorm();
  std::vector<char> inside(grid);
  for (int j = 0; j < grid; ++j) inside[j] = omega.contains(kTwoPi * j / grid);
  double acc = 0;
  for (int c = 0; c < f.dim(); ++c) {
    const CVec row = f.c.row(c).transpose();
    const auto vals = synthesize(row.data(), f.nmax, grid);
    for (int j = 0; j < grid; ++j)
      if (inside[j]) acc += std::norm(vals[j]);
  }
  return acc * kTwoPi / grid;
}

double windowed_l2_norm(const Trajectory& traj, double t0, double t1, const TorusSubset& omega, int grid) {
  double acc = 0;
  for (std::size_t q = 0; q < traj.times.size(); ++q) {
    if (traj.times[q] < t0 || traj.times[q] > t1) continue;
    acc += traj.weights[q] * spatial_l2_squared(traj.states[q], omega, grid);
  }
  return std::sqrt(acc);
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,n,component,re,im\n" << std::setprecision(17);
  for (std::size_t q = 0; q < traj.times.size(); ++q) {
    const auto& s = traj.states[q];
    for (int n = -s.nmax; n <= s.nmax; ++n)
      for (int c = 0; c < s.dim(); ++c)
        os << traj.times[q] << ',' << n << ',' << c << ',' << s.c(c, n + s.nmax).real() << ','
           << s.c(c, n + s.nmax).imag() << '\n';
  }
}

}  // namespace nullctl
