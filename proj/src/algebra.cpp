#include "nullctl/algebra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace nullctl {

CMat SystemMatrices::B() const {
  CMat b = CMat::Zero(d(), d());
  b.bottomRightCorner(d2, d2) = D;
  return b;
}

void SystemMatrices::check_dimensions() const {
  auto fail = [](const std::string& what) { throw PreconditionError("dimension mismatch: " + what); };
  if (d1 < 1 || d2 < 1) fail("d1 and d2 must be positive");
  if (A.rows() != d() || A.cols() != d()) fail("A must be d x d");
  if (D.rows() != d2 || D.cols() != d2) fail("D must be d2 x d2");
  if (K.rows() != d() || K.cols() != d()) fail("K must be d x d");
  if (M.rows() != d() || M.cols() < 1) fail("M must have d rows and at least one column");
}

TorusSubset TorusSubset::from_arcs(const std::vector<std::pair<double, double>>& arcs) {
  std::vector<std::pair<double, double>> flat;
  for (const auto& [a, b] : arcs) {
    const double len = b - a;
    if (!(len > 0)) throw PreconditionError("arc with non-positive length");
    if (len >= kTwoPi) return full();
    const double s = wrap_angle(a);
    const double e = s + len;
    if (e > kTwoPi) {
      flat.emplace_back(s, kTwoPi);
      flat.emplace_back(0.0, e - kTwoPi);
    } else {
      flat.emplace_back(s, e);
    }
  }
  if (flat.empty()) throw PreconditionError("empty control set");
  std::sort(flat.begin(), flat.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& iv : flat) {
    if (!merged.empty() && iv.first <= merged.back().second) {
      merged.back().second = std::max(merged.back().second, iv.second);
    } else {
      merged.push_back(iv);
    }
  }
  if (merged.size() > 1 && merged.front().first <= 0.0 && merged.back().second >= kTwoPi) {
    merged.back().second = kTwoPi + merged.front().second;
    merged.erase(merged.begin());
  }
  TorusSubset out;
  if (merged.size() == 1 && merged[0].second - merged[0].first >= kTwoPi - 1e-14) return full();
  out.arcs_ = merged;
  std::sort(out.arcs_.begin(), out.arcs_.end());
  return out;
}

TorusSubset TorusSubset::full() {
  TorusSubset out;
  out.arcs_ = {{0.0, kTwoPi}};
  return out;
}

bool TorusSubset::is_full() const {
  return arcs_.size() == 1 && arcs_[0].second - arcs_[0].first >= kTwoPi - 1e-14;
}

double TorusSubset::measure() const {
  double m = 0;
  for (const auto& [a, b] : arcs_) m += b - a;
  return m;
}

double TorusSubset::largest_gap() const {
  if (arcs_.empty()) throw PreconditionError("empty control set");
  if (is_full()) return 0.0;
  double gap = 0;
  for (std::size_t i = 0; i < arcs_.size(); ++i) {
    const double end = arcs_[i].second;
    const double next = (i + 1 < arcs_.size()) ? arcs_[i + 1].first : arcs_[0].first + kTwoPi;
    gap = std::max(gap, next - end);
  }
  return gap;
}

bool TorusSubset::contains(double x) const {
  for (const auto& [a, b] : arcs_) {
    const double y = wrap_angle(x - a);
    if (y > 0 && y < b - a) return true;
    if (b - a >= kTwoPi - 1e-14) return true;
  }
  return false;
}

TorusSubset TorusSubset::shrunk(double fraction) const {
  if (is_full()) return *this;
  TorusSubset out;
  for (const auto& [a, b] : arcs_) {
    const double len = b - a;
    out.arcs_.emplace_back(a + fraction * len, b - fraction * len);
  }
  return out;
}

double TorusSubset::plateau_weight(double x, double fraction) const {
  if (is_full()) return 1.0;
  for (const auto& [a, b] : arcs_) {
    const double len = b - a;
    const double y = wrap_angle(x - a);
    if (y > 0 && y < len) return plateau(y, 0.0, len, fraction * len, len - fraction * len);
  }
  return 0.0;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << "H.1 " << (h1 ? "pass" : "FAIL") << "; H.2 " << (h2 ? "pass" : "FAIL") << "; H.3 "
     << (h3 ? "pass" : "FAIL") << "; H.4 " << (h4 ? "pass" : "FAIL");
  for (const auto& d : diagnostics) os << "; " << d;
  return os.str();
}

ValidationReport validate_system(const SystemMatrices& sys, double condition_bound) {
  ValidationReport rep;
  try {
    sys.check_dimensions();
    rep.dims_ok = true;
  } catch (const PreconditionError& e) {
    rep.diagnostics.emplace_back(e.what());
    return rep;
  }
  rep.h1 = sys.d1 >= 1 && sys.d2 >= 1;
  rep.h2 = true;

  Eigen::ComplexEigenSolver<CMat> ed(sys.D);
  rep.min_re_diffusion = std::numeric_limits<double>::infinity();
  for (int i = 0; i < sys.d2; ++i) rep.min_re_diffusion = std::min(rep.min_re_diffusion, ed.eigenvalues()(i).real());
  rep.h3 = rep.min_re_diffusion > 0;
  if (!rep.h3) {
    std::ostringstream os;
    os << "diffusion block has an eigenvalue with real part " << rep.min_re_diffusion;
    rep.diagnostics.push_back(os.str());
  }

  const CMat ap = sys.transport_block();
  Eigen::ComplexEigenSolver<CMat> ea(ap);
  const double scale = 1.0 + ap.norm();
  rep.max_im_transport = 0;
  for (int i = 0; i < sys.d1; ++i)
    rep.max_im_transport = std::max(rep.max_im_transport, std::abs(ea.eigenvalues()(i).imag()));
  Eigen::JacobiSVD<CMat> svd(ea.eigenvectors());
  const auto& s = svd.singularValues();
  rep.transport_eigvec_condition = s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1)
                                                        : std::numeric_limits<double>::infinity();
  const bool real_spec = rep.max_im_transport <= 1e-8 * scale;
  const bool diag = rep.transport_eigvec_condition < condition_bound;
  rep.h4 = real_spec && diag;
  if (!real_spec) rep.diagnostics.emplace_back("transport block has non-real eigenvalues");
  if (!diag) {
    std::ostringstream os;
    os << "transport block eigenvector condition number " << rep.transport_eigvec_condition
       << " exceeds " << condition_bound << " (near-defective)";
    rep.diagnostics.push_back(os.str());
  }
  return rep;
}

std::vector<TransportSpeed> transport_speeds(const SystemMatrices& sys) {
  const CMat ap = sys.transport_block();
  Eigen::ComplexEigenSolver<CMat> ea(ap, false);
  std::vector<double> ev(sys.d1);
  for (int i = 0; i < sys.d1; ++i) ev[i] = ea.eigenvalues()(i).real();
  std::sort(ev.begin(), ev.end());
  const double tol = 1e-6 * (1.0 + std::abs(ev.front()) + std::abs(ev.back()));
  std::vector<TransportSpeed> out;
  for (double v : ev) {
    if (!out.empty() && std::abs(v - out.back().mu) <= tol) {
      auto& g = out.back();
      g.mu = (g.mu * g.multiplicity + v) / (g.multiplicity + 1);
      ++g.multiplicity;
    } else {
      out.push_back({v, 1});
    }
  }
  for (auto& g : out)
    if (std::abs(g.mu) <= tol) g.mu = 0.0;
  return out;
}

double minimal_time(const SystemMatrices& sys, const TorusSubset& omega) {
  if (omega.empty()) throw PreconditionError("minimal_time: empty control set");
  const double gap = omega.largest_gap();
  if (gap == 0.0) return 0.0;
  double mu_star = std::numeric_limits<double>::infinity();
  for (const auto& s : transport_speeds(sys)) mu_star = std::min(mu_star, std::abs(s.mu));
  if (mu_star == 0.0) return std::numeric_limits<double>::infinity();
  return gap / mu_star;
}

int numerical_rank(const CMat& m, int dim_hint) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<CMat> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double thr = std::max(dim_hint, 1) * s(0) * 1e-10;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > thr) ++r;
  return r;
}

KalmanResult kalman_rank(const CMat& drift, const CMat& coupling) {
  const int n = static_cast<int>(drift.rows());
  if (drift.cols() != n || coupling.rows() != n)
    throw PreconditionError("kalman_rank: dimension mismatch");
  const int k = static_cast<int>(coupling.cols());
  CMat krylov(n, n * k);
  CMat block = coupling;
  for (int j = 0; j < n; ++j) {
    krylov.middleCols(j * k, k) = block;
    block = drift * block;
  }
  KalmanResult res;
  res.rank = numerical_rank(krylov, std::max(n, k));
  res.satisfied = res.rank == n;
  return res;
}

CascadeForm cascade_transform(const CMat& drift, const CMat& coupling) {
  const int n = static_cast<int>(drift.rows());
  const int k = static_cast<int>(coupling.cols());
  if (!kalman_rank(drift, coupling).satisfied)
    throw PreconditionError("cascade_transform: Kalman condition fails, basis would be singular");
  CascadeForm out;
  CMat basis(n, 0);
  const int hint = std::max(n, k);
  for (int col = 0; col < k && basis.cols() < n; ++col) {
    CVec v = coupling.col(col);
    int len = 0;
    const int start = static_cast<int>(basis.cols());
    while (basis.cols() < n) {
      CMat trial(n, basis.cols() + 1);
      trial << basis, v;
      if (numerical_rank(trial, hint) <= basis.cols()) break;
      basis = trial;
      ++len;
      v = drift * v;
    }
    if (len > 0) {
      out.columns.push_back(col);
      out.sizes.push_back(len);
      out.starts.push_back(start);
    }
  }
  out.P = basis;
  Eigen::PartialPivLU<CMat> lu(out.P);
  out.hat22 = lu.solve(drift * out.P);
  out.hat21 = lu.solve(coupling);
  // Chain interiors map e_j to e_{j+1} exactly.
  for (std::size_t c = 0; c < out.sizes.size(); ++c) {
    for (int j = 0; j + 1 < out.sizes[c]; ++j) {
      const int idx = out.starts[c] + j;
      out.hat22.col(idx).setZero();
      out.hat22(idx + 1, idx) = 1.0;
    }
    out.hat21.col(out.columns[c]).setZero();
    out.hat21(out.starts[c], out.columns[c]) = 1.0;
  }
  if (out.sizes.size() == 1) {
    out.characteristic.resize(n);
    for (int i = 0; i < n; ++i) out.characteristic[i] = out.hat22(i, n - 1);
  }
  return out;
}

}  // namespace nullctl
