#include "nullctl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace nullctl {

CMat eval_symbol(const SystemMatrices& sys, cd z) {
  return sys.B() + z * sys.A - z * z * sys.K;
}

namespace {

// Sum over nodes j = offset, offset + stride, ... of rho e^{i theta_j} (zeta_j - E)^{-1}.
CMat trapezoid_sum(const CMat& e, cd center, double radius, int total, int offset, int stride) {
  const int d = static_cast<int>(e.rows());
  CMat acc = CMat::Zero(d, d);
  const CMat id = CMat::Identity(d, d);
  for (int j = offset; j < total; j += stride) {
    const cd w = radius * std::exp(kI * (kTwoPi * j / total));
    acc += w * (CMat((center + w) * id - e)).partialPivLu().inverse();
  }
  return acc;
}

}  // namespace

CMat contour_projection(const CMat& e, cd center, double radius, const ContourOptions& opt,
                        int* nodes_used) {
  Eigen::ComplexEigenSolver<CMat> es(e, false);
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double dist = std::abs(std::abs(es.eigenvalues()(i) - center) - radius);
    if (dist < 1e-6 * radius) {
      std::ostringstream os;
      os << "eigenvalue " << es.eigenvalues()(i) << " lies on the contour |zeta - " << center
         << "| = " << radius;
      throw PreconditionError(os.str());
    }
  }
  int m = opt.initial_nodes;
  CMat sum = trapezoid_sum(e, center, radius, m, 0, 1);
  CMat p = sum / double(m);
  double change = std::numeric_limits<double>::infinity();
  while (m < opt.max_nodes) {
    // Doubling reuses the previous nodes; only the odd ones are new.
    const CMat odd = trapezoid_sum(e, center, radius, 2 * m, 1, 2);
    sum += odd;
    m *= 2;
    CMat next = sum / double(m);
    change = (next - p).norm();
    p = next;
    if (change < opt.converge_tol * std::max(1.0, p.norm())) break;
  }
  if (change > opt.fail_tol * std::max(1.0, p.norm())) {
    std::ostringstream os;
    os << "contour quadrature did not converge: change " << change << " at " << m << " nodes";
    throw NumericalError(os.str());
  }
  if (nodes_used) *nodes_used = m;
  return p;
}

GroupContours group_contours(const SystemMatrices& sys) {
  GroupContours g;
  g.speeds = transport_speeds(sys);
  double maxabs = 0;
  bool has_zero = false;
  for (const auto& s : g.speeds) {
    maxabs = std::max(maxabs, std::abs(s.mu));
    if (s.mu == 0.0) has_zero = true;
  }
  g.shift = has_zero ? 1.0 + maxabs : 0.0;
  // The parabolic part of z^{-1} E Ph sits at 0, so 0 counts as a neighbour.
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.speeds.size(); ++i) {
    const double ci = g.speeds[i].mu + g.shift;
    gap = std::min(gap, std::abs(ci));
    for (std::size_t j = i + 1; j < g.speeds.size(); ++j)
      gap = std::min(gap, std::abs(g.speeds[j].mu - g.speeds[i].mu));
  }
  g.radius = gap / 3.0;
  return g;
}

namespace {

double min_abs_diffusion_eig(const SystemMatrices& sys) {
  Eigen::ComplexEigenSolver<CMat> ed(sys.D, false);
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < sys.d2; ++i) m = std::min(m, std::abs(ed.eigenvalues()(i)));
  return m;
}

// Empty string when z is admissible, otherwise the reason.
std::string separation_failure(const SystemMatrices& sys, const GroupContours& groups, double R, cd z) {
  const CMat e = eval_symbol(sys, z);
  Eigen::ComplexEigenSolver<CMat> es(e, false);
  const auto& ev = es.eigenvalues();
  int inside = 0;
  std::vector<int> counts(groups.speeds.size(), 0);
  for (int i = 0; i < ev.size(); ++i) {
    const double a = std::abs(ev(i));
    if (std::abs(a - R) < R / 10) return "eigenvalue near contour";
    if (a < R) {
      ++inside;
      if (z == cd(0)) continue;
      const cd scaled = ev(i) / z + groups.shift;
      bool hit = false;
      for (std::size_t g = 0; g < groups.speeds.size(); ++g) {
        if (std::abs(scaled - (groups.speeds[g].mu + groups.shift)) < 0.8 * groups.radius) {
          ++counts[g];
          hit = true;
          break;
        }
      }
      if (!hit) return "transport group not resolved";
    }
  }
  if (inside != sys.d1) return "wrong number of eigenvalues inside contour";
  if (z != cd(0))
    for (std::size_t g = 0; g < groups.speeds.size(); ++g)
      if (counts[g] != groups.speeds[g].multiplicity) return "transport group multiplicity changed";
  return {};
}

std::vector<cd> disk_samples(double r) {
  std::vector<cd> zs;
  const int nang = 32;
  for (double f : {0.25, 0.5, 0.75, 1.0})
    for (int k = 0; k < nang; ++k) zs.push_back(f * r * std::exp(kI * (kTwoPi * k / nang)));
  return zs;
}

bool admissible(const SystemMatrices& sys, const GroupContours& groups, double R, double r, cd* bad) {
  for (cd z : disk_samples(r)) {
    if (!separation_failure(sys, groups, R, z).empty()) {
      if (bad) *bad = z;
      return false;
    }
  }
  return true;
}

}  // namespace

BranchConstants separation_radius(const SystemMatrices& sys, int n0_override) {
  const double mind = min_abs_diffusion_eig(sys);
  if (!(mind > 0)) throw PreconditionError("separation_radius: diffusion block is singular");
  BranchConstants bc;
  bc.R = 0.5 * mind;
  const GroupContours groups = group_contours(sys);
  const std::string at0 = separation_failure(sys, groups, bc.R, cd(0));
  if (!at0.empty()) throw PreconditionError("separation_radius: z = 0 inadmissible: " + at0);

  const double floor = 1e-6;
  double hi = 1.0, lo = 0.0;
  cd bad = 0;
  if (admissible(sys, groups, bc.R, hi, &bad)) {
    lo = hi;
  } else {
    double r = hi;
    while (r > floor) {
      r *= 0.5;
      if (admissible(sys, groups, bc.R, r, &bad)) {
        lo = r;
        break;
      }
      hi = r;
    }
    if (lo == 0.0) {
      std::ostringstream os;
      os << "separation_radius: no admissible radius above " << floor << " (offending z = " << bad << ")";
      throw NumericalError(os.str());
    }
    for (int it = 0; it < 30; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (admissible(sys, groups, bc.R, mid, nullptr)) lo = mid; else hi = mid;
    }
  }
  bc.r = lo;
  bc.n0 = static_cast<int>(std::ceil(1.0 / bc.r));
  if (n0_override > 0) {
    if (!admissible(sys, groups, bc.R, 1.0 / n0_override, &bad)) {
      std::ostringstream os;
      os << "separation_radius: override n0 = " << n0_override << " is too small (offending z = " << bad << ")";
      throw PreconditionError(os.str());
    }
    bc.n0 = n0_override;
  }
  return bc;
}

ProjectionPair projection_split(const SystemMatrices& sys, cd z, double R) {
  ProjectionPair p;
  const CMat e = eval_symbol(sys, z);
  p.Ph = contour_projection(e, cd(0), R);
  p.Pp = CMat::Identity(sys.d(), sys.d()) - p.Ph;
  return p;
}

std::vector<HyperbolicBranch> hyperbolic_branches(const SystemMatrices& sys, cd z, const CMat& Ph,
                                                  const GroupContours& groups) {
  if (z == cd(0)) throw PreconditionError("hyperbolic_branches: requires z != 0");
  const CMat e = eval_symbol(sys, z);
  CMat e1 = (e * Ph) / z;
  if (groups.shift != 0.0) e1 += groups.shift * Ph;
  std::vector<HyperbolicBranch> out;
  for (const auto& s : groups.speeds) {
    HyperbolicBranch b;
    b.mu = s.mu;
    b.multiplicity = s.multiplicity;
    try {
      b.P = contour_projection(e1, cd(s.mu + groups.shift), groups.radius);
    } catch (const PreconditionError& err) {
      throw PreconditionError(std::string("transport groups not separated at this |z|; increase n0 (") +
                              err.what() + ")");
    }
    const double tr = b.P.trace().real();
    if (std::abs(tr - s.multiplicity) > 1e-6)
      throw PreconditionError("transport groups not separated at this |z|; increase n0");
    b.R = (e * b.P - s.mu * z * b.P) / (z * z);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<HyperbolicBranch> hyperbolic_branches(const SystemMatrices& sys, cd z, const CMat& Ph) {
  return hyperbolic_branches(sys, z, Ph, group_contours(sys));
}

CMat graph_map(const SystemMatrices& sys, const CMat& Pp) {
  const CMat adj = Pp.adjoint();
  const CMat p11 = adj.topLeftCorner(sys.d1, sys.d1);
  const CMat p12 = adj.topRightCorner(sys.d1, sys.d2);
  const CMat lhs = CMat::Identity(sys.d1, sys.d1) - p11;
  Eigen::FullPivLU<CMat> lu(lhs);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw NumericalError("graph_map: I - p11 is singular");
  return lu.solve(p12);
}

BranchConstants branch_constants(const SystemMatrices& sys, const BranchConstants& sep) {
  BranchConstants bc = sep;
  const GroupContours groups = group_contours(sys);
  const double rz = 1.0 / sep.n0;
  std::vector<cd> zs = disk_samples(rz);
  for (int n = sep.n0 + 1; n <= sep.n0 + 16; ++n) {
    zs.push_back(kI / double(n));
    zs.push_back(-kI / double(n));
  }
  double min_re = std::numeric_limits<double>::infinity();
  std::vector<ProjectionPair> pairs;
  for (cd z : zs) {
    pairs.push_back(projection_split(sys, z, sep.R));
    Eigen::ComplexEigenSolver<CMat> es(eval_symbol(sys, z), false);
    for (int i = 0; i < es.eigenvalues().size(); ++i)
      if (std::abs(es.eigenvalues()(i)) > sep.R) min_re = std::min(min_re, es.eigenvalues()(i).real());
  }
  bc.cp = 0.5 * min_re;
  if (!(bc.cp > 0))
    throw NumericalError("branch_constants: parabolic decay rate is not positive on the sample");
  bc.Kp = 0;
  const std::vector<double> taus = {0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0};
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const CMat e = eval_symbol(sys, zs[i]);
    for (double tau : taus) {
      const CMat prop = CMat(-tau * e).exp() * pairs[i].Pp;
      bc.Kp = std::max(bc.Kp, std::exp(bc.cp * tau) * prop.operatorNorm());
    }
  }
  bc.Kh = 0;
  bc.ch = 0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    if (zs[i] == cd(0)) continue;
    double kh = 0;
    for (const auto& b : hyperbolic_branches(sys, zs[i], pairs[i].Ph, groups)) {
      kh += b.P.operatorNorm();
      bc.ch = std::max(bc.ch, b.R.operatorNorm());
    }
    bc.Kh = std::max(bc.Kh, kh);
  }
  return bc;
}

SpectralBranch compute_branch(const SystemMatrices& sys, const GroupContours& groups, double R, int n) {
  SpectralBranch b;
  b.n = n;
  const cd z = kI / double(n);
  auto pp = projection_split(sys, z, R);
  b.Ph = std::move(pp.Ph);
  b.Pp = std::move(pp.Pp);
  b.G = graph_map(sys, b.Pp);
  b.groups = hyperbolic_branches(sys, z, b.Ph, groups);
  return b;
}

BranchTable::BranchTable(const SystemMatrices& sys, const BranchConstants& consts, int nmax, Exec exec)
    : consts_(consts), nmax_(nmax) {
  const int count = std::max(0, nmax - consts.n0);
  pos_.resize(count);
  neg_.resize(count);
  const GroupContours groups = group_contours(sys);
  // Each frequency is independent; errors are collected and rethrown in index order.
  std::vector<std::string> errs(2 * count);
  std::vector<int> kinds(2 * count, 0);
  auto body = [&](int i) {
    const int k = i % count;
    const int n = (i < count ? 1 : -1) * (consts.n0 + 1 + k);
    try {
      (i < count ? pos_ : neg_)[k] = compute_branch(sys, groups, consts.R, n);
    } catch (const PreconditionError& e) {
      errs[i] = e.what();
      kinds[i] = 2;
    } catch (const std::exception& e) {
      errs[i] = e.what();
      kinds[i] = 1;
    }
  };
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < 2 * count; ++i) body(i);
  } else {
    for (int i = 0; i < 2 * count; ++i) body(i);
  }
  for (int i = 0; i < 2 * count; ++i) {
    if (kinds[i] == 2) throw PreconditionError(errs[i]);
    if (kinds[i] == 1) throw NumericalError(errs[i]);
  }
}

const SpectralBranch& BranchTable::at(int n) const {
  if (!has(n)) throw PreconditionError("branch table has no entry for n = " + std::to_string(n));
  const int k = std::abs(n) - consts_.n0 - 1;
  return n > 0 ? pos_[k] : neg_[k];
}

void BranchTable::write_csv(std::ostream& os) const {
  os << "n,object,row,col,re,im\n";
  os << std::setprecision(17);
  auto emit = [&](int n, const std::string& name, const CMat& m) {
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c)
        os << n << ',' << name << ',' << r << ',' << c << ',' << m(r, c).real() << ',' << m(r, c).imag() << '\n';
  };
  for (int n = -nmax_; n <= nmax_; ++n) {
    if (!has(n)) continue;
    const auto& b = at(n);
    emit(n, "Ph", b.Ph);
    emit(n, "Pp", b.Pp);
    emit(n, "G", b.G);
    for (const auto& g : b.groups) {
      std::ostringstream tag;
      tag << std::setprecision(10) << "Pmu[" << g.mu << "]";
      emit(n, tag.str(), g.P);
      std::ostringstream rtag;
      rtag << std::setprecision(10) << "Rmu[" << g.mu << "]";
      emit(n, rtag.str(), g.R);
    }
  }
}

}  // namespace nullctl
