#include "nullctl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/tools/minima.hpp>

namespace nullctl {

// ---------------------------------------------------------------------------------------------
// Spectral inequality

CMat arc_gram(int N, const TorusSubset& omega) {
  if (N < 0) throw PreconditionError("arc_gram: N must be nonnegative");
  const int size = 2 * N + 1;
  // moment[d + 2N] = int_omega e^{idx} dx
  std::vector<cd> moment(4 * N + 1, cd(0));
  for (int d = -2 * N; d <= 2 * N; ++d) {
    cd acc = 0;
    for (const auto& [a, b] : omega.arcs()) {
      if (d == 0) {
        acc += b - a;
      } else {
        const double dd = d;
        acc += (std::exp(kI * (dd * b)) - std::exp(kI * (dd * a))) / (kI * dd);
      }
    }
    moment[d + 2 * N] = acc;
  }
  CMat M(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) M(i, j) = moment[(j - i) + 2 * N];
  return M;
}

namespace {

double smallest_eigenvalue(const CMat& M) {
  Eigen::SelfAdjointEigenSolver<CMat> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace

SpectralInequalityPoint spectral_inequality_constant(int N, const TorusSubset& omega, int gridsize) {
  if (gridsize < 8 * N) throw PreconditionError("spectral_inequality_constant: gridsize must be at least 8N");
  SpectralInequalityPoint p;
  p.N = N;
  p.lambda_min = smallest_eigenvalue(arc_gram(N, omega));

  const int size = 2 * N + 1;
  std::vector<cd> moment(4 * N + 1, cd(0));
  const double h = kTwoPi / gridsize;
  for (int j = 0; j < gridsize; ++j) {
    const double x = (j + 0.5) * h;
    if (!omega.contains(x)) continue;
    for (int d = -2 * N; d <= 2 * N; ++d) moment[d + 2 * N] += h * std::exp(kI * (double(d) * x));
  }
  CMat G(size, size);
  for (int i = 0; i < size; ++i)
    for (int k = 0; k < size; ++k) G(i, k) = moment[(k - i) + 2 * N];
  p.grid_lambda_min = smallest_eigenvalue(G);
  return p;
}

SpectralConstantFit fit_spectral_constant(const std::vector<int>& Ns, const TorusSubset& omega, int gridsize) {
  if (Ns.size() < 2) throw PreconditionError("fit_spectral_constant: need at least two values of N");
  SpectralConstantFit fit;
  std::vector<double> xs, ys;
  for (int N : Ns) {
    const int g = std::max(gridsize, 8 * N);
    fit.points.push_back(spectral_inequality_constant(N, omega, std::max(g, 1)));
    const double lam = fit.points.back().lambda_min;
    // Below the roundoff floor of a matrix with norm <= 2 pi.
    if (!(lam > 1e-13)) continue;
    fit.points.back().resolved = true;
    xs.push_back(N);
    ys.push_back(std::log(1.0 / lam));
  }
  if (xs.size() < 2) throw NumericalError("fit_spectral_constant: fewer than two resolved eigenvalues");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;

  // y = C N + log C, minimized over log C.
  auto loss = [&](double logc) {
    const double c = std::exp(logc);
    double s = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - c * xs[i] - logc;
      s += r * r;
    }
    return s;
  };
  const auto best = boost::math::tools::brent_find_minima(loss, -30.0, 10.0, 50);
  fit.C1 = std::exp(best.first);
  return fit;
}

// ---------------------------------------------------------------------------------------------
// Counterexample

SystemMatrices counterexample_system() {
  SystemMatrices s;
  s.d1 = 1;
  s.d2 = 1;
  s.A = CMat::Zero(2, 2);
  s.A(0, 1) = -1.0;
  s.D = CMat::Identity(1, 1);
  s.K = CMat::Zero(2, 2);
  s.M = CMat::Zero(2, 1);
  s.M(1, 0) = 1.0;
  return s;
}

Eigen::Matrix2d counterexample_gram(int n, double T) {
  if (n == 0) throw PreconditionError("counterexample_gram: mode 0 has no decaying weight");
  const double nn = static_cast<double>(n);
  const double n2 = nn * nn;
  Eigen::Matrix2d G;
  G(0, 0) = -std::expm1(-2.0 * n2 * T) / 2.0;
  G(0, 1) = -std::expm1(-n2 * T) / nn;
  G(1, 0) = G(0, 1);
  G(1, 1) = T;
  return G;
}

namespace {

struct ModeCoefficients {
  cd alpha, beta, rhs_decay, rhs_mean;
  double energy;  // int_0^T |alpha w1 + beta w2|^2
};

ModeCoefficients solve_mode(int n, cd f01, cd f02, double T) {
  const double nn = static_cast<double>(n);
  ModeCoefficients m;
  m.rhs_decay = -nn * f02 * std::exp(-nn * nn * T);
  m.rhs_mean = kI * nn * f01 - f02;
  const Eigen::Matrix2d G = counterexample_gram(n, T);
  const Eigen::LDLT<Eigen::Matrix2d> ldlt(G);
  const Eigen::Vector2cd rhs(m.rhs_decay, m.rhs_mean);
  const Eigen::Vector2cd c = ldlt.solve(Eigen::Matrix2d::Identity()).cast<cd>() * rhs;
  m.alpha = c(0);
  m.beta = c(1);
  m.energy = std::max(0.0, (c.adjoint() * G.cast<cd>() * c)(0).real());
  return m;
}

// Smallest panel of a graded rule near t1 resolves the fastest decay e^{-n^2 (T - t)}.
TimeGrid counterexample_grid(double T, int nmax) {
  const double target = 1.0 / (8.0 * std::max(1, nmax) * std::max(1, nmax));
  int panels = 4;
  for (;;) {
    const TimeGrid g = TimeGrid::graded(0.0, T, panels, 0.5, 16);
    const std::size_t last = g.breaks.size() - 1;
    if (g.breaks[last] - g.breaks[last - 1] <= target * T || panels >= 64) return g;
    ++panels;
  }
}

}  // namespace

CounterexampleReport memory_counterexample_control(const FourierState& f0, double T, bool simulate) {
  if (f0.dim() != 2) throw PreconditionError("memory_counterexample_control: state must have two components");
  if (!(T > 0)) throw PreconditionError("memory_counterexample_control: T must be positive");
  const double scale0 = f0.c.cwiseAbs().maxCoeff();
  if (std::abs(f0.mode(0)(0)) > 1e-12 * std::max(1.0, scale0))
    throw PreconditionError("memory_counterexample_control: the transported component must have zero mean");

  CounterexampleReport r;
  r.T = T;
  r.nmax = f0.nmax;
  const int nmax = f0.nmax;
  r.mean_term = -f0.mode(0)(1) / T;
  r.energy = kTwoPi * std::norm(r.mean_term) * T;

  for (int n = -nmax; n <= nmax; ++n) {
    const cd f01 = f0.mode(n)(0), f02 = f0.mode(n)(1);
    r.lower_bound += kTwoPi * std::norm(kI * double(n) * f01 - f02) / T;
    if (n == 0) continue;
    const ModeCoefficients m = solve_mode(n, f01, f02, T);
    CounterexampleMode cm;
    cm.n = n;
    cm.alpha = m.alpha;
    cm.beta = m.beta;
    cm.rhs_decay = m.rhs_decay;
    cm.rhs_mean = m.rhs_mean;
    r.energy += kTwoPi * m.energy;
    r.modes.push_back(cm);
  }

  const TimeGrid grid = counterexample_grid(T, nmax);
  r.u = ControlSignal::zeros(grid, 1, nmax);
  for (int q = 0; q < grid.size(); ++q) {
    const double s = T - grid.nodes[q];
    r.u.coeffs[q](0, nmax) = r.mean_term;
    for (const auto& cm : r.modes) {
      const double nn = cm.n;
      r.u.coeffs[q](0, cm.n + nmax) = cm.alpha * nn * std::exp(-nn * nn * s) + cm.beta;
    }
  }

  for (auto& cm : r.modes) {
    const double nn = cm.n;
    cd decay = 0, mean = 0;
    for (int q = 0; q < grid.size(); ++q) {
      const cd uq = r.u.coeffs[q](0, cm.n + nmax);
      decay += grid.weights[q] * nn * std::exp(-nn * nn * (T - grid.nodes[q])) * uq;
      mean += grid.weights[q] * uq;
    }
    const double data = std::abs(nn) * std::abs(f0.mode(cm.n)(0)) + std::abs(f0.mode(cm.n)(1));
    const double err = std::max(std::abs(decay - cm.rhs_decay), std::abs(mean - cm.rhs_mean));
    cm.residual = data > 0 ? err / data : err;
    r.max_residual = std::max(r.max_residual, cm.residual);
  }

  if (simulate) {
    const FourierState fT = evolve(counterexample_system(), f0, &r.u, T);
    const double n0 = l2_norm(f0);
    r.final_relative_norm = n0 > 0 ? l2_norm(fT) / n0 : l2_norm(fT);
  }
  return r;
}

double counterexample_energy(const std::function<cd(int)>& f01, const std::function<cd(int)>& f02, double T,
                             int nmax) {
  double e = std::norm(f02(0)) / T;
  for (int n = 1; n <= nmax; ++n) {
    e += solve_mode(n, f01(n), f02(n), T).energy;
    e += solve_mode(-n, f01(-n), f02(-n), T).energy;
  }
  return kTwoPi * e;
}

// ---------------------------------------------------------------------------------------------
// Cascade elimination

CouplingPair relevant_coupling(const SystemMatrices& sys) {
  CouplingPair p;
  if (sys.a21().norm() > 0) {
    p.drift = sys.a22();
    p.coupling = sys.a21();
    p.label = "(A22, A21)";
  } else {
    p.drift = sys.k22();
    p.coupling = sys.k21();
    p.label = "(K22, K21)";
  }
  return p;
}

namespace {

struct LevelRows {
  std::string name;
  int chain = -1;
  int depth = 0;
  double sobolev = 0;
  CMat rows;  // r x d, applied to the adjoint state of one mode
};

struct LevelForms {
  std::vector<CMat> Q;  // one Hermitian form per level on the stacked datum
};

// Q_l = 2 pi int_0^T sum_j (1 + j^2)^{-s} |(sigma h_l(t))_j|^2 dt as a form in vec(g0).
LevelForms level_forms(const SystemMatrices& sys, const std::vector<LevelRows>& levels, int nmax, double T,
                       const TorusSubset& omega, const CascadeOptions& opt) {
  const int d = sys.d();
  const int modes = 2 * nmax + 1;
  const int D = d * modes;
  const int out_band = 2 * nmax;
  const int sig_band = out_band + nmax;
  const int fft_grid = std::max(16384, next_pow2(8 * sig_band + 8));
  const double frac = opt.omega_fraction;
  const std::vector<cd> sig =
      fourier_coefficients([&](double x) { return omega.plateau_weight(x, frac); }, sig_band, fft_grid);
  auto sigma_hat = [&](int k) { return sig[k + sig_band]; };

  // Time rule graded towards t = 0, where high modes decay.
  TimeGrid g = TimeGrid::graded(0.0, T, opt.panels, 0.5, 8);
  std::vector<double> times(g.size());
  for (int q = 0; q < g.size(); ++q) times[q] = T - g.nodes[q];

  std::vector<ModeGenerator> gens;
  gens.reserve(modes);
  for (int n = -nmax; n <= nmax; ++n) gens.emplace_back(sys, n);

  LevelForms out;
  for (const auto& lv : levels) {
    // H_{nk} = sum_j w_s(j) conj(sigma(j - n)) sigma(j - k)
    CMat H = CMat::Zero(modes, modes);
    for (int j = -out_band; j <= out_band; ++j) {
      const double w = std::pow(1.0 + double(j) * j, -lv.sobolev);
      CVec col(modes);
      for (int n = -nmax; n <= nmax; ++n) col(n + nmax) = sigma_hat(j - n);
      H.noalias() += w * col.conjugate() * col.transpose();
    }
    CMat Q = CMat::Zero(D, D);
    std::vector<CMat> R(modes);
    for (int q = 0; q < g.size(); ++q) {
      for (int i = 0; i < modes; ++i) R[i] = lv.rows * gens[i].adjoint_propagator(times[q]);
      const double wq = g.weights[q];
#pragma omp parallel for schedule(static)
      for (int k = 0; k < modes; ++k) {
        for (int n = 0; n < modes; ++n) {
          const cd h = wq * H(n, k);
          // block (n, k): R_n^H h R_k
          Q.block(n * d, k * d, d, d).noalias() += R[n].adjoint() * h * R[k];
        }
      }
    }
    out.Q.push_back(kTwoPi * Q);
  }
  return out;
}

CVec stack(const FourierState& g0) {
  const int d = g0.dim();
  const int modes = 2 * g0.nmax + 1;
  CVec x(d * modes);
  for (int i = 0; i < modes; ++i) x.segment(i * d, d) = g0.c.col(i);
  return x;
}

// sqrt of the largest eigenvalue of (num, den), den shifted by reg * max eig.
double pencil_constant(const CMat& num, const CMat& den, double reg) {
  Eigen::SelfAdjointEigenSolver<CMat> es(den);
  const RVec& lam = es.eigenvalues();
  const double top = std::max(lam.maxCoeff(), 0.0);
  const double shift = std::max(reg * top, std::numeric_limits<double>::min());
  const RVec inv_sqrt = (lam.array().max(0.0) + shift).rsqrt();
  const CMat W = es.eigenvectors() * inv_sqrt.asDiagonal();
  const CMat S = W.adjoint() * num * W;
  Eigen::SelfAdjointEigenSolver<CMat> top_es(0.5 * (S + S.adjoint()), Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(top_es.eigenvalues().maxCoeff(), 0.0));
}

std::vector<LevelRows> cascade_levels(const SystemMatrices& sys, bool& kalman, std::string& pair) {
  const int d1 = sys.d1, d2 = sys.d2, d = sys.d();
  const CouplingPair cp = relevant_coupling(sys);
  pair = cp.label;
  kalman = kalman_rank(cp.drift, cp.coupling).satisfied;

  CMat P = CMat::Identity(d2, d2);
  std::vector<int> sizes(d2, 1), starts(d2);
  for (int j = 0; j < d2; ++j) starts[j] = j;
  if (kalman) {
    const CascadeForm form = cascade_transform(cp.drift, cp.coupling);
    P = form.P;
    sizes = form.sizes;
    starts = form.starts;
  }
  const CMat Ph = P.adjoint();

  std::vector<LevelRows> levels;
  LevelRows g1;
  g1.name = "g1";
  g1.rows = CMat::Zero(d1, d);
  g1.rows.leftCols(d1) = CMat::Identity(d1, d1);
  levels.push_back(g1);
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    for (int i = 1; i <= sizes[c]; ++i) {
      LevelRows lv;
      lv.chain = static_cast<int>(c);
      lv.depth = i;
      lv.sobolev = 2.0 * i - 1.0;
      lv.name = "g2^" + std::to_string(i) + (sizes.size() > 1 ? "[" + std::to_string(c) + "]" : "");
      lv.rows = CMat::Zero(1, d);
      lv.rows.rightCols(d2) = Ph.row(starts[c] + i - 1);
      levels.push_back(lv);
    }
  }
  return levels;
}

std::vector<double> chain_constants(const std::vector<LevelRows>& levels, const LevelForms& forms, double reg) {
  std::vector<double> c(levels.size(), 0.0);
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const std::size_t prev = levels[l].depth == 1 ? 0 : l - 1;
    c[l] = pencil_constant(forms.Q[l], forms.Q[prev], reg);
  }
  return c;
}

}  // namespace

CascadeReport cascade_elimination_check(const SystemMatrices& sys, const FourierState& g0, double T,
                                        const TorusSubset& omega, const CascadeOptions& opt) {
  sys.check_dimensions();
  if (g0.dim() != sys.d()) throw PreconditionError("cascade_elimination_check: datum has the wrong dimension");
  if (!(T > 0)) throw PreconditionError("cascade_elimination_check: T must be positive");

  CascadeReport rep;
  rep.nmax = g0.nmax;
  const std::vector<LevelRows> levels = cascade_levels(sys, rep.kalman, rep.pair);

  const LevelForms coarse = level_forms(sys, levels, g0.nmax, T, omega, opt);
  const LevelForms fine = level_forms(sys, levels, 2 * g0.nmax, T, omega, opt);
  const std::vector<double> c_coarse = chain_constants(levels, coarse, opt.regularization);
  const std::vector<double> c_fine = chain_constants(levels, fine, opt.regularization);

  const CVec x = stack(g0);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    CascadeLevel out;
    out.name = levels[l].name;
    out.chain = levels[l].chain;
    out.depth = levels[l].depth;
    out.sobolev = levels[l].sobolev;
    out.norm = std::sqrt(std::max(0.0, (x.adjoint() * coarse.Q[l] * x)(0).real()));
    if (l > 0) {
      out.constant = c_coarse[l];
      out.refined_constant = c_fine[l];
      out.growth = c_fine[l] / c_coarse[l];
      out.exploding = c_coarse[l] > opt.break_threshold || c_fine[l] > opt.break_threshold || out.growth > 10.0;
      out.stable = !out.exploding && out.growth < 2.0 && out.growth > 0.5;
      rep.broken = rep.broken || out.exploding;
    }
    rep.levels.push_back(out);
  }
  return rep;
}

}  // namespace nullctl
