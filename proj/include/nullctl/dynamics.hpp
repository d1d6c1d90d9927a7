#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "nullctl/algebra.hpp"
#include "nullctl/core.hpp"
#include "nullctl/spectral.hpp"

namespace nullctl {

// Truncated Fourier coefficients f(x) = sum_{|n| <= nmax} c(:, n + nmax) e^{inx}.
struct FourierState {
  int nmax = 0;
  CMat c;  // dim x (2 nmax + 1)

  static FourierState zeros(int dim, int nmax);
  int dim() const { return static_cast<int>(c.rows()); }
  CVec mode(int n) const { return c.col(n + nmax); }
  auto mode_ref(int n) { return c.col(n + nmax); }
  bool has(int n) const { return std::abs(n) <= nmax; }
  // Same coefficients on a larger or smaller band; extra modes are zero.
  FourierState resized(int new_nmax) const;
  // f(-n) = conj(f(n)) within tol.
  bool is_real(double tol = 1e-12) const;
  // Values at x.
  CVec eval(double x) const;

  FourierState operator+(const FourierState& o) const;
  FourierState operator-(const FourierState& o) const;
  FourierState operator*(cd s) const;
};

// L2 norm with the convention |f|^2 = 2 pi sum |f_n|^2.
double l2_norm(const FourierState& f);
// <f, g> = 2 pi sum g_n^* f_n.
cd inner(const FourierState& f, const FourierState& g);

// (sum (1 + n^2)^s |f_n|^2)^{1/2}, coefficient convention without the 2 pi factor.
double sobolev_norm(const FourierState& f, double s);
// (sum_{|n| > n0} |f_n|^2 / n^2)^{1/2}.
double negative_norm_highpass(const FourierState& f, int n0);

struct ControlSupport {
  double t0 = 0, t1 = 0;
  TorusSubset omega;
  std::vector<bool> mask;  // control components allowed to be nonzero
};

// Control sampled at the nodes of a composite Gauss-Legendre grid.
// coeffs[q] is m x (2 nmax + 1): the Fourier coefficients of u(t_q, .) seen by a state of band nmax.
// When weight_index[q] >= 0 the exact field is
//   u(t_q, x) = weights[weight_index[q]](x) * sum_k poly[q](:, k) e^{ikx},
// so it vanishes wherever that weight does; otherwise coeffs[q] is the field itself.
struct ControlSignal {
  TimeGrid grid;
  int m = 0;
  int nmax = 0;
  std::vector<CMat> coeffs;
  ControlSupport support;
  std::vector<std::function<double(double)>> weights;
  std::vector<int> weight_index;
  std::vector<CMat> poly;

  static ControlSignal zeros(const TimeGrid& grid, int m, int nmax);
  CVec sample(int node, double x) const;
  // Energy int int |u|^2 with the 2 pi Parseval convention on the state band.
  double energy() const;
  // Largest |u| outside the declared support, by spatial synthesis on `grid_points` points.
  double leakage(int grid_points = 512) const;
  double sup_norm(int grid_points = 512) const;
  // Appends another signal whose grid starts where this one ends.
  void append(const ControlSignal& other);
  void write_csv(std::ostream& os, int grid_points = 64) const;
};

// Per-mode generator L_n = n^2 B + i n A + K and its exponentials.
class ModeGenerator {
 public:
  ModeGenerator() = default;
  ModeGenerator(const SystemMatrices& sys, int n);

  int n() const { return n_; }
  const CMat& generator() const { return L_; }
  bool uses_eigendecomposition() const { return eig_ok_; }
  double eigvec_condition() const { return cond_; }
  // exp(-t L_n); negative t raises PreconditionError unless allow_backward.
  CMat propagator(double t, bool allow_backward = false) const;
  CMat adjoint_propagator(double t, bool allow_backward = false) const {
    return propagator(t, allow_backward).adjoint();
  }

 private:
  int n_ = 0;
  CMat L_;
  bool eig_ok_ = false;
  double cond_ = 0;
  CMat V_, Vinv_;
  CVec lambda_;
};

CMat mode_propagator(const SystemMatrices& sys, int n, double t, bool adjoint, bool allow_backward = false);

// Propagators for every mode of a band, built once.
class PropagatorBank {
 public:
  PropagatorBank() = default;
  PropagatorBank(const SystemMatrices& sys, int nmax, Exec exec = Exec::kParallel);
  int nmax() const { return nmax_; }
  const ModeGenerator& mode(int n) const { return gens_[n + nmax_]; }

 private:
  int nmax_ = 0;
  std::vector<ModeGenerator> gens_;
};

// State at t1 from f at t0 with control nodes in [t0, t1).  Panels must not straddle t0 or t1.
FourierState evolve_window(const SystemMatrices& sys, const PropagatorBank& bank, const FourierState& f,
                           double t0, double t1, const ControlSignal* u, Exec exec = Exec::kParallel);

// Per-mode exact semigroup plus Gauss-Legendre Duhamel sum; u may be null.
FourierState evolve(const SystemMatrices& sys, const FourierState& f0, const ControlSignal* u, double T,
                    Exec exec = Exec::kParallel);

// Reference implementation: one mode at a time, no shared bank.
FourierState evolve_serial_reference(const SystemMatrices& sys, const FourierState& f0,
                                     const ControlSignal* u, double T);

struct Trajectory {
  std::vector<double> times;
  std::vector<double> weights;  // quadrature weights for time integrals
  std::vector<FourierState> states;
};

// Uncontrolled states at the nodes of `grid`, carrying its quadrature weights.
Trajectory evolve_trajectory(const SystemMatrices& sys, const FourierState& f0, const TimeGrid& grid,
                             Exec exec = Exec::kParallel);

// g(t) with g_n(t) = exp(-t L_n^*) g_n(0).
FourierState evolve_adjoint(const SystemMatrices& sys, const FourierState& g0, double T,
                            Exec exec = Exec::kParallel);
Trajectory evolve_adjoint_trajectory(const SystemMatrices& sys, const FourierState& g0, const TimeGrid& grid,
                                     Exec exec = Exec::kParallel);

struct Decomposition {
  FourierState low;   // |n| <= n0
  FourierState para;  // Pp(i/n) f_n
  FourierState hyp;   // Ph(i/n) f_n
};
Decomposition decompose(const FourierState& f, const BranchTable& branches);

// int_omega |f(x)|^2 dx, exact for the trigonometric polynomial; grid >= 2 nmax or error.
double spatial_l2_squared(const FourierState& f, const TorusSubset& omega, int grid = 0);

// int_omega |f(x)|^2 dx by a Riemann sum of synthesized values on `grid` points (>= 4 nmax).
// Not exact, but its roundoff floor is relative to |f|^2 rather than to sup |f|^2, so it
// resolves values far below what the exact route can.
double sampled_l2_squared(const FourierState& f, const TorusSubset& omega, int grid = 0);

// L2 norm over (window) x omega using the trajectory's quadrature weights.
double windowed_l2_norm(const Trajectory& traj, double t0, double t1, const TorusSubset& omega, int grid = 0);

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace nullctl
