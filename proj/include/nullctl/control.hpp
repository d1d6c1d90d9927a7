#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nullctl/dynamics.hpp"
#include "nullctl/spectral.hpp"

namespace nullctl {

// ---------------------------------------------------------------------------------------------
// Transport control for  f_t + mu f_x = u 1_omega  on a single arc.

struct CutoffEta {
  double a = 0, b = 0;    // control arc
  double Tprime = 0;
  double mu = 0;
  double delta = 0;
  std::vector<double> q_table;  // Q at x_j = 2 pi j / q_table.size()
  double q_min = 0;

  // Smooth, vanishing outside (delta, T' - delta) x (a + delta, b - delta).
  double eta(double t, double x) const;
  // Q_x = int_0^T' eta(s, x + mu s) ds; interpolated from the table.
  double Q(double x) const;
  bool inside_box(double t, double x) const;
};

// Throws PreconditionError when T' is below the sweep time or the box is empty, and
// NumericalError when min Q falls below 1e-8.
CutoffEta cutoff_eta(double a, double b, double Tprime, double mu, double delta, int table_size = 4096);

struct TransportControl {
  CutoffEta eta;
  std::function<double(double)> f0, fT;
  // u(t, y) = eta(t, y) (fT(y - mu t + mu T') - f0(y - mu t)) / Q_{y - mu t}
  double operator()(double t, double y) const;
};
TransportControl transport_control(std::function<double(double)> f0, std::function<double(double)> fT,
                                   const CutoffEta& eta);

// f(T', x) = f0(x - mu T') + int_0^T' u(s, x - mu (T' - s)) ds by composite Gauss-Legendre.
double characteristic_final_state(const TransportControl& u, double x, int panels = 64);

// ---------------------------------------------------------------------------------------------
// Gramian engine.
//
// Functional i reads phi_i^H f_{n_i}(t1).  A control node q carries directions a_{iq} in C^m with
// phi_i^H (effect of u(t_q) on mode n_i) = w_q a_{iq}^H u_{n_i}(t_q).  The ansatz
//   u(t_q, x) = tw_q sigma(x) sum_j lambda_j a_{jq} e^{i n_j x}
// gives  Gram_ij = sum_q w_q tw_q sigma^(n_i - n_j) a_{iq}^H a_{jq}.

struct GramFunctional {
  int n = 0;
  CVec phi;
};

enum class TargetKind { kHyperbolic, kParabolic, kLow };

// Basis of the target subspace: orthonormal in Im Ph(i/n)^* for n0 < |n| <= nmax, (G e_c; e_c)
// spanning Im Pp(i/n)^*, or unit vectors on |n| <= n0.
std::vector<GramFunctional> target_functionals(const SystemMatrices& sys, const BranchTable& branches,
                                               TargetKind kind, int nmax);

struct GramOptions {
  double max_condition = 1e14;  // after Jacobi equilibration
  bool throw_on_singular = true;
  Exec exec = Exec::kParallel;
};

class GramianControl {
 public:
  GramianControl() = default;
  // dirs[q] is m x F.
  GramianControl(std::vector<GramFunctional> functionals, std::vector<CMat> dirs, TimeGrid grid,
                 std::vector<double> time_weight, const TorusSubset& omega, double omega_fraction,
                 std::vector<bool> mask, int state_nmax, const GramOptions& opt = {});

  int size() const { return static_cast<int>(functionals_.size()); }
  const CMat& gram() const { return gram_; }
  const std::vector<GramFunctional>& functionals() const { return functionals_; }
  const TimeGrid& grid() const { return grid_; }
  double condition() const { return condition_; }
  double min_eigenvalue() const { return min_eig_; }
  double max_eigenvalue() const { return max_eig_; }
  bool singular() const { return singular_; }

  CVec values(const FourierState& f) const;
  CVec solve(const CVec& rhs) const;
  ControlSignal synthesize(const CVec& lambda, int m) const;
  // Control coefficients as the Gram matrix sees them: one column per (node, mode) pair.
  CMat adjoint_columns() const;

 private:
  std::vector<GramFunctional> functionals_;
  std::vector<CMat> dirs_;
  TimeGrid grid_;
  std::vector<double> tw_;
  TorusSubset omega_;
  double fraction_ = 0.1;
  std::vector<bool> mask_;
  int nmax_ = 0;
  int band_ = 0;               // sigma^ stored on |k| <= band_
  std::vector<cd> sigma_hat_;
  CMat gram_;
  CMat equilibrated_;
  RVec scale_;
  Eigen::LDLT<CMat> ldlt_;
  double condition_ = 0, min_eig_ = 0, max_eig_ = 0;
  bool singular_ = false;
};

// Panel count for a window of length len resolving rates up to `rate`.
int panels_for(double len, double rate, int min_panels = 4, int max_panels = 400);

struct HumOptions {
  int panels = 0;               // 0 selects from the spectrum of the targeted modes
  double omega_fraction = 0.1;
  double ramp_fraction = 0.1;   // time plateau ramps
  GramOptions gram;
};

// Gramian built from adjoint propagators on [t0, t1] with the given control mask.
GramianControl build_hum_gramian(const SystemMatrices& sys, const std::vector<GramFunctional>& functionals,
                                 double t0, double t1, const TorusSubset& omega, const std::vector<bool>& mask,
                                 int state_nmax, const HumOptions& opt = {});

struct HumResult {
  ControlSignal u;
  CVec lambda;
  CVec target;
  CVec achieved;
  double relative_error = 0;
  double energy = 0;           // energy of u on the state band
  double dual_energy = 0;      // Re <lambda, rhs>
  double condition = 0;
  double min_eigenvalue = 0;
  FourierState final_state;
};

// Steers the targeted functionals of f(t1) to those of fstar starting from f0 at t0.
HumResult hum_gramian_control(const SystemMatrices& sys, const BranchTable& branches, TargetKind kind,
                              int target_nmax, const FourierState& fstar, const FourierState& f0, double t0,
                              double t1, const TorusSubset& omega, const std::vector<bool>& mask,
                              const HumOptions& opt = {});

// ---------------------------------------------------------------------------------------------
// Parabolic moment problem.

// E2(n) = D^H - (i/n) A22^H + K22^H / n^2 - ((i/n) A12^H - K12^H / n^2) G(i/n); for real
// coefficients the conjugate transposes are plain transposes.
CMat parabolic_symbol(const SystemMatrices& sys, const CMat& G, int n);

struct MomentProblem {
  int n0 = 0, N = 0;
  double t0 = 0, T = 0;
  std::vector<int> modes;
  std::vector<CMat> E2;
  CMat gram;
  CVec rhs;
  CVec V;  // stacked d2-blocks, one per mode
  double condition = 0;
  double min_eigenvalue = 0;
};

struct MomentOptions {
  int panels = 0;
  double omega_fraction = 0.1;
  GramOptions gram;
};

struct MomentResult {
  MomentProblem problem;
  ControlSignal u;
  double residual = 0;  // |Pi^p_N f(t0 + T)| / |Pi^p f(t0)|
  FourierState final_state;
};

// Moment control on [t0, t0 + T] killing Pp(i/n) f_n(t0 + T) for n0 < |n| <= N.
// The masked control must act on the parabolic rows only (M1 diag(mask) = 0).
MomentResult parabolic_moment_control(const SystemMatrices& sys, const BranchTable& branches,
                                      const FourierState& f0, double t0, double T, int N,
                                      const TorusSubset& omega, const std::vector<bool>& mask,
                                      const MomentOptions& opt = {});

// Pp(i/n) f_n for n0 < |n| <= min(nmax, N); other modes zero.
FourierState parabolic_part(const FourierState& f, const BranchTable& branches, int N = -1);
FourierState hyperbolic_part(const FourierState& f, const BranchTable& branches, int N = -1);

// ---------------------------------------------------------------------------------------------
// Lebeau-Robbiano iteration.

struct LRStage {
  int ell = 0;
  int N = 0;
  double T_ell = 0;
  double control_start = 0, control_end = 0, end = 0;
  double gram_condition = 0;
  bool skipped = false;
};

struct LRSchedule {
  double t0 = 0, T = 0, delta = 0, rho = 0, A_const = 0;
  std::vector<LRStage> stages;

  // Stages l >= 1 with N_l = 2^l <= Nmax, anchors a_0 = t0 + delta, a_l = a_{l-1} + 2 T_l.
  static LRSchedule build(double t0, double T, double delta, double rho, int Nmax);
};

struct LROptions {
  double omega_fraction = 0.1;
  double tol = 1e-6;
  bool skip_singular_stages = false;  // run such stages control-free instead of failing
  GramOptions gram;
};

struct LRResult {
  LRSchedule schedule;
  ControlSignal u;
  std::vector<double> stage_norms;  // |Pi^p f(a_l)|, l = 0..L
  double final_residual = 0;        // |Pi^p f(t0 + T)| / |Pi^p f(t0)|
  bool reached_tol = false;
  FourierState final_state;
};

LRResult lebeau_robbiano(const SystemMatrices& sys, const BranchTable& branches, const FourierState& f0,
                         double t0, double T, double delta, double rho, int Nmax, const TorusSubset& omega,
                         const std::vector<bool>& mask, const LROptions& opt = {});

// ---------------------------------------------------------------------------------------------
// Full pipeline.

struct PipelineOptions {
  double Tprime = 0;  // 0 selects T* + Tprime_fraction (T - T*)
  double Tprime_fraction = 0.5;
  int n0_override = 0;
  double lr_delta_fraction = 0.125;
  double lr_rho = 0.5;
  int max_iterations = 50;
  double tol = 1e-10;     // hyperbolic fixed-point residual
  double accept = 1e-8;   // staged result kept when |f(T)| / |f0| is below this
  Exec exec = Exec::kParallel;
};

struct PipelineResult {
  ControlSignal u;
  FourierState final_state;
  double relative_norm = 0;
  double Tstar = 0, Tprime = 0, tau = 0;
  std::string path;               // "fixed-point" or "direct"
  std::string parabolic_stage;    // "lebeau-robbiano", "gramian" or "free"
  int iterations = 0;
  std::vector<double> iteration_residuals;
  double parabolic_condition = 0;
  double hyperbolic_condition = 0;
  double hyperbolic_min_eigenvalue = 0;
  double trailing_condition = 0;
  double stacked_condition = 0;   // direct path only
  double energy = 0;
};

// Steers f0 to zero at T with hyperbolic, parabolic and trailing low-frequency stages.
PipelineResult full_pipeline(const SystemMatrices& sys, const FourierState& f0, double T,
                             const TorusSubset& omega, const PipelineOptions& opt = {});

// d^k/dx^k applied on the Fourier side; the result is stored as plain coefficients.
ControlSignal derivative_control(const ControlSignal& u, int order);

// Control mask selecting components whose column of M touches the first d1 rows (or last d2).
std::vector<bool> transport_mask(const SystemMatrices& sys);
std::vector<bool> parabolic_mask(const SystemMatrices& sys);

}  // namespace nullctl
