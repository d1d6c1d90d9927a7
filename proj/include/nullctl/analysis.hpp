#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nullctl/dynamics.hpp"

namespace nullctl {

// ---------------------------------------------------------------------------------------------
// Spectral inequality on trigonometric polynomials of degree N.

// M_{nk} = int_{omega} e^{i(k - n)x} dx for |n|, |k| <= N, from closed-form arc integrals.
CMat arc_gram(int N, const TorusSubset& omega);

struct SpectralInequalityPoint {
  int N = 0;
  double lambda_min = 0;       // closed form
  double grid_lambda_min = 0;  // Riemann sum on `gridsize` points, cross-check
  bool resolved = false;       // above the roundoff floor; only resolved points enter a fit
};
// Requires gridsize >= 8N.
SpectralInequalityPoint spectral_inequality_constant(int N, const TorusSubset& omega, int gridsize);

struct SpectralConstantFit {
  std::vector<SpectralInequalityPoint> points;
  double slope = 0;      // least-squares slope of log(1 / lambda_min) against N, resolved points
  double intercept = 0;
  double C1 = 0;         // one-parameter fit of log(1 / lambda_min) = C1 N + log C1
};
SpectralConstantFit fit_spectral_constant(const std::vector<int>& Ns, const TorusSubset& omega, int gridsize = 0);

// ---------------------------------------------------------------------------------------------
// Memory-type counterexample:  f1' = i n f2,  f2' = -n^2 f2 + u  on each mode.

SystemMatrices counterexample_system();

// Closed-form Gram matrix of (n e^{-n^2 (T - t)}, 1) in L^2(0, T); n != 0.
Eigen::Matrix2d counterexample_gram(int n, double T);

struct CounterexampleMode {
  int n = 0;
  cd alpha, beta;
  cd rhs_decay, rhs_mean;  // right-hand sides against the weights n e^{-n^2 (T - t)} and 1
  double residual = 0;             // both equations by quadrature, relative to the data scale
};

struct CounterexampleReport {
  double T = 0;
  int nmax = 0;
  std::vector<CounterexampleMode> modes;  // n != 0
  cd mean_term;                           // constant control on mode 0
  double energy = 0;                      // |u|^2 on (0,T) x torus, closed form
  double lower_bound = 0;                 // (1/T) |d_x f01 - f02|^2
  double max_residual = 0;
  ControlSignal u;
  double final_relative_norm = 0;         // |f(T)| / |f0| from the simulated system
};

// f0 has two rows (f01; f02); f01 must have zero mean.
CounterexampleReport memory_counterexample_control(const FourierState& f0, double T, bool simulate = true);

// Closed-form partial sum of the control energy over |n| <= nmax for coefficient callbacks.
double counterexample_energy(const std::function<cd(int)>& f01, const std::function<cd(int)>& f02, double T,
                             int nmax);

// ---------------------------------------------------------------------------------------------
// Cascade elimination.
//
// Surrogate dual norm of a level h on (0,T) x omega:
//   ( int_0^T | sigma h(t) |_{H^{-s}}^2 dt )^{1/2},  sigma the plateau weight of omega,
// with s = 0 for the transported block and s = 2i - 1 for the i-th element of a chain.

struct CouplingPair {
  CMat drift, coupling;
  std::string label;  // "(A22, A21)" or "(K22, K21)"
};
// (A22, A21) when A21 != 0, otherwise (K22, K21).
CouplingPair relevant_coupling(const SystemMatrices& sys);

struct CascadeLevel {
  std::string name;     // "g1", "g2^1", ...
  int chain = -1;       // -1 for g1
  int depth = 0;        // position in its chain, 1-based
  double sobolev = 0;   // s of the surrogate norm
  double norm = 0;      // surrogate norm of the supplied datum
  double constant = 0;          // sup over data of |level| / |previous level|, band nmax
  double refined_constant = 0;  // same on band 2 nmax
  double growth = 0;            // refined_constant / constant
  bool exploding = false;       // above the break threshold or growth > 10
  bool stable = false;          // growth within (1/2, 2)
};

struct CascadeReport {
  bool kalman = false;
  std::string pair;
  int nmax = 0;
  std::vector<CascadeLevel> levels;  // g1 first, then chains in order
  bool broken = false;               // some level exploding
};

struct CascadeOptions {
  double omega_fraction = 0.1;
  int panels = 24;
  double regularization = 1e-13;  // relative shift of the comparison form
  double break_threshold = 1e6;
};

// g0 has d rows and band nmax.
CascadeReport cascade_elimination_check(const SystemMatrices& sys, const FourierState& g0, double T,
                                        const TorusSubset& omega, const CascadeOptions& opt = {});

}  // namespace nullctl
