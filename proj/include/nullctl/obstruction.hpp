#pragma once

#include <vector>

#include "nullctl/dynamics.hpp"
#include "nullctl/spectral.hpp"

namespace nullctl {

// Scalar Fourier series stored as a_n = phase_n * exp(logmag_n) so that very large or very
// small coefficients survive.  logmag_n = -inf marks a zero coefficient.
struct SpectralProfile {
  int nmax = 0;
  std::vector<double> logmag;
  std::vector<cd> phase;

  double log_at(int n) const { return logmag[n + nmax]; }
  cd phase_at(int n) const { return phase[n + nmax]; }
};

SpectralProfile profile_from_state(const FourierState& chi);

// Centred B-spline of the given order: the box of width support/order convolved order times,
// normalised to unit mass.  Exact coefficients (1/2pi) sinc(n h / 2)^order e^{-in c}.
SpectralProfile spline_profile(double center, double support, int order, int nmax);

// exp(-1 / (1 - ((x - center)/halfwidth)^2)) by quadrature.
SpectralProfile bump_profile(double center, double halfwidth, int nmax);

// log |prod_{j=-N}^{N} (n - j)|; -inf for |n| <= N.
double log_highpass_factor(int n, int N);

// a_n^N = P_N(n) a_n rescaled by exp(-log_scale) so the largest coefficient has modulus 1.
struct HighpassResult {
  FourierState chiN;  // 1 x (2 nmax + 1)
  double log_scale = 0;
};
HighpassResult highpass_profile(const SpectralProfile& chi, int N);
HighpassResult highpass_profile(const FourierState& chi, int N);

struct WitnessOptions {
  double margin = 0.05 * kTwoPi;  // distance kept between the swept support and omega
  int spline_excess = 12;         // spline order minus (2N + 1)
  double tail_log = 36.0;         // band stops once the coefficient envelope falls this far
  int max_band = 1 << 16;
  int time_panels = 12;
  Exec exec = Exec::kParallel;
};

// Approximate transport solution of the adjoint system concentrated at frequencies above N.
struct ObstructionWitness {
  int N = 0;
  double mu = 0;
  double T = 0;
  int band = 0;                    // highest frequency carried
  double support_lo = 0, support_hi = 0;  // support of the profile at t = 0
  CVec phi0;                       // unit vector in Im P_mu(0)^*
  CMat R0;                         // remainder at z = 0
  CMat P0;                         // transport projection at z = 0
  HighpassResult chi;
  std::vector<CVec> mode_vec;      // P_mu(i/n)^* phi0, index n + band
  std::vector<CMat> mode_rem;      // R_mu(i/n)^*, index n + band

  // Exact adjoint solution  sum a_n^N e^{in(x + mu t)} e^{t R(i/n)^*} P(i/n)^* phi0.
  FourierState exact_at(double t) const;
  // Pure transport  chi_N(x + mu t) e^{t R(0)^*} phi0.
  FourierState transport_at(double t) const;
  double chi_norm() const { return l2_norm(chi.chiN); }
};

// Limits P_mu(0), R_mu(0) by the mean value over a circle of radius r/2.
struct BranchLimit {
  double mu = 0;
  CMat P, R;
};
std::vector<BranchLimit> branch_limits(const SystemMatrices& sys, const BranchConstants& consts);

ObstructionWitness build_witness(const SystemMatrices& sys, const BranchConstants& consts,
                                 const TorusSubset& omega, double T, int N, const WitnessOptions& opt = {});

struct ObservabilityReport {
  double ratio = 0;          // |g_N|^2 on [0,T] x omega over |g_N(T)|^2
  double window_sq = 0;
  double final_sq = 0;
  double sup_approx_error = 0;  // sup_t |g_N - g~_N| / |chi_N|
  double lower_constant = 0;    // |g_N(T)| / |chi_N|
  double transport_leak = 0;    // |g~_N| on [0,T] x omega over |chi_N|
};
ObservabilityReport observability_ratio(const ObstructionWitness& w, const TorusSubset& omega, double T,
                                        const WitnessOptions& opt = {});

struct PureTransportMatch {
  int n = 0;
  cd eigenvalue;
  CVec vector;
};
struct PureTransportSpace {
  std::vector<PureTransportMatch> matches;
  int kalman_rank = 0;  // rank of (B | AB | ... | A^{d-1} B)
  bool rank_condition = false;
  int count() const { return static_cast<int>(matches.size()); }
};
// Modes 0 < |n| <= nmax where i mu is an eigenvalue of n E(i/n)^*.
PureTransportSpace pure_transport_space(const SystemMatrices& sys, double mu, int nmax);

}  // namespace nullctl
