#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nullctl/core.hpp"

namespace nullctl {

// Coefficients of  f_t - B f_xx + A f_x + K f = M u 1_omega  with B = diag(0, D).
// The first d1 components are transported, the last d2 diffuse.
struct SystemMatrices {
  int d1 = 0;
  int d2 = 0;
  CMat A;  // d x d
  CMat D;  // d2 x d2
  CMat K;  // d x d
  CMat M;  // d x m

  int d() const { return d1 + d2; }
  int m() const { return static_cast<int>(M.cols()); }

  CMat B() const;
  CMat transport_block() const { return A.topLeftCorner(d1, d1); }
  CMat a12() const { return A.topRightCorner(d1, d2); }
  CMat a21() const { return A.bottomLeftCorner(d2, d1); }
  CMat a22() const { return A.bottomRightCorner(d2, d2); }
  CMat k11() const { return K.topLeftCorner(d1, d1); }
  CMat k12() const { return K.topRightCorner(d1, d2); }
  CMat k21() const { return K.bottomLeftCorner(d2, d1); }
  CMat k22() const { return K.bottomRightCorner(d2, d2); }
  CMat m1() const { return M.topRows(d1); }
  CMat m2() const { return M.bottomRows(d2); }

  // Throws PreconditionError naming the first inconsistent block.
  void check_dimensions() const;
};

// Finite union of open arcs of the torus. Arcs are stored as (start, end) with
// start in [0, 2pi) and start < end <= start + 2pi; an arc may wrap past 2pi.
class TorusSubset {
 public:
  TorusSubset() = default;
  // Arcs given as (start, end) with end > start; overlapping arcs are merged.
  static TorusSubset from_arcs(const std::vector<std::pair<double, double>>& arcs);
  static TorusSubset full();

  const std::vector<std::pair<double, double>>& arcs() const { return arcs_; }
  bool empty() const { return arcs_.empty(); }
  bool is_full() const;
  double measure() const;
  // Length of the longest connected component of the complement.
  double largest_gap() const;
  bool contains(double x) const;
  // Each arc loses `fraction` of its length on both sides.
  TorusSubset shrunk(double fraction) const;
  // Smooth weight equal to 1 on shrunk(fraction) and vanishing outside the arcs.
  double plateau_weight(double x, double fraction) const;

 private:
  std::vector<std::pair<double, double>> arcs_;
};

struct ValidationReport {
  bool dims_ok = false;
  bool h1 = false;  // 1 <= d1, 1 <= d2
  bool h2 = false;  // B = diag(0, D) with square D
  bool h3 = false;  // Re Sp(D) > 0
  bool h4 = false;  // transport block diagonalizable with real spectrum
  double min_re_diffusion = 0;
  double max_im_transport = 0;
  double transport_eigvec_condition = 0;
  std::vector<std::string> diagnostics;

  bool ok() const { return dims_ok && h1 && h2 && h3 && h4; }
  std::string summary() const;
};

ValidationReport validate_system(const SystemMatrices& sys, double condition_bound = 1e8);

// Distinct eigenvalues of the transport block with their multiplicities, ascending.
struct TransportSpeed {
  double mu = 0;
  int multiplicity = 0;
};
std::vector<TransportSpeed> transport_speeds(const SystemMatrices& sys);

// l(omega) / min |mu|; +infinity when some speed vanishes, 0 when omega is the torus.
double minimal_time(const SystemMatrices& sys, const TorusSubset& omega);

// Numerical rank with threshold max(rows_hint, cols_hint) * sigma_max * 1e-10.
int numerical_rank(const CMat& m, int dim_hint);

struct KalmanResult {
  int rank = 0;
  bool satisfied = false;
};
// Rank of (coupling | drift coupling | ... | drift^{d2-1} coupling).
KalmanResult kalman_rank(const CMat& drift, const CMat& coupling);

struct CascadeForm {
  CMat P;      // d2 x d2 change of basis
  CMat hat22;  // P^{-1} drift P, block upper triangular with companion diagonal blocks
  CMat hat21;  // P^{-1} coupling
  std::vector<int> columns;  // coupling column generating each chain
  std::vector<int> sizes;    // chain lengths, summing to d2
  std::vector<int> starts;   // first basis index of each chain
  std::vector<cd> characteristic;  // single-chain case: drift^{d2} = sum c_i drift^i
};

// Adapted Krylov basis: columns scanned left to right, each chain extended while independent.
CascadeForm cascade_transform(const CMat& drift, const CMat& coupling);

}  // namespace nullctl
