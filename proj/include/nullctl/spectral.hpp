#pragma once

#include <iosfwd>
#include <vector>

#include "nullctl/algebra.hpp"
#include "nullctl/core.hpp"

namespace nullctl {

// E(z) = B + z A - z^2 K.  At z = i/n, n^2 E(i/n) is the generator on mode n.
CMat eval_symbol(const SystemMatrices& sys, cd z);

struct ContourOptions {
  int initial_nodes = 64;
  int max_nodes = 8192;
  double converge_tol = 1e-11;
  double fail_tol = 1e-9;
};

// Riesz projection (1/2 pi i) oint (zeta - E)^{-1} d zeta over |zeta - center| = radius.
// Trapezoidal nodes double until successive results agree to converge_tol.
CMat contour_projection(const CMat& e, cd center, double radius, const ContourOptions& opt = {},
                        int* nodes_used = nullptr);

struct BranchConstants {
  double r = 0;   // separation radius in z
  int n0 = 0;     // modes |n| > n0 satisfy |i/n| < r
  double R = 0;   // contour radius around the transport group
  double Kp = 0, cp = 0;  // parabolic decay |e^{-E tau} Pp| <= Kp e^{-cp tau}
  double Kh = 0, ch = 0;  // transport growth |e^{-t n^2 E} Ph| <= Kh e^{ch |t|}
};

// Layout of the transport-group contours for the rescaled symbol z^{-1} E(z) Ph(z).
struct GroupContours {
  std::vector<TransportSpeed> speeds;
  double shift = 0;   // added to every centre when some speed is zero
  double radius = 0;  // common contour radius
};
GroupContours group_contours(const SystemMatrices& sys);

// Largest r on a geometric grid, refined by bisection, keeping every eigenvalue of E(z),
// |z| <= r, at distance >= R/10 from |zeta| = R with the transport groups resolved.
// A positive n0_override replaces the computed cutoff.
BranchConstants separation_radius(const SystemMatrices& sys, int n0_override = 0);

struct ProjectionPair {
  CMat Ph;
  CMat Pp;
};
ProjectionPair projection_split(const SystemMatrices& sys, cd z, double R);

struct HyperbolicBranch {
  double mu = 0;
  int multiplicity = 0;
  CMat P;  // total projection of the mu-group
  CMat R;  // z^{-2} (E P - mu z P)
};
std::vector<HyperbolicBranch> hyperbolic_branches(const SystemMatrices& sys, cd z, const CMat& Ph,
                                                  const GroupContours& groups);
std::vector<HyperbolicBranch> hyperbolic_branches(const SystemMatrices& sys, cd z, const CMat& Ph);

// G with phi in Im Pp^* iff phi_1 = G phi_2.
CMat graph_map(const SystemMatrices& sys, const CMat& Pp);

// Sampled estimates of (Kp, cp, Kh, ch) over |z| <= 1/n0.
BranchConstants branch_constants(const SystemMatrices& sys, const BranchConstants& sep);

struct SpectralBranch {
  int n = 0;
  CMat Ph, Pp, G;
  std::vector<HyperbolicBranch> groups;
};

// Branch data for n0 < |n| <= nmax; immutable once built.
class BranchTable {
 public:
  BranchTable() = default;
  BranchTable(const SystemMatrices& sys, const BranchConstants& consts, int nmax,
              Exec exec = Exec::kParallel);

  const BranchConstants& constants() const { return consts_; }
  int nmax() const { return nmax_; }
  int n0() const { return consts_.n0; }
  bool has(int n) const { return std::abs(n) > consts_.n0 && std::abs(n) <= nmax_; }
  const SpectralBranch& at(int n) const;

  void write_csv(std::ostream& os) const;

 private:
  BranchConstants consts_;
  int nmax_ = 0;
  std::vector<SpectralBranch> pos_, neg_;
};

SpectralBranch compute_branch(const SystemMatrices& sys, const GroupContours& groups, double R, int n);

}  // namespace nullctl
