#pragma once

#include <complex>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nullctl {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr cd kI{0.0, 1.0};

// Input violates an operation's precondition; callers may refuse rather than fail.
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Computation ran but could not meet its accuracy or conditioning contract.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Selects the serial reference loop or the OpenMP loop for data-parallel kernels.
enum class Exec { kSerial, kParallel };

// Wraps x into [0, 2pi).
double wrap_angle(double x);

// Composite Gauss-Legendre rule. Panels are contiguous; each carries `order` nodes.
struct TimeGrid {
  std::vector<double> breaks;
  std::vector<double> nodes;
  std::vector<double> weights;
  int order = 8;

  static TimeGrid uniform(double t0, double t1, int panels, int order = 8);
  // Panels shrink geometrically towards t1 with the given ratio.
  static TimeGrid graded(double t0, double t1, int panels, double ratio, int order = 8);
  // Panel without nodes, used for control-free stretches.
  static TimeGrid gap(double t0, double t1);
  // Concatenates grids whose break points line up.
  static TimeGrid concat(const std::vector<TimeGrid>& parts);

  int size() const { return static_cast<int>(nodes.size()); }
  double start() const { return breaks.empty() ? 0.0 : breaks.front(); }
  double end() const { return breaks.empty() ? 0.0 : breaks.back(); }
};

// Nodes and weights of the order-point Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int order, std::vector<double>& x, std::vector<double>& w);

// C-infinity transition: 0 for s <= 0, 1 for s >= 1, and psi(1 - s) = 1 - psi(s).
double smooth_step(double s);

// exp(-1 / (1 - y^2)) on |y| < 1, zero elsewhere.
double bump(double y);

// 0 outside (a, b), 1 on [c, d], smooth in between; requires a <= c <= d <= b.
double plateau(double x, double a, double b, double c, double d);

// Moment-method time profile on (0, 1): exp(-1/tau) near 0, mirrored near 1.
double moment_time_profile(double tau);

// Fourier coefficients (1/2pi) int f e^{-inx} for |n| <= nmax by FFT on `grid` samples.
std::vector<cd> fourier_coefficients(const std::function<double(double)>& f, int nmax,
                                     int grid = 16384);

// Smallest power of two >= n.
int next_pow2(int n);

}  // namespace nullctl
