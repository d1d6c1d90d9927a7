#pragma once

#include <vector>

#include "nullctl/core.hpp"

namespace nullctl {

// Values sum_{|n| <= nmax} c[n + nmax] e^{i n x_j} at x_j = 2 pi j / grid.
std::vector<cd> synthesize(const cd* coeffs, int nmax, int grid);

// Coefficients (1/grid) sum_j v_j e^{-i n x_j} for |n| <= nmax; aliasing-free when grid > 2 nmax.
std::vector<cd> analyze(const std::vector<cd>& values, int nmax);

// Exact integral over [a, b] of the trigonometric polynomial with the given coefficients.
double integrate_trig_real(const std::vector<cd>& coeffs, int nmax, double a, double b);

}  // namespace nullctl
