#include "nullctl/fft.hpp"

#include <cmath>
#include <mutex>

#include <fftw3.h>

namespace nullctl {

namespace {

// FFTW planning is not thread-safe.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

void run_fft(std::vector<cd>& data, int sign) {
  const int n = static_cast<int>(data.size());
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard<std::mutex> lock(plan_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace

std::vector<cd> synthesize(const cd* coeffs, int nmax, int grid) {
  if (grid <= 2 * nmax) throw std::invalid_argument("synthesize: grid too coarse");
  std::vector<cd> buf(grid, cd(0));
  for (int n = -nmax; n <= nmax; ++n) buf[(n + grid) % grid] += coeffs[n + nmax];
  run_fft(buf, FFTW_BACKWARD);
  return buf;
}

std::vector<cd> analyze(const std::vector<cd>& values, int nmax) {
  const int grid = static_cast<int>(values.size());
  std::vector<cd> buf = values;
  run_fft(buf, FFTW_FORWARD);
  std::vector<cd> out(2 * nmax + 1);
  for (int n = -nmax; n <= nmax; ++n) out[n + nmax] = buf[((n % grid) + grid) % grid] / double(grid);
  return out;
}

double integrate_trig_real(const std::vector<cd>& coeffs, int nmax, double a, double b) {
  cd acc = coeffs[nmax] * (b - a);
  for (int n = 1; n <= nmax; ++n) {
    const cd ip = (std::exp(kI * double(n) * b) - std::exp(kI * double(n) * a)) / (kI * double(n));
    const cd im = (std::exp(-kI * double(n) * b) - std::exp(-kI * double(n) * a)) / (-kI * double(n));
    acc += coeffs[nmax + n] * ip + coeffs[nmax - n] * im;
  }
  return acc.real();
}

}  // namespace nullctl
