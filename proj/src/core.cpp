#include "nullctl/core.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>

#include "nullctl/fft.hpp"

namespace nullctl {

namespace {

template <int N>
void boost_rule(std::vector<double>& x, std::vector<double>& w) {
  using Rule = boost::math::quadrature::gauss<double, N>;
  const auto& a = Rule::abscissa();
  const auto& b = Rule::weights();
  x.clear();
  w.clear();
  for (int i = static_cast<int>(a.size()) - 1; i >= 0; --i) {
    if (a[i] == 0.0) continue;
    x.push_back(-a[i]);
    w.push_back(b[i]);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    x.push_back(a[i]);
    w.push_back(b[i]);
  }
}

}  // namespace

double wrap_angle(double x) {
  double y = std::fmod(x, kTwoPi);
  if (y < 0) y += kTwoPi;
  if (y >= kTwoPi) y -= kTwoPi;
  return y;
}

void gauss_legendre(int order, std::vector<double>& x, std::vector<double>& w) {
  switch (order) {
    case 4: boost_rule<4>(x, w); break;
    case 8: boost_rule<8>(x, w); break;
    case 10: boost_rule<10>(x, w); break;
    case 16: boost_rule<16>(x, w); break;
    case 20: boost_rule<20>(x, w); break;
    case 30: boost_rule<30>(x, w); break;
    default:
      throw std::invalid_argument("unsupported Gauss-Legendre order " + std::to_string(order));
  }
}

TimeGrid TimeGrid::uniform(double t0, double t1, int panels, int order) {
  std::vector<double> br(panels + 1);
  for (int p = 0; p <= panels; ++p) br[p] = t0 + (t1 - t0) * p / panels;
  br.back() = t1;
  TimeGrid g;
  g.order = order;
  std::vector<double> x, w;
  gauss_legendre(order, x, w);
  g.breaks = br;
  for (int p = 0; p < panels; ++p) {
    const double h = 0.5 * (br[p + 1] - br[p]);
    const double c = 0.5 * (br[p + 1] + br[p]);
    for (int q = 0; q < order; ++q) {
      g.nodes.push_back(c + h * x[q]);
      g.weights.push_back(h * w[q]);
    }
  }
  return g;
}

TimeGrid TimeGrid::graded(double t0, double t1, int panels, double ratio, int order) {
  std::vector<double> len(panels);
  double total = 0;
  for (int p = 0; p < panels; ++p) {
    len[p] = std::pow(ratio, p);
    total += len[p];
  }
  TimeGrid g;
  g.order = order;
  std::vector<double> x, w;
  gauss_legendre(order, x, w);
  g.breaks.push_back(t0);
  double t = t0;
  for (int p = 0; p < panels; ++p) {
    const double next = (p + 1 == panels) ? t1 : t + (t1 - t0) * len[p] / total;
    const double h = 0.5 * (next - t);
    const double c = 0.5 * (next + t);
    for (int q = 0; q < order; ++q) {
      g.nodes.push_back(c + h * x[q]);
      g.weights.push_back(h * w[q]);
    }
    g.breaks.push_back(next);
    t = next;
  }
  return g;
}

TimeGrid TimeGrid::gap(double t0, double t1) {
  TimeGrid g;
  g.breaks = {t0, t1};
  return g;
}

TimeGrid TimeGrid::concat(const std::vector<TimeGrid>& parts) {
  TimeGrid g;
  for (const auto& part : parts) {
    if (part.breaks.empty()) continue;
    if (g.breaks.empty()) {
      g = part;
      continue;
    }
    if (std::abs(part.breaks.front() - g.breaks.back()) > 1e-12 * (1 + std::abs(g.breaks.back())))
      throw std::invalid_argument("TimeGrid::concat: panels do not line up");
    g.breaks.insert(g.breaks.end(), part.breaks.begin() + 1, part.breaks.end());
    g.nodes.insert(g.nodes.end(), part.nodes.begin(), part.nodes.end());
    g.weights.insert(g.weights.end(), part.weights.begin(), part.weights.end());
  }
  return g;
}

double smooth_step(double s) {
  if (s <= 0) return 0.0;
  if (s >= 1) return 1.0;
  const double a = std::exp(-1.0 / s);
  const double b = std::exp(-1.0 / (1.0 - s));
  return a / (a + b);
}

double bump(double y) {
  if (std::abs(y) >= 1) return 0.0;
  return std::exp(-1.0 / (1.0 - y * y));
}

double plateau(double x, double a, double b, double c, double d) {
  if (x <= a || x >= b) return 0.0;
  if (x >= c && x <= d) return 1.0;
  if (x < c) return smooth_step((x - a) / (c - a));
  return smooth_step((b - x) / (b - d));
}

double moment_time_profile(double tau) {
  if (tau <= 0 || tau >= 1) return 0.0;
  const double blend = smooth_step((tau - 0.25) / 0.5);
  return (1.0 - blend) * std::exp(-1.0 / tau) + blend * std::exp(-1.0 / (1.0 - tau));
}

std::vector<cd> fourier_coefficients(const std::function<double(double)>& f, int nmax,
                                     int grid) {
  grid = std::max(grid, next_pow2(4 * nmax + 2));
  std::vector<cd> v(grid);
  for (int j = 0; j < grid; ++j) v[j] = f(kTwoPi * j / grid);
  return analyze(v, nmax);
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace nullctl
