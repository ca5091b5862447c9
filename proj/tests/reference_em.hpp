#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace reed::testing {

// Textbook EM in the probability domain, written independently of the
// library: numpy-style linear quantiles, no restarts.
struct RefGmm {
  double m[2], v[2], w[2];
};

inline RefGmm reference_em(std::vector<double> x, double tol, int max_iter, double floor) {
  const std::size_t n = x.size();
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  auto q = [&](double p) {
    const double h = p * (n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    return lo + 1 < n ? s[lo] + (h - lo) * (s[lo + 1] - s[lo]) : s[lo];
  };
  double mu = 0.0, var = 0.0;
  for (double a : x) mu += a / n;
  for (double a : x) var += (a - mu) * (a - mu) / n;
  RefGmm g{{q(0.1), q(0.9)}, {var, var}, {0.5, 0.5}};
  auto pdf = [](double a, double m, double v) {
    return std::exp(-(a - m) * (a - m) / (2 * v)) / std::sqrt(2 * std::numbers::pi * v);
  };
  auto ll = [&] {
    double t = 0.0;
    for (double a : x) t += std::log(g.w[0] * pdf(a, g.m[0], g.v[0]) + g.w[1] * pdf(a, g.m[1], g.v[1]));
    return t / n;
  };
  double prev = ll();
  std::vector<double> r(n);
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = g.w[0] * pdf(x[i], g.m[0], g.v[0]), b = g.w[1] * pdf(x[i], g.m[1], g.v[1]);
      r[i] = b / (a + b);
    }
    for (int k = 0; k < 2; ++k) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double rk = k ? r[i] : 1 - r[i];
        nk += rk;
        sx += rk * x[i];
      }
      g.m[k] = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) sv += (k ? r[i] : 1 - r[i]) * (x[i] - g.m[k]) * (x[i] - g.m[k]);
      g.v[k] = std::max(sv / nk, floor);
      g.w[k] = nk / n;
    }
    const double cur = ll();
    if (cur - prev < tol) break;
    prev = cur;
  }
  if (g.m[0] > g.m[1]) {
    std::swap(g.m[0], g.m[1]);
    std::swap(g.v[0], g.v[1]);
    std::swap(g.w[0], g.w[1]);
  }
  return g;
}

}  // namespace reed::testing
