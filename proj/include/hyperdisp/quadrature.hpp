#pragma once

// Quadrature building blocks shared by every module: fixed Gauss-Legendre
// rules, adaptive Gauss-Kronrod with a depth budget, barycentric Lagrange
// interpolation and Chebyshev differentiation.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hyperdisp/errors.hpp"

namespace hyperdisp {

using cplx = std::complex<double>;
inline constexpr double pi = std::numbers::pi;

namespace quad {

/// Gauss-Legendre nodes and weights on [-1, 1], ascending.
struct GaussRule {
  std::vector<double> x;
  std::vector<double> w;
  int size() const { return static_cast<int>(x.size()); }
};

namespace detail {
template <unsigned N>
GaussRule expand_boost_rule() {
  using rule = boost::math::quadrature::gauss<double, N>;
  const auto& a = rule::abscissa();
  const auto& wt = rule::weights();
  GaussRule g;
  // boost stores the non-negative half; for odd N a[0] == 0.
  const bool odd = (N % 2) == 1;
  for (std::size_t i = a.size(); i-- > 0;) {
    if (odd && i == 0) continue;
    g.x.push_back(-a[i]);
    g.w.push_back(wt[i]);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    g.x.push_back(a[i]);
    g.w.push_back(wt[i]);
  }
  return g;
}
}  // namespace detail

/// Supported orders: 4, 6, 8, 10, 12, 16, 20, 24, 32, 48, 64.
/// Other requests round up to the next supported order.
inline const GaussRule& gauss_rule(int n) {
  static const GaussRule g4 = detail::expand_boost_rule<4>();
  static const GaussRule g6 = detail::expand_boost_rule<6>();
  static const GaussRule g8 = detail::expand_boost_rule<8>();
  static const GaussRule g10 = detail::expand_boost_rule<10>();
  static const GaussRule g12 = detail::expand_boost_rule<12>();
  static const GaussRule g16 = detail::expand_boost_rule<16>();
  static const GaussRule g20 = detail::expand_boost_rule<20>();
  static const GaussRule g24 = detail::expand_boost_rule<24>();
  static const GaussRule g32 = detail::expand_boost_rule<32>();
  static const GaussRule g48 = detail::expand_boost_rule<48>();
  static const GaussRule g64 = detail::expand_boost_rule<64>();
  if (n <= 4) return g4;
  if (n <= 6) return g6;
  if (n <= 8) return g8;
  if (n <= 10) return g10;
  if (n <= 12) return g12;
  if (n <= 16) return g16;
  if (n <= 20) return g20;
  if (n <= 24) return g24;
  if (n <= 32) return g32;
  if (n <= 48) return g48;
  return g64;
}

/// Fixed composite Gauss-Legendre over [a, b] split into `panels` equal pieces.
template <typename F>
auto gauss_composite(F&& f, double a, double b, int panels, int order = 20) {
  const GaussRule& g = gauss_rule(order);
  using R = decltype(f(a));
  R sum{};
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * h;
    const double mid = lo + 0.5 * h;
    for (int i = 0; i < g.size(); ++i) sum += g.w[i] * f(mid + 0.5 * h * g.x[i]);
  }
  return sum * (0.5 * h);
}

/// Tolerances for adaptive integration. max_intervals bounds the work per
/// breakpoint piece.
struct AdaptiveOptions {
  double rel_tol = 1e-12;
  double abs_tol = 1e-300;
  int max_intervals = 4000;
};

namespace detail {

template <typename R>
struct GKPiece {
  double a, b;
  R value;
  double err;
  double l1;
  bool operator<(const GKPiece& o) const { return err < o.err; }
};

template <typename R, typename F>
GKPiece<R> gk15(F& f, double a, double b) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
  using G = boost::math::quadrature::gauss<double, 7>;
  static const auto& xk = GK::abscissa();
  static const auto& wk = GK::weights();
  static const auto& wg = G::weights();
  const double mid = 0.5 * (a + b), h = 0.5 * (b - a);
  const R f0 = f(mid);
  R kron = wk[0] * f0;
  R gaus = wg[0] * f0;
  double l1 = wk[0] * std::abs(f0);
  for (std::size_t i = 1; i < xk.size(); ++i) {
    const R fl = f(mid - h * xk[i]);
    const R fr = f(mid + h * xk[i]);
    kron += wk[i] * (fl + fr);
    l1 += wk[i] * (std::abs(fl) + std::abs(fr));
    if (i % 2 == 0) gaus += wg[i / 2] * (fl + fr);
  }
  return {a, b, kron * h, std::abs(kron - gaus) * h, l1 * h};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7-15) over consecutive breakpoints.
/// Throws nonconvergence when the interval budget runs out far from tolerance.
template <typename F>
auto integrate(F&& f, std::span<const double> breaks, const AdaptiveOptions& opt = {}) {
  using R = decltype(f(breaks[0]));
  std::vector<detail::GKPiece<R>> heap;
  R total{};
  double err = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (!(breaks[i + 1] > breaks[i])) continue;
    heap.push_back(detail::gk15<R>(f, breaks[i], breaks[i + 1]));
    total += heap.back().value;
    err += heap.back().err;
    l1 += heap.back().l1;
  }
  std::make_heap(heap.begin(), heap.end());
  const int budget = opt.max_intervals * std::max<int>(1, static_cast<int>(heap.size()));
  auto target = [&] { return std::max({opt.abs_tol, opt.rel_tol * std::abs(total), 1e-15 * l1}); };
  int used = static_cast<int>(heap.size());
  R frozen{};
  double frozen_err = 0.0;
  while (!heap.empty() && err > target() && used < budget) {
    std::pop_heap(heap.begin(), heap.end());
    const auto worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      // interval at machine resolution; keep its contribution as is
      frozen += worst.value;
      frozen_err += worst.err;
      continue;
    }
    auto left = detail::gk15<R>(f, worst.a, mid);
    auto right = detail::gk15<R>(f, mid, worst.b);
    total += left.value + right.value - worst.value;
    err += left.err + right.err - worst.err;
    l1 += left.l1 + right.l1 - worst.l1;
    heap.push_back(left);
    std::push_heap(heap.begin(), heap.end());
    heap.push_back(right);
    std::push_heap(heap.begin(), heap.end());
    used += 2;
  }
  // recompute the running sums to shed accumulated cancellation
  {
    R t = frozen;
    double e = frozen_err;
    for (const auto& p : heap) {
      t += p.value;
      e += p.err;
    }
    total = t;
    err = e;
  }
  if (err > 1e3 * target()) {
    fail(ErrorCode::nonconvergence,
         "adaptive quadrature exhausted its interval budget (error estimate " + std::to_string(err) + ")");
  }
  return total;
}

template <typename F>
auto integrate(F&& f, double a, double b, const AdaptiveOptions& opt = {}) {
  const double br[2] = {a, b};
  return integrate(std::forward<F>(f), std::span<const double>(br, 2), opt);
}

/// Barycentric weights for Lagrange interpolation on arbitrary distinct nodes.
inline std::vector<double> barycentric_weights(std::span<const double> nodes) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k)
      if (k != j) w[j] *= (nodes[j] - nodes[k]);
    w[j] = 1.0 / w[j];
  }
  // Rescale to avoid overflow for many nodes; the formula is scale invariant.
  double m = 0.0;
  for (double v : w) m = std::max(m, std::abs(v));
  for (double& v : w) v /= m;
  return w;
}

/// Values of the Lagrange basis polynomials l_j(x) at x.
inline void lagrange_basis(std::span<const double> nodes, std::span<const double> bw, double x,
                           std::span<double> out) {
  const std::size_t n = nodes.size();
  for (std::size_t j = 0; j < n; ++j) {
    if (x == nodes[j]) {
      std::fill(out.begin(), out.end(), 0.0);
      out[j] = 1.0;
      return;
    }
  }
  double denom = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = bw[j] / (x - nodes[j]);
    denom += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= denom;
}

template <typename T>
T barycentric_eval(std::span<const double> nodes, std::span<const double> bw, std::span<const T> values,
                   double x) {
  std::vector<double> l(nodes.size());
  lagrange_basis(nodes, bw, x, l);
  T s{};
  for (std::size_t j = 0; j < nodes.size(); ++j) s += l[j] * values[j];
  return s;
}

/// Chebyshev extreme points mapped to [a, b], ascending.
inline std::vector<double> chebyshev_points(int n, double a, double b) {
  std::vector<double> x(n);
  for (int k = 0; k < n; ++k) {
    const double c = -std::cos(pi * k / (n - 1));
    x[k] = 0.5 * (a + b) + 0.5 * (b - a) * c;
  }
  return x;
}

/// Derivative of the interpolant through Chebyshev extreme-point samples,
/// returned at the same points (via the Chebyshev coefficient recurrence).
template <typename T>
std::vector<T> chebyshev_derivative(std::span<const T> values, double a, double b) {
  const int n = static_cast<int>(values.size());
  const int N = n - 1;
  // values are at x_k = -cos(pi k / N); coefficients via direct cosine sums.
  std::vector<T> c(n);
  for (int j = 0; j <= N; ++j) {
    T s{};
    for (int k = 0; k <= N; ++k) {
      const double f = (k == 0 || k == N) ? 0.5 : 1.0;
      // x_k = -cos(pi k/N) => T_j(x_k) = (-1)^j cos(pi j k / N)
      s += f * values[k] * std::cos(pi * j * k / N);
    }
    const double sign = (j % 2 == 0) ? 1.0 : -1.0;
    c[j] = s * (2.0 / N) * sign;
  }
  c[0] *= 0.5;
  c[N] *= 0.5;
  // derivative coefficients
  std::vector<T> d(n + 1, T{});
  for (int j = N - 1; j >= 0; --j) d[j] = d[j + 2] + 2.0 * (j + 1) * c[j + 1];
  d[0] *= 0.5;
  const double scale = 2.0 / (b - a);
  std::vector<T> out(n);
  for (int k = 0; k <= N; ++k) {
    const double x = -std::cos(pi * k / N);
    // Clenshaw
    T b1{}, b2{};
    for (int j = N - 1; j >= 1; --j) {
      T tmp = 2.0 * x * b1 - b2 + d[j];
      b2 = b1;
      b1 = tmp;
    }
    out[k] = (x * b1 - b2 + d[0]) * scale;
  }
  return out;
}

}  // namespace quad
}  // namespace hyperdisp
