#pragma once

// Free resolvent kernel R_0(n/2 + sigma; r) on H^{n+1}, its imaginary part on
// the critical line, the spectral coefficient and the kernel K(u; r).

#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <vector>

#include "hyperdisp/errors.hpp"
#include "hyperdisp/quadrature.hpp"
#include "hyperdisp/radial_grid.hpp"
#include "hyperdisp/specfun.hpp"

namespace hyperdisp {

/// s = n/2 + sigma on H^{n+1}.
struct SpectralPoint {
  int n = 2;
  cplx sigma{};
  static SpectralPoint critical(int n, double lambda) { return {n, cplx(0.0, lambda)}; }
  double lambda() const { return sigma.imag(); }
  cplx s() const { return 0.5 * n + sigma; }
  cplx energy() const { return s() * (double(n) - s()); }
};

struct KernelSample {
  double r = 0.0;
  cplx value{};
  AsymptoticRegime regime;
};


inline cplx r0_kernel(const SpectralPoint& pt, double r) {
  require(pt.sigma.real() >= 0.0, ErrorCode::branch, "r0_kernel needs Re sigma >= 0");
  require(r > 0.0, ErrorCode::singular_input, "r0_kernel is singular at r = 0");
  return free_resolvent(pt.n, pt.sigma, r);
}

inline KernelSample r0_sample(const SpectralPoint& pt, double r) {
  return {r, r0_kernel(pt, r), classify_regime(pt.sigma, r)};
}

/// m-th sigma-derivative by the Cauchy integral on a circle of radius eps.
inline cplx r0_kernel_derivative(const SpectralPoint& pt, double r, int m, double eps = 0.05, int points = 32) {
  require(m >= 0, ErrorCode::precondition, "derivative order must be >= 0");
  if (m == 0) return r0_kernel(pt, r);
  cplx acc = 0.0;
  for (int k = 0; k < points; ++k) {
    const cplx e = std::polar(1.0, 2.0 * pi * k / points);
    acc += free_resolvent(pt.n, pt.sigma + eps * e, r) * std::pow(e, -m);
  }
  return acc * std::tgamma(m + 1.0) / (points * std::pow(eps, m));
}

/// Real spectral coefficient a_n with R_0(n/2+i lam) - R_0(n/2-i lam) = i a_n sinh^{-mu} P,
/// a_n = -(2 pi)^{-(n+1)/2} |Gamma(n/2 + i lam)|^2 sinh(pi lam). Odd in lambda.
inline double a_n(int n, double lambda) {
  require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
  const double c = -std::pow(2.0 * pi, -0.5 * (n + 1));
  const double l2 = lambda * lambda;
  double prod = 1.0;
  if (n % 2 == 0) {
    // |Gamma(k + i lam)|^2 sinh(pi lam) = pi lam prod_{j<k} (j^2 + lam^2)
    for (int j = 1; j < n / 2; ++j) prod *= j * j + l2;
    return c * pi * lambda * prod;
  }
  // |Gamma(k + 1/2 + i lam)|^2 sinh(pi lam) = pi tanh(pi lam) prod_{j<=k} ((j-1/2)^2 + lam^2)
  for (int j = 1; j <= (n - 1) / 2; ++j) prod *= (j - 0.5) * (j - 0.5) + l2;
  return c * pi * std::tanh(pi * lambda) * prod;
}

/// Constant c_n of A_n = c_n |Gamma(n/2 + i lam)|^2 sinh(pi lam), purely imaginary.
inline cplx spectral_constant(int n) { return cplx(0.0, -std::pow(2.0 * pi, -0.5 * (n + 1))); }

/// A_n(lambda) = i a_n(lambda).
inline cplx spectral_coefficient(int n, double lambda) { return cplx(0.0, a_n(n, lambda)); }

struct SpectralCalibration {
  int n = 0;
  cplx fitted{};
  cplx analytic{};
  double relative_mismatch = 0.0;  // |fitted - analytic| / |analytic|
  double max_residual = 0.0;       // worst pointwise residual with the fitted constant
};

/// Least-squares fit of c_n from the kernel difference across the critical line.
inline SpectralCalibration calibrate_spectral_constant(int n) {
  cplx num = 0.0;
  double den = 0.0;
  struct Row { cplx x, y; };
  std::vector<Row> rows;
  const double mu = 0.5 * (n - 1);
  for (double lam : {0.5, 1.0, 2.0, 3.5}) {
    for (double r : {0.3, 1.0, 2.0}) {
      const cplx y = free_resolvent(n, cplx(0, lam), r) - free_resolvent(n, cplx(0, -lam), r);
      const double g2sh = a_n(n, lam) / -std::pow(2.0 * pi, -0.5 * (n + 1));  // |Gamma|^2 sinh
      const cplx x = g2sh * std::exp(-mu * detail::log_sinh(r)) * legendre_p(LegendreOrder::from(n, cplx(0, lam)), r);
      rows.push_back({x, y});
      num += std::conj(x) * y;
      den += std::norm(x);
    }
  }
  SpectralCalibration c;
  c.n = n;
  c.fitted = num / den;
  c.analytic = spectral_constant(n);
  c.relative_mismatch = std::abs(c.fitted - c.analytic) / std::abs(c.analytic);
  for (const auto& row : rows)
    c.max_residual = std::max(c.max_residual, std::abs(row.y - c.fitted * row.x) / std::max(1.0, std::abs(row.y)));
  return c;
}

/// lim_{r -> 0} sinh^{-mu}(r) P^{-mu}_nu(cosh r).
inline double legendre_p_origin(int n) {
  const double mu = 0.5 * (n - 1);
  return std::pow(2.0, -mu) / std::tgamma(mu + 1.0);
}

/// Im R_0(n/2 + i lambda; r), smooth in r including r = 0.
inline double im_r0_critical(int n, double lambda, double r) {
  require(r >= 0.0, ErrorCode::precondition, "im_r0_critical needs r >= 0");
  if (lambda == 0.0) return 0.0;
  if (r == 0.0) return 0.5 * a_n(n, lambda) * legendre_p_origin(n);
  if (n % 2 == 0 && std::abs(lambda) * r >= 0.5) return free_resolvent(n, cplx(0, lambda), r).imag();
  const double mu = 0.5 * (n - 1);
  const cplx p = legendre_p(LegendreOrder::from(n, cplx(0, lambda)), r);
  return 0.5 * a_n(n, lambda) * std::exp(-mu * detail::log_sinh(r)) * p.real();
}

/// Im R_0(n/2 + i lambda; r) at fixed r for many lambda <= lambda_max: the
/// Legendre integral is frozen on a Gauss grid and re-weighted per lambda.
class ImR0Profile {
 public:
  ImR0Profile(int n, double r, double lambda_max) : n_(n), r_(r) {
    require(r >= 0.0, ErrorCode::precondition, "profile radius must be >= 0");
    if (r == 0.0) return;
    const double mu = 0.5 * (n - 1);
    const double e = mu - 0.5;
    const int pieces = std::max(4, static_cast<int>(std::ceil(lambda_max * r / (2.0 * pi))) + 2);
    const auto& g = quad::gauss_rule(16);
    const double pref = std::sqrt(2.0 / pi) / std::tgamma(mu + 0.5) * std::exp(-2.0 * mu * detail::log_sinh(r));
    for (int k = 0; k < pieces; ++k) {
      const double a = std::sqrt(r * k / pieces), b = std::sqrt(r * (k + 1) / pieces);
      const double h = 0.5 * (b - a), m = 0.5 * (a + b);
      for (int i = 0; i < g.size(); ++i) {
        const double v = m + h * g.x[i];
        const double v2 = v * v;
        double w = 2.0 * std::pow(v, 2.0 * mu) * g.w[i] * h;
        if (e != 0.0) w *= std::pow(std::sinh(r - 0.5 * v2) * detail::sinhc(0.5 * v2), e);
        u_.push_back(r - v2);
        w_.push_back(pref * w);
      }
    }
  }

  double operator()(double lambda) const {
    if (lambda == 0.0) return 0.0;
    if (r_ == 0.0) return 0.5 * a_n(n_, lambda) * legendre_p_origin(n_);
    double s = 0.0;
    for (std::size_t j = 0; j < u_.size(); ++j) s += w_[j] * std::cos(lambda * u_[j]);
    return 0.5 * a_n(n_, lambda) * s;
  }

  /// Spherical function Phi_lambda(r), normalized to 1 at r = 0.
  double phi(double lambda) const {
    if (r_ == 0.0) return 1.0;
    double s = 0.0;
    for (std::size_t j = 0; j < u_.size(); ++j) s += w_[j] * std::cos(lambda * u_[j]);
    return s / legendre_p_origin(n_);
  }

  double r() const { return r_; }
  int n() const { return n_; }

 private:
  int n_;
  double r_;
  std::vector<double> u_, w_;
};

/// K(u; r) = sinh^{-2mu} r (cosh r - cosh u)^{mu - 1/2} on [0, r], else 0.
inline double k_kernel(int n, double u, double r) {
  require(u >= 0.0 && r > 0.0, ErrorCode::precondition, "k_kernel needs u >= 0, r > 0");
  if (u > r) return 0.0;
  const double mu = 0.5 * (n - 1);
  return std::exp(-2.0 * mu * detail::log_sinh(r)) * std::pow(std::cosh(r) - std::cosh(u), mu - 0.5);
}

struct HTransform {
  std::vector<double> u;
  std::vector<double> h;
  double mass = 0.0;       // int |g| dV over [0, r_max]
  double tail_mass = 0.0;  // int |g| dV over [r_max, r_max + 30]
  bool truncated = false;  // tail_mass exceeded tail_tol * mass
};

/// h(u) = int K(u; d(0, w)) g(w) dV(w) for radial g, sampled at u (even in u).
inline HTransform h_transform(int n, const std::function<double(double)>& g, std::span<const double> u_nodes,
                              double r_max, double tail_tol = 1e-10) {
  const double mu = 0.5 * (n - 1);
  const double e = mu - 0.5;
  const double area = sphere_area(n);
  HTransform out;
  out.u.assign(u_nodes.begin(), u_nodes.end());
  quad::AdaptiveOptions opt;
  opt.rel_tol = 1e-12;
  opt.abs_tol = 1e-300;
  for (double uu : u_nodes) {
    const double u = std::abs(uu);
    if (u >= r_max) {
      out.h.push_back(0.0);
      continue;
    }
    // r = u + v^2: K dr sinh^n r = 2 v^{2mu} [sinh(u + v^2/2) sinhc(v^2/2)]^{mu-1/2} sinh r dv
    auto f = [&](double v) {
      const double v2 = v * v;
      const double r = u + v2;
      double w = 2.0 * std::pow(v, 2.0 * mu) * std::sinh(r);
      if (e != 0.0) w *= std::pow(std::sinh(u + 0.5 * v2) * detail::sinhc(0.5 * v2), e);
      return w * g(r);
    };
    const double vmax = std::sqrt(r_max - u);
    std::vector<double> br;
    const int pieces = 8;
    for (int k = 0; k <= pieces; ++k) br.push_back(vmax * k / pieces);
    out.h.push_back(area * quad::integrate(f, std::span<const double>(br), opt));
  }
  auto vol = [&](double r) { return std::abs(g(r)) * area * std::pow(std::sinh(r), n); };
  out.mass = quad::integrate(vol, 0.0, r_max, opt);
  out.tail_mass = quad::integrate(vol, r_max, r_max + 30.0, opt);
  out.truncated = out.tail_mass > tail_tol * std::max(out.mass, 1e-300);
  return out;
}

/// |R_0| divided by the regime bound with the constant stripped:
///   |sigma r| < 1 (or r < 1 when |sigma| < 1): r^{1-n}, or 1 + |log r| for n = 1
///   otherwise: <sigma>^{n/2-1} e^{-(n/2 + Re sigma) r}
inline double bound_ratio(const SpectralPoint& pt, double r) {
  const double abs_sigma = std::abs(pt.sigma);
  const bool near = abs_sigma >= 1.0 ? abs_sigma * r < 1.0 : r < 1.0;
  double b;
  if (near) {
    b = pt.n == 1 ? 1.0 + std::abs(std::log(r)) : std::pow(r, 1.0 - pt.n);
  } else {
    const double jap = std::max(1.0, abs_sigma);
    b = std::pow(jap, 0.5 * pt.n - 1.0) * std::exp(-(0.5 * pt.n + pt.sigma.real()) * r);
  }
  return std::abs(r0_kernel(pt, r)) / b;
}

}  // namespace hyperdisp
