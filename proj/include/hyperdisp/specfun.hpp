#pragma once

// Complex Gamma, modified Bessel I/K, Legendre P/Q for the conical family
// P^{-mu}_{-1/2+sigma}(cosh r), mu = (n-1)/2, and the closed forms of the
// free resolvent kernel they are expressed through.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "hyperdisp/errors.hpp"
#include "hyperdisp/quadrature.hpp"

namespace hyperdisp {

/// value = mantissa * exp(exponent); used where e^{|z|} would overflow.
struct ScaledComplex {
  cplx mantissa{};
  double exponent = 0.0;
  cplx value() const { return exponent == 0.0 ? mantissa : mantissa * std::exp(exponent); }
};

inline constexpr double bessel_scale_threshold = 500.0;

namespace detail {

inline bool is_nonpositive_integer(cplx z) {
  return z.imag() == 0.0 && z.real() <= 0.0 && z.real() == std::floor(z.real());
}

// log(sin(pi z)) without overflow for large |Im z| (any branch).
inline cplx log_sin_pi(cplx z) {
  const cplx w = pi * z;
  const cplx i(0.0, 1.0);
  if (std::abs(w.imag()) < 20.0) return std::log(std::sin(w));
  if (w.imag() > 0.0) return -i * w + std::log(cplx(0.0, 0.5)) + std::log(1.0 - std::exp(2.0 * i * w));
  return i * w + std::log(cplx(0.0, -0.5)) + std::log(1.0 - std::exp(-2.0 * i * w));
}

inline constexpr std::array<double, 9> lanczos_coef = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

}  // namespace detail

/// A logarithm of Gamma(z) (imaginary part not reduced to the principal branch).
inline cplx lgamma_complex(cplx z) {
  if (detail::is_nonpositive_integer(z)) fail(ErrorCode::gamma_pole, "Gamma has a pole at a non-positive integer");
  if (z.real() < 0.5) return std::log(pi) - detail::log_sin_pi(z) - lgamma_complex(1.0 - z);
  z -= 1.0;
  cplx x = detail::lanczos_coef[0];
  for (int i = 1; i < 9; ++i) x += detail::lanczos_coef[i] / (z + double(i));
  const cplx t = z + 7.5;
  return 0.5 * std::log(2.0 * pi) + (z + 0.5) * std::log(t) - t + std::log(x);
}

inline cplx gamma_complex(cplx z) {
  if (detail::is_nonpositive_integer(z)) fail(ErrorCode::gamma_pole, "Gamma has a pole at a non-positive integer");
  if (z.imag() == 0.0) return {std::tgamma(z.real()), 0.0};
  return std::exp(lgamma_complex(z));
}

// ---------------------------------------------------------------- Bessel

namespace detail {

// Hankel asymptotic sum  sum_k (+-1)^k a_k(mu) / z^k, truncated at the
// smallest term.
inline cplx hankel_sum(double mu, cplx z, bool alternate) {
  const double m4 = 4.0 * mu * mu;
  cplx term = 1.0, sum = 1.0;
  double last = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double f = (m4 - (2.0 * k - 1) * (2.0 * k - 1)) / (8.0 * k);
    if (f == 0.0) break;  // half-integer order: series terminates
    cplx next = term * f / z;
    if (alternate) next = -next;
    const double mag = std::abs(next);
    if (mag > last) break;
    term = next;
    sum += term;
    last = mag;
    if (mag < 1e-17 * std::abs(sum)) break;
  }
  return sum;
}

inline ScaledComplex normalise(ScaledComplex v, cplx z) {
  if (std::abs(z) <= bessel_scale_threshold && v.exponent != 0.0) {
    v.mantissa *= std::exp(v.exponent);
    v.exponent = 0.0;
  }
  return v;
}

}  // namespace detail

/// I_mu(z), mu >= 0, as a scaled pair (exponent nonzero only for |z| > 500).
inline ScaledComplex bessel_i_scaled(double mu, cplx z) {
  require(mu >= 0.0, ErrorCode::precondition, "bessel_i needs mu >= 0");
  if (z == cplx(0.0)) return {mu == 0.0 ? cplx(1.0) : cplx(0.0), 0.0};
  if (std::abs(z) <= 14.0) {
    // power series in extended precision; |z| <= 14 keeps cancellation for
    // imaginary arguments within a few digits of long double
    using lc = std::complex<long double>;
    const lc zl(z.real(), z.imag());
    const lc q = zl * zl / 4.0L;
    lc term = std::pow(zl / 2.0L, static_cast<long double>(mu)) / static_cast<long double>(std::tgamma(mu + 1.0));
    lc sum = term;
    for (int k = 1; k < 400; ++k) {
      term *= q / (static_cast<long double>(k) * (static_cast<long double>(mu) + k));
      sum += term;
      if (std::abs(term) < 1e-21L * std::abs(sum) && k > 2) break;
    }
    return {cplx(static_cast<double>(sum.real()), static_cast<double>(sum.imag())), 0.0};
  }
  if (z.imag() < 0.0) {
    ScaledComplex c = bessel_i_scaled(mu, std::conj(z));
    c.mantissa = std::conj(c.mantissa);
    return c;
  }
  const cplx i(0.0, 1.0);
  const cplx s1 = detail::hankel_sum(mu, z, true);
  const cplx s2 = detail::hankel_sum(mu, z, false);
  const cplx pref = 1.0 / std::sqrt(2.0 * pi * z);
  const cplx m = pref * (std::exp(i * z.imag()) * s1 +
                         i * std::exp(i * mu * pi) * std::exp(-z - z.real()) * s2);
  return detail::normalise({m, z.real()}, z);
}

/// K_mu(z), mu >= 0, Re z >= 0 (z != 0).
inline ScaledComplex bessel_k_scaled(double mu, cplx z) {
  require(mu >= 0.0, ErrorCode::precondition, "bessel_k needs mu >= 0");
  require(z != cplx(0.0), ErrorCode::singular_input, "K_mu is singular at z = 0");
  require(std::abs(std::arg(z)) <= 0.5 * pi + 1e-12, ErrorCode::branch, "bessel_k needs |arg z| <= pi/2");
  if (std::abs(z) >= 17.0) {
    const cplx i(0.0, 1.0);
    const cplx m = std::sqrt(pi / (2.0 * z)) * std::exp(-i * z.imag()) * detail::hankel_sum(mu, z, false);
    return detail::normalise({m, -z.real()}, z);
  }
  // K = sqrt(pi/2z) e^{-z}/Gamma(mu+1/2) int_0^inf 2 e^{-v^2} v^{2mu} (1 + v^2/2z)^{mu-1/2} dv
  const double e = mu - 0.5;
  auto f = [&](double v) -> cplx {
    const double v2 = v * v;
    cplx g = 2.0 * std::exp(-v2) * std::pow(v, 2.0 * mu);
    if (e != 0.0) g *= std::pow(1.0 + v2 / (2.0 * z), e);
    return g;
  };
  const double c = std::sqrt(2.0 * std::abs(z));
  std::vector<double> br = {0.0};
  for (double b : {0.25 * c, c, 4.0 * c, 3.0, 6.0})
    if (b > br.back() && b < 9.0) br.push_back(b);
  br.push_back(9.0);
  quad::AdaptiveOptions opt;
  opt.rel_tol = 1e-13;
  const cplx integral = quad::integrate(f, std::span<const double>(br), opt);
  return {std::sqrt(pi / (2.0 * z)) * std::exp(-z) * integral / std::tgamma(mu + 0.5), 0.0};
}

inline cplx bessel_i(double mu, cplx z) { return bessel_i_scaled(mu, z).value(); }
inline cplx bessel_k(double mu, cplx z) { return bessel_k_scaled(mu, z).value(); }

// ---------------------------------------------------------------- Legendre

/// Order/degree of P^{-mu}_nu, Q^mu_nu with nu = -1/2 + sigma.
struct LegendreOrder {
  double mu = 0.0;
  cplx nu{};
  static LegendreOrder from(int n, cplx sigma) { return {0.5 * (n - 1), sigma - 0.5}; }
  cplx sigma() const { return nu + 0.5; }
  int dimension() const { return static_cast<int>(std::lround(2.0 * mu + 1.0)); }
};

enum class RegimeKind { SmallArg, LargeArg, UniformBessel };

struct AsymptoticRegime {
  RegimeKind kind = RegimeKind::SmallArg;
  cplx sigma{};
  double r = 0.0;
};

inline AsymptoticRegime classify_regime(cplx sigma, double r) {
  return {std::abs(sigma) * r <= 1.0 ? RegimeKind::SmallArg : RegimeKind::LargeArg, sigma, r};
}

namespace detail {

inline double sinhc(double x) { return std::abs(x) < 1e-4 ? 1.0 + x * x / 6.0 : std::sinh(x) / x; }

inline double log_sinh(double r) { return r > 20.0 ? r - std::log(2.0) + std::log1p(-std::exp(-2.0 * r)) : std::log(std::sinh(r)); }

// Breakpoints 0 = v_0 < ... < v_K = sqrt(span) uniform in v^2, K chosen so
// each piece covers about half an oscillation of exp(i*omega*v^2).
inline std::vector<double> chirp_breaks(double span, double omega, int extra_min = 1) {
  const int k = std::clamp(static_cast<int>(std::ceil(std::abs(omega) * span / pi)), extra_min, 20000);
  std::vector<double> br(k + 1);
  for (int j = 0; j <= k; ++j) br[j] = std::sqrt(span * j / k);
  return br;
}

}  // namespace detail

/// int_0^r (cosh r - cosh u)^{mu-1/2} cosh(sigma u) du with u = r - v^2.
inline cplx legendre_p_integral(double mu, cplx sigma, double r, const quad::AdaptiveOptions& opt = {}) {
  const double e = mu - 0.5;
  auto f = [&](double v) -> cplx {
    const double v2 = v * v;
    double w = 2.0 * std::pow(v, 2.0 * mu);
    if (e != 0.0) w *= std::pow(std::sinh(r - 0.5 * v2) * detail::sinhc(0.5 * v2), e);
    return w * std::cosh(sigma * (r - v2));
  };
  std::vector<double> br = detail::chirp_breaks(r, sigma.imag(), 2);
  return quad::integrate(f, std::span<const double>(br), opt);
}

/// P^{-mu}_nu(cosh r) for nu = -1/2 + sigma via the Mehler-type integral.
inline cplx legendre_p(const LegendreOrder& o, double r, const quad::AdaptiveOptions& opt = {}) {
  require(o.mu > -0.5, ErrorCode::precondition, "legendre_p needs mu > -1/2");
  require(r > 0.0, ErrorCode::singular_input, "legendre_p needs r > 0");
  const double pref = std::sqrt(2.0 / pi) * std::exp(-o.mu * detail::log_sinh(r)) / std::tgamma(o.mu + 0.5);
  return pref * legendre_p_integral(o.mu, o.sigma(), r, opt);
}

/// Normalised spherical function Phi_sigma(r) = 2^mu Gamma(mu+1) sinh^{-mu} P,
/// Phi(0) = 1; eigenfunction of the radial Laplacian on H^{n+1}.
inline cplx spherical_function(int n, cplx sigma, double r) {
  require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
  if (r == 0.0) return 1.0;
  if (n == 2) {
    const cplx sr = sigma * r;
    const cplx ratio = std::abs(sr) < 1e-6 ? r * (1.0 + sr * sr / 6.0) : std::sinh(sr) / sigma;
    return ratio / std::sinh(r);
  }
  const double mu = 0.5 * (n - 1);
  const double pref = std::sqrt(2.0 / pi) * std::pow(2.0, mu) * std::tgamma(mu + 1.0) / std::tgamma(mu + 0.5);
  return pref * std::exp(-2.0 * mu * detail::log_sinh(r)) * legendre_p_integral(mu, sigma, r);
}

// ------------------------------------------------ free resolvent closed forms

namespace detail {

// One term  poly(sigma) * e^{-sigma r} cosh^a r sinh^{-b} r.
struct ResolventTerm {
  std::vector<double> poly;
  int a = 0;
  int b = 0;
};

using ResolventForm = std::vector<ResolventTerm>;

// R_{n+2}(sigma; r) = -(1/(2 pi sinh r)) d/dr R_n(sigma; r)
inline ResolventForm shift_dimension(const ResolventForm& in) {
  std::map<std::pair<int, int>, std::vector<double>> acc;
  auto add = [&](int a, int b, const std::vector<double>& p, double f, bool times_sigma) {
    auto& dst = acc[{a, b}];
    const std::size_t need = p.size() + (times_sigma ? 1 : 0);
    if (dst.size() < need) dst.resize(need, 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) dst[k + (times_sigma ? 1 : 0)] += f * p[k];
  };
  const double c = 1.0 / (2.0 * pi);
  for (const auto& t : in) {
    add(t.a, t.b + 1, t.poly, c, true);
    if (t.a > 0) add(t.a - 1, t.b, t.poly, -c * t.a, false);
    if (t.b > 0) add(t.a + 1, t.b + 2, t.poly, c * t.b, false);
  }
  ResolventForm out;
  for (auto& [key, p] : acc) out.push_back({p, key.first, key.second});
  return out;
}

inline constexpr int max_closed_form_n = 16;

inline const ResolventForm& closed_form(int n) {
  static const std::vector<ResolventForm> table = [] {
    std::vector<ResolventForm> t;
    t.push_back({{{1.0 / (4.0 * pi)}, 0, 1}});  // n = 2
    for (int k = 4; k <= max_closed_form_n; k += 2) t.push_back(shift_dimension(t.back()));
    return t;
  }();
  require(n % 2 == 0 && n >= 2 && n <= max_closed_form_n, ErrorCode::precondition,
          "closed form available for even n <= 16 only");
  return table[n / 2 - 1];
}

inline cplx eval_closed_form(int n, cplx sigma, double r) {
  const ResolventForm& form = closed_form(n);
  const double ls = log_sinh(r);
  const double coth = 1.0 / std::tanh(r);
  cplx sum = 0.0;
  for (const auto& t : form) {
    cplx p = 0.0;
    for (std::size_t k = t.poly.size(); k-- > 0;) p = p * sigma + t.poly[k];
    sum += p * std::pow(coth, t.a) * std::exp(-(t.b - t.a) * ls);
  }
  return sum * std::exp(-sigma * r);
}

// R_n from R_{n+1} (n odd) by the Abel-type descent
//   R_n(r) = sqrt2 int_r^inf R_{n+1}(a) sinh a (cosh a - cosh r)^{-1/2} da,  a = r + v^2.
inline cplx eval_descent(int n, cplx sigma, double r) {
  const double decay = 0.5 * n + sigma.real();
  require(decay > 0.05, ErrorCode::continuation_boundary, "descent integral diverges for Re sigma <= -n/2");
  const double vmax = std::sqrt(42.0 / decay);
  auto f = [&](double v) -> cplx {
    const double v2 = v * v;
    const double a = r + v2;
    // sinh a / sqrt(sinh(r + v^2/2) * sinhc(v^2/2)), log-space for large a
    const double ratio = std::exp(log_sinh(a) - 0.5 * log_sinh(r + 0.5 * v2)) / std::sqrt(sinhc(0.5 * v2));
    return 2.0 * std::sqrt(2.0) * eval_closed_form(n + 1, sigma, a) * ratio;
  };
  std::vector<double> br = chirp_breaks(vmax * vmax, sigma.imag(), 4);
  const double sr = std::sqrt(r);
  for (double s : {0.5 * sr, sr, 2.0 * sr, 4.0 * sr})
    if (s < vmax) br.push_back(s);
  std::sort(br.begin(), br.end());
  br.erase(std::unique(br.begin(), br.end()), br.end());
  quad::AdaptiveOptions opt;
  opt.rel_tol = 1e-13;
  return quad::integrate(f, std::span<const double>(br), opt);
}

}  // namespace detail

/// Free resolvent kernel R_0(n/2 + sigma; r) of (-Delta - s(n-s))^{-1} on
/// H^{n+1}. Closed forms for even n, descent from n+1 for odd n. Callers
/// are responsible for the half-plane (analytic continuation is allowed).
inline cplx free_resolvent(int n, cplx sigma, double r) {
  require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
  require(r > 0.0, ErrorCode::singular_input, "resolvent kernel is singular at r = 0");
  if (n % 2 == 0) return detail::eval_closed_form(n, sigma, r);
  return detail::eval_descent(n, sigma, r);
}

/// Q^mu_nu(cosh r) for mu = (n-1)/2, nu = -1/2 + sigma, Re sigma >= 0.
inline cplx legendre_q(const LegendreOrder& o, double r) {
  const cplx sigma = o.sigma();
  require(sigma.real() >= 0.0, ErrorCode::branch, "legendre_q needs Re sigma >= 0");
  require(r > 0.0, ErrorCode::singular_input, "legendre_q needs r > 0");
  const int n = o.dimension();
  require(std::abs(2.0 * o.mu + 1.0 - n) < 1e-12 && n >= 1, ErrorCode::precondition,
          "legendre_q supports mu = (n-1)/2 only");
  const cplx i(0.0, 1.0);
  return free_resolvent(n, sigma, r) * std::pow(2.0 * pi, 0.5 * (n + 1)) * std::exp(i * pi * o.mu) *
         std::exp(o.mu * detail::log_sinh(r));
}

/// Bessel-form approximations of the uniform asymptotics, arg sigma in [0, pi/2]
/// (conjugation used for the lower half plane).
inline cplx uniform_bessel_p(double mu, cplx sigma, double r) {
  if (sigma.imag() < 0.0) return std::conj(uniform_bessel_p(mu, std::conj(sigma), r));
  return std::pow(sigma, -mu) * std::sqrt(r / std::sinh(r)) * bessel_i(mu, sigma * r);
}

inline cplx uniform_bessel_q(double mu, cplx sigma, double r) {
  if (sigma.imag() < 0.0) return std::conj(uniform_bessel_q(mu, std::conj(sigma), r)) * std::exp(cplx(0, 2.0 * pi * mu));
  const cplx i(0.0, 1.0);
  return std::exp(i * pi * mu) * std::pow(sigma, mu) * std::sqrt(r / std::sinh(r)) * bessel_k(mu, sigma * r);
}

}  // namespace hyperdisp
