#pragma once

// Perturbed resolvent R_V = R_0 (1 + V R_0)^{-1} on the radial sector, the
// Birman-Schwinger expansion, Fredholm-determinant scans, the perturbed
// spectral measure and the perturbed propagator kernel.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperdisp/errors.hpp"
#include "hyperdisp/free_kernel.hpp"
#include "hyperdisp/parallel.hpp"
#include "hyperdisp/propagator.hpp"
#include "hyperdisp/quadrature.hpp"
#include "hyperdisp/radial_grid.hpp"
#include "hyperdisp/radial_operator.hpp"
#include "hyperdisp/specfun.hpp"

namespace hyperdisp {

/// Radial potential with a certified bound |V(r)| <= v0 e^{-alpha r}.
struct PotentialSpec {
  std::function<double(double)> profile;
  double alpha = 2.0;
  double v0 = 0.0;
  bool real_flag = true;

  static PotentialSpec exponential(double amplitude, double alpha) {
    require(alpha > 0.0, ErrorCode::precondition, "decay exponent must be > 0");
    PotentialSpec V;
    V.profile = [amplitude, alpha](double r) { return amplitude * std::exp(-alpha * r); };
    V.alpha = alpha;
    V.v0 = std::abs(amplitude);
    return V;
  }
  static PotentialSpec zero(double alpha = 2.0) { return exponential(0.0, alpha); }

  /// Piecewise-linear table of (r, V) samples; zero beyond the last sample.
  /// The bound v0 is the smallest one that holds on the samples.
  static PotentialSpec table(std::vector<double> r, std::vector<double> v, double alpha) {
    require(r.size() >= 2 && r.size() == v.size(), ErrorCode::precondition, "potential table needs >= 2 matching samples");
    require(std::is_sorted(r.begin(), r.end()) && r.front() >= 0.0, ErrorCode::precondition,
            "potential table radii must be sorted and >= 0");
    require(alpha > 0.0, ErrorCode::precondition, "decay exponent must be > 0");
    PotentialSpec V;
    V.alpha = alpha;
    for (std::size_t i = 0; i < r.size(); ++i) V.v0 = std::max(V.v0, std::abs(v[i]) * std::exp(alpha * r[i]));
    V.profile = [r = std::move(r), v = std::move(v)](double x) {
      if (x <= r.front()) return v.front();
      if (x >= r.back()) return 0.0;
      const auto it = std::upper_bound(r.begin(), r.end(), x);
      const std::size_t j = static_cast<std::size_t>(it - r.begin());
      const double s = (x - r[j - 1]) / (r[j] - r[j - 1]);
      return (1.0 - s) * v[j - 1] + s * v[j];
    };
    return V;
  }

  double operator()(double r) const { return profile ? profile(r) : 0.0; }
  bool is_zero() const { return v0 == 0.0; }

  /// |V(r_i)| <= v0 e^{-alpha r_i} on every node.
  bool certified_on(const RadialGrid& g) const {
    for (double x : g.r)
      if (std::abs((*this)(x)) > v0 * std::exp(-alpha * x) * (1.0 + 1e-12) + 1e-300) return false;
    return true;
  }

  /// alpha/n > 1 - 1/floor((n+5)/4).
  bool alpha_condition(int n) const { return alpha / n > 1.0 - 1.0 / std::floor((n + 5) / 4.0); }
};

/// Smallest m > (n+1)/4 with alpha > n(m-1)/m.
inline int choose_bs_order(int n, double alpha) {
  require(n >= 1 && alpha > 0.0, ErrorCode::precondition, "need n >= 1 and alpha > 0");
  const int m = static_cast<int>(std::floor((n + 1) / 4.0)) + 1;
  if (!(alpha > n * (m - 1.0) / m))
    fail(ErrorCode::precondition, "decay exponent too small: need alpha/n > 1 - 1/floor((n+5)/4) (alpha = " +
                                      std::to_string(alpha) + ", n = " + std::to_string(n) + ")");
  return m;
}

inline void check_bs_order(int n, double alpha, int m) {
  require(m >= 1, ErrorCode::precondition, "expansion order m must be >= 1");
  require(m > (n + 1) / 4.0, ErrorCode::precondition, "expansion order needs m > (n+1)/4");
  require(alpha > n * (m - 1.0) / m, ErrorCode::precondition, "expansion order needs alpha > n(m-1)/m");
}

/// Grid suited to V: long enough for the potential to die out, panels fine
/// enough for resolvent oscillations up to lambda_max.
inline RadialGrid perturbation_grid(int n, const PotentialSpec& V, double lambda_max = 10.0, double r_max = 0.0) {
  if (r_max <= 0.0) r_max = std::clamp(36.0 / V.alpha + 2.0, 10.0, 30.0);
  const double width = std::min(0.6, 8.0 / std::max(lambda_max, 1.0));
  const int refine = 6, order = 10;
  const int panels = static_cast<int>(std::ceil(r_max / width)) + refine;
  return RadialGrid::make(n, r_max, panels * order, order, refine);
}

namespace detail {

/// Product-quadrature weights W_j(x): int kbar(x, w) f(w) dV(w) ~ sum_j W_j f_j,
/// exact on the panel that holds the kink at w = x.
inline std::vector<cplx> row_weights(const RadialKernel& k, const RadialGrid& g, double x) {
  std::vector<cplx> W(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) W[j] = k(x, g.r[j]) * g.measure(j);
  if (x <= 0.0 || x >= g.r_max) return W;
  const int p = g.panel_of(x);
  const auto [i0, i1] = g.panel_range(p);
  std::vector<double> nodes(g.r.begin() + static_cast<long>(i0), g.r.begin() + static_cast<long>(i1));
  const auto bw = quad::barycentric_weights(nodes);
  for (std::size_t j = i0; j < i1; ++j) W[j] = 0.0;
  const auto& gr = quad::gauss_rule(20);
  const double area = sphere_area(g.n);
  std::vector<double> l(nodes.size());
  for (auto [a, b] : {std::pair{g.edges[p], x}, std::pair{x, g.edges[p + 1]}}) {
    if (b <= a) continue;
    for (int q = 0; q < gr.size(); ++q) {
      const double y = 0.5 * (a + b) + 0.5 * (b - a) * gr.x[q];
      const cplx c = 0.5 * (b - a) * gr.w[q] * area * std::pow(std::sinh(y), g.n) * k(x, y);
      quad::lagrange_basis(nodes, bw, y, l);
      for (std::size_t j = 0; j < nodes.size(); ++j) W[i0 + j] += c * l[j];
    }
  }
  return W;
}

inline Eigen::VectorXd potential_values(const PotentialSpec& V, const RadialGrid& g) {
  Eigen::VectorXd v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) v[i] = V(g.r[i]);
  return v;
}

inline Eigen::VectorXd conjugation_weights(const PotentialSpec& V, const RadialGrid& g) {
  Eigen::VectorXd w(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) w[i] = std::exp(-0.5 * V.alpha * g.r[i]);
  return w;
}

inline void check_continuation(const PotentialSpec& V, int n, cplx sigma, double margin) {
  if (V.is_zero()) {
    require(sigma.real() >= 0.0 || n % 2 == 1, ErrorCode::continuation_boundary,
            "free resolvent continues below Re sigma = 0 only for odd n");
    return;
  }
  if (sigma.real() <= -0.5 * V.alpha + margin)
    fail(ErrorCode::continuation_boundary, "Re sigma must exceed -alpha/2 + margin for the weighted continuation");
}

/// LU of rho^{-alpha/2}(1 + R_0 V)rho^{alpha/2}; same determinant as 1 + V R_0.
struct BSSystem {
  RadialKernel kernel;
  RadialKernelOp r0;
  Eigen::VectorXd v, w;
  Eigen::PartialPivLU<CMatrix> lu;
  cplx det{1.0};

  BSSystem(const PotentialSpec& V, int n, cplx sigma, const RadialGrid& g, bool factor = true) {
    kernel = resolvent_kernel(n, sigma);
    r0 = discretize(kernel, g);
    v = potential_values(V, g);
    w = conjugation_weights(V, g);
    if (!factor) return;
    lu.compute(weighted());
    det = lu.determinant();
  }

  /// rho^{-alpha/2} (I + M D_V) rho^{alpha/2}
  CMatrix weighted() const {
    const long N = r0.matrix.rows();
    CMatrix A = w.cwiseInverse().asDiagonal() * r0.matrix * v.asDiagonal() * w.asDiagonal();
    A += CMatrix::Identity(N, N);
    return A;
  }

  /// (I + M D_V)^{-1} b through the conjugated factorization.
  CVector solve(const CVector& b) const {
    const CVector y = lu.solve((w.cwiseInverse().cast<cplx>().asDiagonal() * b).eval());
    return w.cast<cplx>().asDiagonal() * y;
  }
};

inline void require_nonresonant(cplx det) {
  if (!(std::abs(det) >= 1e-10)) fail(ErrorCode::near_resonance, "Fredholm determinant below 1e-10: near a resonance");
}

}  // namespace detail

/// det(1 + rho^{-alpha/2} V R_0(n/2 + sigma) rho^{alpha/2}) on `grid`.
inline cplx fredholm_determinant(const PotentialSpec& V, int n, cplx sigma, const RadialGrid& grid, double margin = 0.05) {
  detail::check_continuation(V, n, sigma, margin);
  if (V.is_zero()) return 1.0;
  return detail::BSSystem(V, n, sigma, grid).det;
}

/// Discretized R_V(n/2 + sigma) on radial functions.
inline RadialKernelOp rv_solve(const PotentialSpec& V, const SpectralPoint& pt, const RadialGrid& grid) {
  detail::check_continuation(V, pt.n, pt.sigma, 0.05);
  detail::BSSystem sys(V, pt.n, pt.sigma, grid);
  detail::require_nonresonant(sys.det);
  RadialKernelOp op = sys.r0;
  if (V.is_zero()) return op;
  const long N = op.matrix.rows();
  for (long j = 0; j < N; ++j) op.matrix.col(j) = sys.solve(sys.r0.matrix.col(j));
  op.kernel = op.matrix;
  for (long j = 0; j < N; ++j) op.kernel.col(j) /= grid.measure(static_cast<std::size_t>(j));
  return op;
}

/// (Kf)(x) for a kernel sampled through product quadrature at an arbitrary x.
inline cplx nystrom_eval(const RadialKernel& k, const RadialGrid& grid, const CVector& f, double x) {
  const auto W = detail::row_weights(k, grid, x);
  cplx s{};
  for (std::size_t j = 0; j < W.size(); ++j) s += W[j] * f[static_cast<long>(j)];
  return s;
}

/// (R_V phi)(x) at arbitrary points, from phi sampled on the grid.
class RVApplication {
 public:
  RVApplication(const PotentialSpec& V, const SpectralPoint& pt, const RadialGrid& grid, const CVector& phi)
      : grid_(grid), kernel_(resolvent_kernel(pt.n, pt.sigma)) {
    const RadialKernelOp rv = rv_solve(V, pt, grid);
    const CVector psi = rv.apply(phi);
    const Eigen::VectorXd v = detail::potential_values(V, grid);
    src_ = phi - v.cast<cplx>().cwiseProduct(psi);
    nodes_ = psi;
  }
  cplx operator()(double x) const { return nystrom_eval(kernel_, grid_, src_, x); }
  const CVector& nodes() const { return nodes_; }

 private:
  RadialGrid grid_;
  RadialKernel kernel_;
  CVector src_, nodes_;
};

struct BSExpansion {
  int m = 1;
  std::vector<CMatrix> terms;  // R_0 [-V R_0]^l, l = 0..2m-1, quadrature-folded
  CMatrix remainder;           // [R_0 V]^m R_V [V R_0]^m
  Eigen::VectorXd measure;

  CMatrix sum() const {
    CMatrix s = remainder;
    for (const auto& t : terms) s += t;
    return s;
  }
  /// Kernel values of term l (weights unfolded).
  CMatrix term_kernel(int l) const {
    CMatrix k = terms.at(static_cast<std::size_t>(l));
    for (long j = 0; j < k.cols(); ++j) k.col(j) /= measure[j];
    return k;
  }
};

inline BSExpansion bs_expand(const PotentialSpec& V, const SpectralPoint& pt, int m, const RadialGrid& grid) {
  check_bs_order(pt.n, V.alpha, m);
  const RadialKernelOp rv = rv_solve(V, pt, grid);
  const detail::BSSystem sys(V, pt.n, pt.sigma, grid, false);
  const CMatrix& M = sys.r0.matrix;
  const CMatrix VM = sys.v.cast<cplx>().asDiagonal() * M;  // V R_0
  BSExpansion out;
  out.m = m;
  out.measure = rv.measure();
  CMatrix cur = M;
  for (int l = 0; l < 2 * m; ++l) {
    out.terms.push_back(cur);
    cur = (-cur * VM).eval();
  }
  CMatrix left = CMatrix::Identity(M.rows(), M.cols()), right = left;
  const CMatrix MV = M * sys.v.cast<cplx>().asDiagonal();
  for (int k = 0; k < m; ++k) {
    left = (left * MV).eval();
    right = (right * VM).eval();
  }
  out.remainder = left * rv.matrix * right;
  return out;
}

/// Operator norm on L^2(dV) of a quadrature-folded matrix.
inline double folded_norm(const CMatrix& A, const Eigen::VectorXd& measure) {
  const Eigen::VectorXd s = measure.cwiseSqrt();
  return largest_singular_value(s.asDiagonal() * A * s.cwiseInverse().asDiagonal());
}

struct ScanRegion {
  double re_lo = 0.0, re_hi = 0.0, im_lo = 0.05, im_hi = 20.0;
};

struct ResonanceZero {
  cplx sigma{};
  int multiplicity = 0;
  double det_modulus = 0.0;
};

struct ResonanceScan {
  ScanRegion region;
  std::vector<cplx> sigma;
  std::vector<cplx> det;
  std::vector<ResonanceZero> zeros;
  double min_modulus = infinity;
  cplx argmin{};
};

struct ScanOptions {
  double margin = 0.05;
  double dip_tol = 0.1;        // lattice points below this are refined
  double zero_tol = 1e-8;      // |det| at an accepted zero
  int muller_iterations = 60;
};

namespace detail {

/// Winding number of f around the circle |z - c| = rad.
inline int winding_number(const std::function<cplx(cplx)>& f, cplx c, double rad) {
  for (int pts = 32; pts <= 1024; pts *= 2) {
    double total = 0.0;
    bool smooth = true;
    cplx prev = f(c + rad);
    for (int k = 1; k <= pts; ++k) {
      const cplx cur = f(c + rad * std::exp(cplx(0.0, 2.0 * pi * k / pts)));
      const double d = std::arg(cur / prev);
      if (std::abs(d) > 1.0) smooth = false;
      total += d;
      prev = cur;
    }
    if (smooth) return static_cast<int>(std::lround(total / (2.0 * pi)));
  }
  fail(ErrorCode::nonconvergence, "winding number did not stabilize");
}

/// Muller iteration from three nearby points.
inline std::optional<cplx> muller(const std::function<cplx(cplx)>& f, cplx z0, double h, int iters, double tol) {
  cplx x0 = z0 - h, x1 = z0 + h, x2 = z0;
  cplx f0 = f(x0), f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < iters; ++it) {
    const cplx h1 = x1 - x0, h2 = x2 - x1;
    const cplx d1 = (f1 - f0) / h1, d2 = (f2 - f1) / h2;
    const cplx a = (d2 - d1) / (h2 + h1);
    const cplx b = a * h2 + d2;
    const cplx disc = std::sqrt(b * b - 4.0 * f2 * a);
    const cplx den = std::abs(b + disc) > std::abs(b - disc) ? b + disc : b - disc;
    if (den == cplx{}) return std::nullopt;
    const cplx dx = -2.0 * f2 / den;
    x0 = x1;
    f0 = f1;
    x1 = x2;
    f1 = f2;
    x2 += dx;
    if (!std::isfinite(x2.real()) || !std::isfinite(x2.imag())) return std::nullopt;
    f2 = f(x2);
    if (std::abs(dx) < 1e-13 * std::max(1.0, std::abs(x2)) || std::abs(f2) < 1e-3 * tol) return x2;
  }
  return std::abs(f2) < tol ? std::optional<cplx>(x2) : std::nullopt;
}

}  // namespace detail

/// Samples the Fredholm determinant on an nx-by-ny lattice of `region` and
/// refines dips into zeros, confirmed by a winding number >= 1.
inline ResonanceScan fredholm_det_scan(const PotentialSpec& V, int n, const ScanRegion& region, int nx, int ny,
                                       const RadialGrid& grid, const ScanOptions& opt = {}) {
  require(nx >= 1 && ny >= 2, ErrorCode::precondition, "scan needs nx >= 1, ny >= 2");
  require(region.re_hi >= region.re_lo && region.im_hi > region.im_lo, ErrorCode::precondition, "empty scan region");
  detail::check_continuation(V, n, cplx(region.re_lo, region.im_lo), opt.margin);
  ResonanceScan out;
  out.region = region;
  const int cols = region.re_hi > region.re_lo ? nx : 1;
  for (int a = 0; a < cols; ++a)
    for (int b = 0; b < ny; ++b) {
      const double re = cols == 1 ? region.re_lo : region.re_lo + (region.re_hi - region.re_lo) * a / (cols - 1);
      const double im = region.im_lo + (region.im_hi - region.im_lo) * b / (ny - 1);
      out.sigma.emplace_back(re, im);
    }
  out.det.resize(out.sigma.size());
  parallel_for(static_cast<long>(out.sigma.size()),
               [&](long i) { out.det[i] = fredholm_determinant(V, n, out.sigma[i], grid, opt.margin); });
  for (std::size_t i = 0; i < out.det.size(); ++i)
    if (std::abs(out.det[i]) < out.min_modulus) {
      out.min_modulus = std::abs(out.det[i]);
      out.argmin = out.sigma[i];
    }
  if (V.is_zero()) return out;

  const auto f = [&](cplx s) { return fredholm_determinant(V, n, s, grid, opt.margin); };
  const double h = 0.5 * (region.im_hi - region.im_lo) / (ny - 1);
  auto at = [&](int a, int b) { return std::abs(out.det[static_cast<std::size_t>(a) * ny + b]); };
  for (int a = 0; a < cols; ++a)
    for (int b = 0; b < ny; ++b) {
      const double v = at(a, b);
      bool local_min = true;
      for (auto [da, db] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int aa = a + da, bb = b + db;
        if (aa >= 0 && aa < cols && bb >= 0 && bb < ny && at(aa, bb) < v) local_min = false;
      }
      if (!(local_min && v < opt.dip_tol)) continue;
      const cplx start = out.sigma[static_cast<std::size_t>(a) * ny + b];
      const auto z = detail::muller(f, start, 0.25 * h, opt.muller_iterations, opt.zero_tol);
      if (!z) continue;
      const bool inside = z->real() >= region.re_lo - h && z->real() <= region.re_hi + h &&
                          z->imag() >= region.im_lo - h && z->imag() <= region.im_hi + h;
      const double mod = std::abs(f(*z));
      if (!inside || mod > opt.zero_tol) continue;
      bool dup = false;
      for (const auto& zz : out.zeros) dup = dup || std::abs(zz.sigma - *z) < 1e-6;
      if (dup) continue;
      double rad = 0.5 * h;
      if (z->real() - rad <= -0.5 * V.alpha + opt.margin) rad = 0.5 * (z->real() + 0.5 * V.alpha - opt.margin);
      const int w = detail::winding_number(f, *z, rad);
      if (w >= 1) out.zeros.push_back({*z, w, mod});
    }
  return out;
}

/// The critical line Re sigma = 0, lambda in [lo, hi].
inline ResonanceScan critical_line_scan(const PotentialSpec& V, int n, double lo, double hi, int samples,
                                        const RadialGrid& grid, const ScanOptions& opt = {}) {
  return fredholm_det_scan(V, n, ScanRegion{0.0, 0.0, lo, hi}, 1, samples, grid, opt);
}

/// Real zeros sigma in (0, n/2] of the determinant: discrete eigenvalues
/// s(n - s) below n^2/4 with s = n/2 + sigma.
inline std::vector<double> real_axis_zeros(const PotentialSpec& V, int n, const RadialGrid& grid, int samples = 40) {
  std::vector<double> out;
  if (V.is_zero()) return out;
  auto f = [&](double s) { return fredholm_determinant(V, n, cplx(s, 0.0), grid).real(); };
  std::vector<double> x(static_cast<std::size_t>(samples)), y(x.size());
  for (int k = 0; k < samples; ++k) x[k] = 0.5 * n * (k + 1.0) / samples;
  parallel_for(samples, [&](long k) { y[k] = f(x[k]); });
  for (int k = 0; k + 1 < samples; ++k) {
    if (y[k] == 0.0) {
      out.push_back(x[k]);
      continue;
    }
    if ((y[k] < 0.0) == (y[k + 1] < 0.0)) continue;
    boost::uintmax_t it = 100;
    const auto r = boost::math::tools::toms748_solve(f, x[k], x[k + 1], y[k], y[k + 1],
                                                     boost::math::tools::eps_tolerance<double>(50), it);
    out.push_back(0.5 * (r.first + r.second));
  }
  return out;
}

/// Attractive -v e^{-alpha r} with v set by bisection so that the determinant
/// vanishes at the real point sigma_target (a bound state at s = n/2 + sigma_target).
inline PotentialSpec calibrate_attractive_potential(int n, double alpha, double sigma_target, const RadialGrid& grid) {
  require(sigma_target > 0.0 && sigma_target < 0.5 * n, ErrorCode::precondition, "target must lie in (0, n/2)");
  auto det_at = [&](double v) {
    return fredholm_determinant(PotentialSpec::exponential(-v, alpha), n, cplx(sigma_target, 0.0), grid).real();
  };
  double lo = 0.0, hi = 1.0;
  for (int k = 0; det_at(hi) > 0.0; ++k) {
    if (k > 40) fail(ErrorCode::nonconvergence, "no bound state for any tested coupling");
    lo = hi;
    hi *= 2.0;
  }
  for (int k = 0; k < 200 && hi - lo > 1e-14 * hi; ++k) {
    const double mid = 0.5 * (lo + hi);
    (det_at(mid) > 0.0 ? lo : hi) = mid;
  }
  return PotentialSpec::exponential(-0.5 * (lo + hi), alpha);
}

/// Smallest lambda >= 0 past which ||rho^{-alpha/2} V R_0 rho^{alpha/2}|| <= 1/2:
/// doubling from 1 up to lambda_hi, then bisection (the norm decays like 1/lambda).
inline double resolvent_threshold(const PotentialSpec& V, int n, const RadialGrid& grid, double lambda_hi = 40.0) {
  if (V.is_zero()) return 0.0;
  const Eigen::VectorXd v = detail::potential_values(V, grid), w = detail::conjugation_weights(V, grid);
  Eigen::VectorXd mu(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) mu[i] = grid.measure(i);
  auto norm = [&](double l) {
    const RadialKernelOp r0 = discretize(resolvent_kernel(n, cplx(0.0, l)), grid);
    const Eigen::VectorXd vw = v.cwiseQuotient(w);
    const CMatrix A = vw.asDiagonal() * r0.matrix * w.asDiagonal();
    return folded_norm(A, mu);
  };
  if (norm(0.0) <= 0.5) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (norm(hi) > 0.5) {
    if (hi >= lambda_hi) fail(ErrorCode::nonconvergence, "weighted V R_0 norm still above 1/2 at lambda_hi");
    lo = hi;
    hi = std::min(2.0 * hi, lambda_hi);
  }
  while (hi - lo > 1e-3 * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    (norm(mid) > 0.5 ? lo : hi) = mid;
  }
  return hi;
}

// ---------------------------------------------------------------------------
// Finite-difference radial operator: w = sinh^{n/2}(r) psi turns -Delta + V into
// -w'' + q w, q = n^2/4 + n(n-2)/(4 sinh^2 r) + V, Dirichlet at 0 and R.

struct FDOperator {
  double h = 0.0;
  std::vector<double> r, diag;  // off-diagonal is -1/h^2

  static FDOperator make(const PotentialSpec& V, int n, double wall, double h) {
    require(wall > 0.0 && h > 0.0 && wall / h >= 10.0, ErrorCode::precondition, "FD grid needs wall/h >= 10");
    FDOperator op;
    op.h = h;
    const long N = static_cast<long>(std::floor(wall / h)) - 1;
    for (long i = 1; i <= N; ++i) {
      const double x = i * h, s = std::sinh(x);
      op.r.push_back(x);
      op.diag.push_back(2.0 / (h * h) + 0.25 * n * n + 0.25 * n * (n - 2) / (s * s) + V(x));
    }
    return op;
  }

  std::size_t size() const { return r.size(); }

  /// Eigenvalues below x (Sturm count).
  long count_below(double x) const {
    const double off2 = 1.0 / (h * h * h * h);
    long c = 0;
    double d = diag[0] - x;
    if (d < 0.0) ++c;
    for (std::size_t i = 1; i < diag.size(); ++i) {
      if (d == 0.0) d = 1e-300;
      d = diag[i] - x - off2 / d;
      if (d < 0.0) ++c;
    }
    return c;
  }

  /// k-th eigenvalue (0-based) by bisection.
  double eigenvalue(long k) const {
    double lo = *std::min_element(diag.begin(), diag.end()) - 4.0 / (h * h);
    double hi = *std::max_element(diag.begin(), diag.end()) + 4.0 / (h * h);
    for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (count_below(mid) > k ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
  }

  /// Normalized eigenvector for eigenvalue e by inverse iteration.
  std::vector<double> eigenvector(double e) const {
    const std::size_t N = size();
    const double off = -1.0 / (h * h);
    std::vector<double> x(N, 1.0), c(N), d(N);
    const double shift = e + 1e-10 * std::max(1.0, std::abs(e));
    for (int it = 0; it < 4; ++it) {
      // Thomas algorithm on (T - shift) y = x
      c[0] = off / (diag[0] - shift);
      d[0] = x[0] / (diag[0] - shift);
      for (std::size_t i = 1; i < N; ++i) {
        const double m = diag[i] - shift - off * c[i - 1];
        c[i] = off / m;
        d[i] = (x[i] - off * d[i - 1]) / m;
      }
      x[N - 1] = d[N - 1];
      for (std::size_t i = N - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
      double s = 0.0;
      for (double v : x) s += v * v;
      s = std::sqrt(s * h);
      for (double& v : x) v /= s;
    }
    return x;
  }
};

/// Lowest eigenvalue of the FD operator below n^2/4, Richardson-extrapolated in h,
/// returned as s = n/2 + sqrt(n^2/4 - E). Empty if none.
inline std::optional<double> fd_bound_state(const PotentialSpec& V, int n, double wall = 40.0, double h = 0.01) {
  auto lowest = [&](double hh) -> std::optional<double> {
    const FDOperator op = FDOperator::make(V, n, wall, hh);
    if (op.count_below(0.25 * n * n) == 0) return std::nullopt;
    return op.eigenvalue(0);
  };
  const auto e1 = lowest(h), e2 = lowest(0.5 * h);
  if (!e1 || !e2) return std::nullopt;
  const double e = (4.0 * *e2 - *e1) / 3.0;
  if (e >= 0.25 * n * n) return std::nullopt;
  return 0.5 * n + std::sqrt(0.25 * n * n - e);
}

struct EmbeddedCandidate {
  double energy = 0.0, lambda = 0.0;
  double outer_fraction = 0.0;  // L^2 mass beyond half the wall
  double envelope_ratio = 0.0;  // max |w| on the last quarter / global max
  bool normalizable = false;
};

struct EmbeddedReport {
  std::vector<EmbeddedCandidate> candidates;
  std::vector<EmbeddedCandidate> accepted;
  bool empty() const { return accepted.empty(); }
};

struct EmbeddedOptions {
  double wall = 30.0;
  double h = 0.02;
  double fraction_tol = 1e-3;
};

/// Discretized -Delta + V on [0, wall] has box modes throughout the continuum;
/// a true eigenfunction would decay, so only candidates with negligible mass
/// in the outer half are accepted.
inline EmbeddedReport embedded_eigenvalue_scan(const PotentialSpec& V, int n, double lambda_lo, double lambda_hi,
                                               const EmbeddedOptions& opt = {}) {
  require(lambda_hi > lambda_lo && lambda_lo >= 0.0, ErrorCode::precondition, "need 0 <= lambda_lo < lambda_hi");
  const FDOperator op = FDOperator::make(V, n, opt.wall, opt.h);
  const double elo = 0.25 * n * n + lambda_lo * lambda_lo, ehi = 0.25 * n * n + lambda_hi * lambda_hi;
  const long k0 = op.count_below(elo), k1 = op.count_below(ehi);
  EmbeddedReport rep;
  rep.candidates.resize(static_cast<std::size_t>(std::max(0L, k1 - k0)));
  parallel_for(k1 - k0, [&](long k) {
    EmbeddedCandidate c;
    c.energy = op.eigenvalue(k0 + k);
    c.lambda = std::sqrt(std::max(0.0, c.energy - 0.25 * n * n));
    const auto x = op.eigenvector(c.energy);
    double outer = 0.0, peak = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (op.r[i] > 0.5 * opt.wall) outer += x[i] * x[i] * op.h;
      peak = std::max(peak, std::abs(x[i]));
      if (op.r[i] > 0.75 * opt.wall) tail = std::max(tail, std::abs(x[i]));
    }
    c.outer_fraction = outer;
    c.envelope_ratio = peak > 0.0 ? tail / peak : 0.0;
    c.normalizable = outer < opt.fraction_tol;
    rep.candidates[static_cast<std::size_t>(k)] = c;
  });
  for (const auto& c : rep.candidates)
    if (c.normalizable) rep.accepted.push_back(c);
  return rep;
}

// ---------------------------------------------------------------------------
// Perturbed spectral measure. R_V(., 0) = R_0(., 0) + u with
//   u = -(1 + R_0 V)^{-1} R_0 V R_0(., 0),
// so only the smooth correction u goes through the Nystrom solve.

namespace detail {

/// u(lambda; x) for every x in `radii`.
inline std::vector<cplx> origin_correction(const PotentialSpec& V, int n, cplx sigma, const RadialGrid& g,
                                           std::span<const double> radii, cplx* det_out = nullptr) {
  std::vector<cplx> out(radii.size(), cplx{});
  if (V.is_zero()) {
    if (det_out) *det_out = 1.0;
    return out;
  }
  const BSSystem sys(V, n, sigma, g);
  if (det_out) *det_out = sys.det;
  require_nonresonant(sys.det);
  const long N = static_cast<long>(g.size());
  CVector f(N), r0col(N);
  for (long j = 0; j < N; ++j) {
    r0col[j] = sys.kernel.outer(g.r[static_cast<std::size_t>(j)]);
    f[j] = sys.v[j] * r0col[j];
  }
  const CVector u = -sys.solve(sys.r0.matrix * f);
  const CVector src = sys.v.cast<cplx>().cwiseProduct(r0col + u);
  for (std::size_t k = 0; k < radii.size(); ++k) out[k] = -nystrom_eval(sys.kernel, g, src, radii[k]);
  return out;
}

}  // namespace detail

/// Im R_V(n/2 + i lambda; 0, r).
inline double im_rv_kernel(const PotentialSpec& V, int n, double lambda, double r, const RadialGrid& grid) {
  require(lambda > 0.0, ErrorCode::precondition, "im_rv_kernel needs lambda > 0");
  require(r >= 0.0, ErrorCode::precondition, "radius must be >= 0");
  const double x[1] = {r};
  const auto u = detail::origin_correction(V, n, cplx(0.0, lambda), grid, x);
  return im_r0_critical(n, lambda, r) + u[0].imag();
}

/// Density of the absolutely continuous measure at the origin: -(2 lambda/pi) Im R_V(lambda; 0, 0).
inline double perturbed_spectral_density(const PotentialSpec& V, int n, double lambda, const RadialGrid& grid) {
  return -2.0 * lambda / pi * im_rv_kernel(V, n, lambda, 0.0, grid);
}

struct PerturbedOptions {
  double lambda_max = 16.0;  // Filon range for the perturbation; beyond it integration by parts
  double chi_scale = 1.0;    // chi(lambda / chi_scale) splits low and high frequencies
  double tail_tol = 1e-10;
  OscillatoryOptions osc{};
  std::optional<RadialGrid> grid;  // default: perturbation_grid for lambda_max
};

struct PerturbedSample {
  cplx total{};
  cplx high{};  // (1 - chi) part
  double tail_estimate = 0.0;
};

/// Kernel of e^{it(-Delta+V)} P_c at (0, r) for a fixed set of radii. The
/// correction Im u(lambda; r) is tabulated once on Filon nodes (parallel in
/// lambda) and reused for every t; the free part keeps its exact profile.
class PerturbedPropagator {
 public:
  PerturbedPropagator(PotentialSpec V, int n, std::vector<double> radii, PerturbedOptions opt = {})
      : V_(std::move(V)), n_(n), radii_(std::move(radii)), opt_(opt) {
    require(!radii_.empty(), ErrorCode::precondition, "need at least one radius");
    for (double r : radii_) require(r >= 0.0, ErrorCode::precondition, "radius must be >= 0");
    osc_ = std::max(1.0, *std::max_element(radii_.begin(), radii_.end()));
    const double L = opt_.lambda_max;
    double hw = 0.0;
    patch_ = detail::ibp_patch(L, osc_, opt_.osc, &hw);
    grid_ = opt_.grid ? *opt_.grid : perturbation_grid(n_, V_, L + hw);
    filon_.emplace(0.0, L, detail::panel_width(osc_, opt_.osc), opt_.osc.panel_order);
    std::vector<double> lam = filon_->nodes();
    lam.insert(lam.end(), patch_.begin(), patch_.end());
    lambdas_ = lam;
    table_.assign(lam.size(), std::vector<double>(radii_.size(), 0.0));
    dets_.assign(lam.size(), cplx{1.0});
    if (!V_.is_zero()) {
      parallel_for(static_cast<long>(lam.size()), [&](long j) {
        const auto u = detail::origin_correction(V_, n_, cplx(0.0, lam[j]), grid_, radii_, &dets_[j]);
        for (std::size_t k = 0; k < radii_.size(); ++k) table_[j][k] = u[k].imag();
      });
    }
    fit_growth();
  }

  const std::vector<double>& radii() const { return radii_; }
  const RadialGrid& grid() const { return grid_; }
  /// Fitted growth exponent M of sup_r (|Im R_V| + |d/dl Im R_V|) in <lambda>.
  double growth_exponent() const { return growth_; }
  /// Integrations by parts used for the tail: N = M + 2, at least 6.
  int ibp_terms() const { return ibp_terms_; }
  double min_det_modulus() const {
    double m = infinity;
    for (auto d : dets_) m = std::min(m, std::abs(d));
    return m;
  }

  /// Im R_V(lambda; 0, radii[k]) on the Filon nodes.
  double im_rv(std::size_t j, std::size_t k) const {
    return im_r0_critical(n_, lambdas_[j], radii_[k]) + table_[j][k];
  }
  const std::vector<double>& lambdas() const { return lambdas_; }

  PerturbedSample operator()(double t, std::size_t k) const {
    require(t >= 1.0, ErrorCode::precondition, "perturbed propagator needs t >= 1");
    require(k < radii_.size(), ErrorCode::precondition, "radius index out of range");
    const double r = radii_[k];
    PerturbedSample s;
    const cplx ph = std::exp(cplx(0.0, t * n_ * n_ / 4.0));
    s.total = free_propagator_kernel(n_, t, r, opt_.osc);
    s.high = free_propagator_kernel(n_, t, r, opt_.osc, opt_.chi_scale);
    if (V_.is_zero()) return s;
    const auto w = filon_->weights(t);
    cplx tot{}, hi{};
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double l = lambdas_[j];
      const double g = -2.0 * l / pi * table_[j][k];
      tot += w[j] * g;
      hi += w[j] * g * (1.0 - smooth_cutoff(l / opt_.chi_scale));
    }
    std::vector<cplx> T(patch_.size());
    const std::size_t off = w.size();
    for (std::size_t j = 0; j < patch_.size(); ++j) T[j] = -2.0 * patch_[j] / pi * table_[off + j][k];
    OscillatoryOptions o = opt_.osc;
    o.ibp_terms = ibp_terms_;
    const double tol = opt_.tail_tol;
    const auto tail = detail::ibp_tail_from_samples(std::move(T), patch_, opt_.lambda_max, t, o, tol);
    if (tail.last > std::max(tol, 1e-6 * std::abs(tot)))
      fail(ErrorCode::tail_budget, "integrated-by-parts remainder exceeds tolerance");
    s.tail_estimate = tail.last;
    // chi vanishes beyond 2 chi_scale, so the tail belongs to both parts
    s.total += ph * (tot + tail.value);
    s.high += ph * (hi + tail.value);
    return s;
  }

 private:
  void fit_growth() {
    // finite differences with step 1e-3 on the per-panel interpolant of the table
    const auto& nodes = filon_->nodes();
    const int ord = opt_.osc.panel_order;
    std::vector<double> ls, sup;
    std::vector<double> ref(nodes.begin(), nodes.begin() + ord);
    for (int p = 0; p < filon_->panel_count(); ++p) {
      std::vector<double> x(nodes.begin() + p * ord, nodes.begin() + (p + 1) * ord);
      const auto bw = quad::barycentric_weights(x);
      const double l = x[ord / 2];
      if (l < 1.0) continue;
      double m = 0.0;
      for (std::size_t k = 0; k < radii_.size(); ++k) {
        std::vector<double> y(ord);
        for (int i = 0; i < ord; ++i) y[i] = im_rv(static_cast<std::size_t>(p * ord + i), k);
        const double d = (quad::barycentric_eval<double>(x, bw, y, l + 1e-3) -
                          quad::barycentric_eval<double>(x, bw, y, l - 1e-3)) / 2e-3;
        m = std::max(m, std::abs(y[ord / 2]) + std::abs(d));
      }
      ls.push_back(std::sqrt(1.0 + l * l));
      sup.push_back(std::max(m, 1e-300));
    }
    if (ls.size() >= 2) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < ls.size(); ++i) {
        mx += std::log(ls[i]);
        my += std::log(sup[i]);
      }
      mx /= ls.size();
      my /= ls.size();
      double sxy = 0, sxx = 0;
      for (std::size_t i = 0; i < ls.size(); ++i) {
        sxy += (std::log(ls[i]) - mx) * (std::log(sup[i]) - my);
        sxx += (std::log(ls[i]) - mx) * (std::log(ls[i]) - mx);
      }
      growth_ = std::max(0.0, sxy / sxx);
    }
    ibp_terms_ = std::max(static_cast<int>(std::ceil(growth_)) + 2, 6);
  }

  PotentialSpec V_;
  int n_;
  std::vector<double> radii_;
  PerturbedOptions opt_;
  double osc_ = 1.0;
  RadialGrid grid_;
  std::optional<FilonGrid> filon_;
  std::vector<double> patch_, lambdas_;
  std::vector<std::vector<double>> table_;
  std::vector<cplx> dets_;
  double growth_ = 0.0;
  int ibp_terms_ = 6;
};

/// Single kernel value; builds a one-radius table.
inline cplx perturbed_propagator(const PotentialSpec& V, int n, double t, double r, const PerturbedOptions& opt = {}) {
  require(t >= 1.0, ErrorCode::precondition, "perturbed propagator needs t >= 1");
  return PerturbedPropagator(V, n, {r}, opt)(t, 0).total;
}

}  // namespace hyperdisp
