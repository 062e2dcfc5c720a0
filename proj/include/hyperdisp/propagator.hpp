#pragma once

// Oscillatory spectral integrals  int e^{i t lambda^2} F(lambda) dlambda  and the
// free Schroedinger propagator on H^{n+1} built from them.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "hyperdisp/errors.hpp"
#include "hyperdisp/free_kernel.hpp"
#include "hyperdisp/parallel.hpp"
#include "hyperdisp/quadrature.hpp"
#include "hyperdisp/radial_grid.hpp"
#include "hyperdisp/specfun.hpp"

namespace hyperdisp {

inline constexpr double infinity = std::numeric_limits<double>::infinity();

/// Smooth cutoff: 1 on (-inf, 1], 0 on [2, inf), C^infinity in between.
inline double smooth_cutoff(double x) {
  if (x <= 1.0) return 1.0;
  if (x >= 2.0) return 0.0;
  const double a = std::exp(-1.0 / (2.0 - x)), b = std::exp(-1.0 / (x - 1.0));
  return a / (a + b);
}

enum class Parity { none, even, odd };

struct OscillatoryIntegrand {
  std::function<cplx(double)> f;
  double a = 0.0;
  double b = infinity;
  Parity parity = Parity::none;
  double osc_scale = 0.0;  // angular frequency content of f; sets panel width and cutoff
};

struct OscillatoryOptions {
  int panel_order = 16;
  double max_panel_width = 0.5;
  double min_cutoff = 20.0;
  double cutoff_per_scale = 20.0;
  int ibp_terms = 6;
  int patch_points = 17;
  double tail_rel_tol = 1e-9;
  double tail_abs_tol = 1e-15;
  int cutoff_retries = 3;
  long max_moment_work = 400'000'000;
};

struct OscillatoryResult {
  cplx value{};
  double tail_estimate = 0.0;
  double cutoff = 0.0;
};

/// Panelled Gauss nodes on [a, b]. Each panel carries a degree order-1
/// interpolant of F; the chirp e^{i t lambda^2} is integrated against the
/// Lagrange basis with enough Gauss points to resolve its phase.
class FilonGrid {
 public:
  FilonGrid(double a, double b, double width, int order) : order_(order) {
    require(b > a && width > 0.0, ErrorCode::precondition, "Filon grid needs b > a and width > 0");
    const auto& g = quad::gauss_rule(order);
    require(g.size() == order, ErrorCode::precondition, "unsupported panel order");
    ref_ = g.x;
    bw_ = quad::barycentric_weights(ref_);
    const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / width)));
    for (int p = 0; p <= panels; ++p) edges_.push_back(a + (b - a) * p / panels);
    edges_.back() = b;
    for (int p = 0; p < panels; ++p) {
      const double c = 0.5 * (edges_[p] + edges_[p + 1]), h = 0.5 * (edges_[p + 1] - edges_[p]);
      for (double x : ref_) nodes_.push_back(c + h * x);
    }
  }

  const std::vector<double>& nodes() const { return nodes_; }
  int panel_count() const { return static_cast<int>(edges_.size()) - 1; }

  /// w_j(t) = int l_j(lambda) e^{i t lambda^2} dlambda for every node.
  std::vector<cplx> weights(double t, long budget = 400'000'000) const {
    std::vector<cplx> w(nodes_.size(), cplx{});
    const auto& sub = quad::gauss_rule(20);
    long work = 0;
    std::vector<double> basis(order_);
    for (int p = 0; p < panel_count(); ++p) {
      const double lo = edges_[p], hi = edges_[p + 1];
      const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
      const double span = std::abs(t) * std::abs(hi * hi - lo * lo);
      const int m = order_ + 16 + static_cast<int>(std::ceil(0.6 * span));
      const int q = (m + 19) / 20;
      work += static_cast<long>(q) * 20 * order_;
      if (work > budget) fail(ErrorCode::resolution, "chirp too fast for the spectral panel budget");
      const cplx base = std::exp(cplx(0.0, t * c * c));
      for (int s = 0; s < q; ++s) {
        const double x0 = -1.0 + 2.0 * s / q, x1 = -1.0 + 2.0 * (s + 1) / q;
        const double xc = 0.5 * (x0 + x1), xh = 0.5 * (x1 - x0);
        for (int i = 0; i < sub.size(); ++i) {
          const double x = xc + xh * sub.x[i];
          const double d = h * x;
          const cplx e = base * std::exp(cplx(0.0, t * d * (2.0 * c + d)));
          quad::lagrange_basis(ref_, bw_, x, basis);
          const cplx we = (sub.w[i] * xh * h) * e;
          for (int j = 0; j < order_; ++j) w[static_cast<std::size_t>(p) * order_ + j] += we * basis[j];
        }
      }
    }
    return w;
  }

 private:
  int order_;
  std::vector<double> ref_, bw_, edges_, nodes_;
};

namespace detail {

struct TailResult {
  cplx value{};
  double last = 0.0;
};

/// Chebyshev patch around the cutoff L used for the tail derivatives.
inline std::vector<double> ibp_patch(double L, double osc, const OscillatoryOptions& opt, double* half_width = nullptr) {
  const double hw = std::min({1.0, 2.0 / std::max(osc, 1e-12), 0.25 * L});
  if (half_width) *half_width = hw;
  int np = opt.patch_points;
  if (np % 2 == 0) ++np;
  return quad::chebyshev_points(np, L - hw, L + hw);
}

/// int_L^inf e^{i t l^2} G dl by repeated integration by parts (Abel sense),
/// from samples of G on the patch. Stops once terms drop below tol or grow.
inline TailResult ibp_tail_from_samples(std::vector<cplx> T, const std::vector<double>& x, double L, double t,
                                        const OscillatoryOptions& opt, double tol) {
  const int np = static_cast<int>(x.size());
  const double lo = x.front(), hi = x.back();
  const int mid = np / 2;
  const cplx phase = std::exp(cplx(0.0, t * L * L));
  const cplx two_it(0.0, 2.0 * t);
  TailResult out;
  cplx scale = 1.0 / two_it;
  double prev = infinity;
  for (int k = 0; k < opt.ibp_terms; ++k) {
    const cplx term = -phase / L * scale * T[mid];
    // size judged over the whole patch, so an accidental zero at L cannot stop the series
    double sup = 0.0;
    for (const auto& v : T) sup = std::max(sup, std::abs(v));
    const double mag = std::abs(scale) / L * sup;
    if (mag > prev) break;  // asymptotic series started to grow
    out.value += term;
    out.last = mag;
    prev = mag;
    if (mag <= tol) break;
    for (int j = 0; j < np; ++j) T[j] /= x[j];
    T = quad::chebyshev_derivative<cplx>(T, lo, hi);
    for (auto& v : T) v = -v;
    scale /= two_it;
  }
  return out;
}

inline TailResult ibp_tail(const std::function<cplx(double)>& g, double L, double t, double osc,
                           const OscillatoryOptions& opt, double tol) {
  const auto x = ibp_patch(L, osc, opt);
  std::vector<cplx> T(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) T[k] = g(x[k]);
  return ibp_tail_from_samples(std::move(T), x, L, t, opt, tol);
}

inline void check_parity(const OscillatoryIntegrand& I) {
  if (I.parity == Parity::none) return;
  const double sign = I.parity == Parity::even ? 1.0 : -1.0;
  for (double x : {0.37, 1.3, 2.9}) {
    const cplx p = I.f(x), m = I.f(-x);
    if (std::abs(p - sign * m) > 1e-10 * (std::abs(p) + std::abs(m)) + 1e-300)
      fail(ErrorCode::precondition, "integrand does not have the declared parity");
  }
}

inline double panel_width(double osc, const OscillatoryOptions& opt) {
  return std::min(opt.max_panel_width, 4.0 / std::max(osc, 1e-12));
}

inline cplx finite_segment(const std::function<cplx(double)>& f, double a, double b, double t, double osc,
                           const OscillatoryOptions& opt) {
  if (b <= a) return 0.0;
  FilonGrid grid(a, b, panel_width(osc, opt), opt.panel_order);
  const auto w = grid.weights(t, opt.max_moment_work);
  cplx s{};
  const auto& x = grid.nodes();
  for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * f(x[j]);
  return s;
}

/// [a, inf): panels up to a cutoff, integration by parts beyond.
inline OscillatoryResult half_line(const std::function<cplx(double)>& f, double a, double t, double osc,
                                   const OscillatoryOptions& opt) {
  double L = std::max({a + 1.0, opt.min_cutoff, opt.cutoff_per_scale * osc / std::max(std::abs(t), 1e-300)});
  for (int attempt = 0; attempt <= opt.cutoff_retries; ++attempt, L *= 1.5) {
    OscillatoryResult res;
    res.cutoff = L;
    res.value = finite_segment(f, a, L, t, osc, opt);
    const double tol = opt.tail_abs_tol + opt.tail_rel_tol * std::abs(res.value);
    if (t == 0.0) {
      res.tail_estimate = std::abs(f(L)) * L;
      if (res.tail_estimate <= tol) return res;
      continue;
    }
    const auto tail = ibp_tail(f, L, t, osc, opt, tol);
    res.value += tail.value;
    res.tail_estimate = tail.last;
    if (tail.last <= tol) return res;
  }
  fail(ErrorCode::tail_budget, "spectral tail did not meet tolerance after enlarging the cutoff");
}

}  // namespace detail

/// int_a^b e^{i t lambda^2} F(lambda) dlambda, infinite ends understood as
/// oscillatory (Abel) limits.
inline OscillatoryResult oscillatory_integral(const OscillatoryIntegrand& I, double t,
                                              const OscillatoryOptions& opt = {}) {
  require(static_cast<bool>(I.f), ErrorCode::precondition, "integrand is empty");
  require(I.b > I.a, ErrorCode::precondition, "integration range must satisfy a < b");
  detail::check_parity(I);
  const bool symmetric = I.a == -I.b;
  if (symmetric && I.parity == Parity::odd) return {};
  const auto& f = I.f;
  if (symmetric && I.parity == Parity::even) {
    OscillatoryResult r = std::isinf(I.b) ? detail::half_line(f, 0.0, t, I.osc_scale, opt)
                                          : OscillatoryResult{detail::finite_segment(f, 0.0, I.b, t, I.osc_scale, opt)};
    r.value *= 2.0;
    r.tail_estimate *= 2.0;
    return r;
  }
  if (!std::isinf(I.a) && !std::isinf(I.b)) return {detail::finite_segment(f, I.a, I.b, t, I.osc_scale, opt)};
  if (std::isinf(I.a) && std::isinf(I.b)) {
    std::function<cplx(double)> folded = [&f](double x) { return f(x) + f(-x); };
    return detail::half_line(folded, 0.0, t, I.osc_scale, opt);
  }
  if (std::isinf(I.b)) return detail::half_line(f, I.a, t, I.osc_scale, opt);
  std::function<cplx(double)> mirrored = [&f](double x) { return f(-x); };
  return detail::half_line(mirrored, -I.b, t, I.osc_scale, opt);
}

struct DecayFit {
  std::vector<double> times;
  std::vector<double> sups;
  double exponent = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // max |log sup - fit|
};

/// Least-squares slope of log sup against log t.
inline DecayFit fit_decay(std::vector<double> times, std::vector<double> sups, int min_samples = 8) {
  require(times.size() == sups.size(), ErrorCode::precondition, "times and sups differ in length");
  if (static_cast<int>(times.size()) < min_samples)
    fail(ErrorCode::ill_conditioned_fit, "too few time samples for a decay fit");
  const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
  require(*lo > 0.0, ErrorCode::precondition, "decay fit needs positive times");
  if (*hi / *lo < 10.0 - 1e-9) fail(ErrorCode::ill_conditioned_fit, "time samples span less than one decade");
  const std::size_t m = times.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    require(sups[i] > 0.0 && std::isfinite(sups[i]), ErrorCode::precondition, "decay fit needs positive sups");
    const double x = std::log(times[i]), y = std::log(sups[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  DecayFit fit;
  fit.exponent = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  fit.intercept = (sy - fit.exponent * sx) / m;
  for (std::size_t i = 0; i < m; ++i)
    fit.residual = std::max(fit.residual, std::abs(std::log(sups[i]) - fit.intercept - fit.exponent * std::log(times[i])));
  fit.times = std::move(times);
  fit.sups = std::move(sups);
  return fit;
}

inline std::vector<double> log_spaced(double t0, double t1, int count) {
  require(count >= 2 && t0 > 0.0 && t1 > t0, ErrorCode::precondition, "bad log-spaced range");
  std::vector<double> t(count);
  for (int i = 0; i < count; ++i) t[i] = t0 * std::pow(t1 / t0, static_cast<double>(i) / (count - 1));
  return t;
}

/// |int e^{i t l^2} l^k hhat(l) dl| over `times`, hhat(l) = int e^{-i l u} h(u) du
/// with h supported (numerically) in [u_lo, u_hi].
inline DecayFit disp_lemma_check(int k, const std::function<double(double)>& h, double u_lo, double u_hi,
                                 std::span<const double> times, double lambda_cut = 13.0) {
  require(k >= 0, ErrorCode::precondition, "power k must be >= 0");
  const double osc = std::max(std::abs(u_lo), std::abs(u_hi));
  OscillatoryOptions opt;
  FilonGrid grid(-lambda_cut, lambda_cut, detail::panel_width(osc, opt), opt.panel_order);
  const auto& x = grid.nodes();
  std::vector<cplx> F(x.size());
  std::vector<double> br;
  const int pieces = std::max(8, static_cast<int>(std::ceil((u_hi - u_lo) * lambda_cut / pi)));
  for (int p = 0; p <= pieces; ++p) br.push_back(u_lo + (u_hi - u_lo) * p / pieces);
  parallel_for(static_cast<long>(x.size()), [&](long j) {
    const double l = x[j];
    const auto re = quad::integrate([&](double u) { return std::cos(l * u) * h(u); }, br);
    const auto im = quad::integrate([&](double u) { return -std::sin(l * u) * h(u); }, br);
    F[j] = std::pow(l, k) * cplx(re, im);
  });
  std::vector<double> sups(times.size());
  parallel_for(static_cast<long>(times.size()), [&](long i) {
    const auto w = grid.weights(times[i]);
    cplx s{};
    for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * F[j];
    sups[i] = std::abs(s);
  });
  return fit_decay(std::vector<double>(times.begin(), times.end()), std::move(sups));
}

/// Default profile: the shifted Gaussian e^{-(u-1)^2}.
inline DecayFit disp_lemma_check(int k, std::span<const double> times) {
  return disp_lemma_check(k, [](double u) { return std::exp(-(u - 1.0) * (u - 1.0)); }, -8.0, 10.0, times);
}

/// Free kernel U(t; r) of e^{-i t Delta} on H^{n+1}:
///   e^{i t n^2/4} int_0^inf e^{i t l^2} (-2 l/pi) Im R_0(n/2 + i l; r) dl.
/// cut > 0 keeps only frequencies l >~ cut via 1 - chi(l/cut).
inline cplx free_propagator_kernel(int n, double t, double r, const OscillatoryOptions& opt = {},
                                   double cut = 0.0) {
  require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
  require(t >= 1.0, ErrorCode::precondition, "free propagator needs t >= 1");
  require(r >= 0.0, ErrorCode::precondition, "radius must be >= 0");
  const double L0 = std::max(opt.min_cutoff, opt.cutoff_per_scale * r / t);
  const double lmax = L0 * std::pow(1.5, opt.cutoff_retries) + 3.0;
  const ImR0Profile prof(n, r, lmax);
  OscillatoryIntegrand I;
  I.a = 0.0;
  I.osc_scale = r;
  I.f = [&](double l) -> cplx {
    double v = -2.0 * l / pi * prof(l);
    if (cut > 0.0) v *= 1.0 - smooth_cutoff(l / cut);
    return v;
  };
  const auto res = oscillatory_integral(I, t, opt);
  return std::exp(cplx(0.0, t * n * n / 4.0)) * res.value;
}

/// Spherical function Phi_l(r) for a batch of radii at fixed n (closed form for n = 2).
class SphericalTable {
 public:
  SphericalTable(int n, std::span<const double> radii, double lambda_max) : n_(n) {
    r_.assign(radii.begin(), radii.end());
    if (n != 2)
      for (double x : r_) prof_.emplace_back(n, x, lambda_max);
  }
  double operator()(std::size_t i, double l) const {
    if (n_ == 2) {
      const double x = r_[i];
      if (x == 0.0) return 1.0;
      if (l == 0.0) return x / std::sinh(x);
      return std::sin(l * x) / (l * std::sinh(x));
    }
    return prof_[i].phi(l);
  }
  std::size_t size() const { return r_.size(); }

 private:
  int n_;
  std::vector<double> r_;
  std::vector<ImR0Profile> prof_;
};

/// Im R_0(n/2 + i l; 0), so that Im R_0(.; r) = kappa * Phi_l(r).
inline double spectral_density(int n, double l) { return 0.5 * a_n(n, l) * legendre_p_origin(n); }

struct ApplyResult {
  std::vector<cplx> values;  // (e^{-i t Delta} g)(r_i) on the grid
  double cutoff = 0.0;       // spectral cutoff used
};

/// e^{-i t Delta} g for radial g sampled on `grid`, via the spherical transform
///   ghat(l) = int Phi_l g dV,   (U g)(r) = e^{i t n^2/4} int_0^inf e^{i t l^2} (-2l/pi) kappa(l) Phi_l(r) ghat(l) dl.
/// The transform must decay inside the band the grid resolves.
inline ApplyResult free_propagator_apply(int n, std::span<const double> g, double t, const RadialGrid& grid,
                                         double rel_floor = 1e-10) {
  require(grid.n == n, ErrorCode::precondition, "grid dimension differs from n");
  require(g.size() == grid.size(), ErrorCode::precondition, "g must be sampled on the grid");
  const double max_panel = [&] {
    double m = 0;
    for (int p = 0; p < grid.panel_count(); ++p) m = std::max(m, grid.edges[p + 1] - grid.edges[p]);
    return m;
  }();
  // Gauss with `order` nodes integrates cos(l r) well while l * width / 2 stays below ~order/2.
  const double band = 0.8 * grid.order / max_panel;
  const SphericalTable phi(n, grid.r, band + 2.0);
  auto ghat = [&](double l) {
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) s += grid.measure(i) * phi(i, l) * g[i];
    return s;
  };
  // cutoff: first l where the transform stays below the floor.
  double gmax = 0.0;
  double L = 0.0;
  const double step = 0.25;
  int quiet = 0;
  for (double l = 0.0; l <= band; l += step) {
    const double v = std::abs(ghat(l)) * std::max(1.0, std::pow(l, n + 1));
    gmax = std::max(gmax, v);
    if (v <= rel_floor * gmax) {
      if (++quiet == 8) {
        L = l;
        break;
      }
    } else {
      quiet = 0;
    }
  }
  if (L == 0.0) fail(ErrorCode::resolution, "spherical transform of g does not decay inside the grid band");
  OscillatoryOptions opt;
  FilonGrid fg(0.0, L, detail::panel_width(grid.r_max, opt), opt.panel_order);
  const auto& x = fg.nodes();
  std::vector<double> G(x.size());
  parallel_for(static_cast<long>(x.size()), [&](long j) { G[j] = -2.0 * x[j] / pi * spectral_density(n, x[j]) * ghat(x[j]); });
  const auto w = fg.weights(t);
  const cplx phase = std::exp(cplx(0.0, t * n * n / 4.0));
  ApplyResult out;
  out.cutoff = L;
  out.values.resize(grid.size());
  parallel_for(static_cast<long>(grid.size()), [&](long i) {
    cplx s{};
    for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * (G[j] * phi(i, x[j]));
    out.values[i] = phase * s;
  });
  return out;
}

/// Grid L^2 norm of complex samples.
inline double grid_l2_norm(const RadialGrid& grid, std::span<const cplx> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) s += grid.measure(i) * std::norm(v[i]);
  return std::sqrt(s);
}

/// (e^{-i t Delta} g)(0) through the Abel transform h of g:
///   c_t int_R e^{i t l^2} l a_n(l) hhat(l) dl,  hhat(l) = 2 int_0^inf cos(l u) h(u) du,
///   c_t = -e^{i t n^2/4} sqrt(2/pi) / (4 pi Gamma(mu + 1/2)).
inline cplx free_propagator_origin(int n, const std::function<double(double)>& g, double t, double r_max,
                                   double lambda_cut = 14.0, int u_nodes = 400) {
  require(t >= 1.0, ErrorCode::precondition, "free propagator needs t >= 1");
  const double mu = 0.5 * (n - 1);
  std::vector<double> u(u_nodes), wu(u_nodes);
  const auto& gr = quad::gauss_rule(20);
  const int panels = u_nodes / 20;
  for (int p = 0; p < panels; ++p) {
    const double a = r_max * p / panels, b = r_max * (p + 1) / panels;
    for (int i = 0; i < 20; ++i) {
      u[p * 20 + i] = 0.5 * (a + b) + 0.5 * (b - a) * gr.x[i];
      wu[p * 20 + i] = 0.5 * (b - a) * gr.w[i];
    }
  }
  const auto H = h_transform(n, g, u, r_max);
  OscillatoryOptions opt;
  FilonGrid fg(0.0, lambda_cut, detail::panel_width(r_max, opt), opt.panel_order);
  const auto& x = fg.nodes();
  std::vector<double> F(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    double hh = 0.0;
    for (int i = 0; i < u_nodes; ++i) hh += wu[i] * std::cos(x[j] * u[i]) * H.h[i];
    F[j] = x[j] * a_n(n, x[j]) * 2.0 * hh;
  }
  const auto w = fg.weights(t);
  cplx s{};
  for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * F[j];
  const cplx c = -std::exp(cplx(0.0, t * n * n / 4.0)) * std::sqrt(2.0 / pi) / (4.0 * pi * std::tgamma(mu + 0.5));
  return c * 2.0 * s;  // integrand is even in l
}

}  // namespace hyperdisp
