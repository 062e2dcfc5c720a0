#pragma once

// Desk-scale acceptance checks, shared by the acceptance test binary and `hyperdisp selftest`.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hyperdisp/matrix_system.hpp"
#include "hyperdisp/perturbed.hpp"
#include "hyperdisp/propagator.hpp"
#include "hyperdisp/radial_operator.hpp"

namespace hyperdisp::selftest {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;

  std::string line() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, " (%.1f s)", seconds);
    return std::string(passed ? "[PASS] " : "[FAIL] ") + "criterion " + std::to_string(id) + ": " + title + ": " +
           detail + buf;
  }
};

namespace detail {

inline std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

inline cplx h3_closed_form(double t, double r) {
  const cplx pre = std::pow(cplx(0.0, -4.0 * pi * t), -1.5);
  const double geo = r == 0.0 ? 1.0 : r / std::sinh(r);
  return pre * geo * std::exp(cplx(0.0, -r * r / (4.0 * t))) * std::exp(cplx(0.0, t));
}

inline double sup_free_kernel(int n, double t) {
  double s = 0.0;
  for (double r : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) s = std::max(s, std::abs(free_propagator_kernel(n, t, r)));
  return s;
}

}  // namespace detail

inline CriterionResult c1_h3_oracle() {
  CriterionResult res{1, "free kernel vs H^3 closed form"};
  double worst = 0.0;
  for (double t : {1.0, 2.0, 5.0, 10.0})
    for (double r : {0.1, 1.0, 5.0, 10.0}) {
      const cplx exact = detail::h3_closed_form(t, r);
      worst = std::max(worst, std::abs(free_propagator_kernel(2, t, r) - exact) / std::abs(exact));
    }
  res.passed = worst < 1e-6;
  res.detail = detail::fmt("max relative error %.2e (need < 1e-6)", worst);
  return res;
}

inline CriterionResult c2_free_decay() {
  CriterionResult res{2, "free sup-kernel decay exponent on [1, 100], n = 1, 2, 3"};
  const auto ts = log_spaced(1.0, 100.0, 12);
  res.passed = true;
  std::ostringstream os;
  for (int n : {1, 2, 3}) {
    std::vector<double> sups;
    for (double t : ts) sups.push_back(detail::sup_free_kernel(n, t));
    const double e = fit_decay(ts, sups).exponent;
    const bool ok = std::abs(e + 1.5) <= 0.05;
    res.passed = res.passed && ok;
    os << "n=" << n << ": " << detail::fmt("%.3f", e) << (ok ? "" : " (outside -1.5 +- 0.05)") << "; ";
  }
  res.detail = os.str();
  res.detail.resize(res.detail.size() - 2);
  return res;
}

inline CriterionResult c3_disp_lemma() {
  CriterionResult res{3, "oscillatory lemma exponents, Gaussian h"};
  const auto ts = log_spaced(1.0, 100.0, 12);
  double e[4];
  for (int k = 0; k < 4; ++k) e[k] = disp_lemma_check(k, ts).exponent;
  res.passed = std::abs(e[0] + 0.5) <= 0.05 && std::abs(e[1] + 1.5) <= 0.05 && e[2] <= -1.45 && e[3] <= -2.4;
  std::ostringstream os;
  os << "k=0: " << detail::fmt("%.3f", e[0]) << ", k=1: " << detail::fmt("%.3f", e[1])
     << ", k=2: " << detail::fmt("%.3f", e[2]) << ", k=3: " << detail::fmt("%.3f", e[3]);
  res.detail = os.str();
  return res;
}

inline CriterionResult c4_connection_and_asymptotics() {
  CriterionResult res{4, "connection formula, Im R_0 relation, uniform asymptotics"};
  const cplx I(0.0, 1.0);
  double conn = 0.0, imr = 0.0;
  for (int n : {1, 2, 3}) {
    const double mu = 0.5 * (n - 1);
    for (double lam : {0.5, 1.0, 1.5, 2.0, 5.0})
      for (double r : {0.1, 0.7, 1.0, 3.0}) {
        const LegendreOrder o = LegendreOrder::from(n, cplx(0, lam)), om = LegendreOrder::from(n, cplx(0, -lam));
        const cplx lhs = legendre_q(om, r) - legendre_q(o, r);
        const cplx rhs = std::exp(I * pi * mu) * std::cos(pi * o.nu) *
                         std::exp(lgamma_complex(mu + o.nu + 1.0) + lgamma_complex(mu - o.nu)) * legendre_p(o, r);
        conn = std::max(conn, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
        const cplx diff = r0_kernel(SpectralPoint::critical(n, lam), r) - r0_kernel(SpectralPoint::critical(n, -lam), r);
        const cplx rep = spectral_coefficient(n, lam) * std::pow(std::sinh(r), -mu) * legendre_p(o, r);
        imr = std::max(imr, std::abs(diff - rep));
      }
  }
  // |error| |sigma| against the Bessel envelope, on a grid and its extension to larger |sigma|
  bool stable = true;
  double cworst = 0.0;
  for (int n : {1, 2, 3}) {
    const double mu = 0.5 * (n - 1);
    double coarse = 0.0, fine = 0.0;
    for (double r : {0.1, 1.0, 5.0})
      for (double s : {5.0, 10.0, 20.0, 40.0})
        for (cplx sigma : {cplx(s, 0.0), cplx(0.0, s)}) {
          const LegendreOrder o = LegendreOrder::from(n, sigma);
          const cplx z = sigma * r;
          const double env = std::max(std::abs(bessel_i(mu, z)), std::exp(z.real()) / std::sqrt(2.0 * pi * std::abs(z)));
          const double scale = std::pow(s, -mu) * std::sqrt(r / std::sinh(r)) * env;
          const double ep = std::abs(legendre_p(o, r) - uniform_bessel_p(mu, sigma, r)) / scale * s;
          const cplx q = legendre_q(o, r);
          const double eq = std::abs(q - uniform_bessel_q(mu, sigma, r)) / std::abs(q) * s;
          if (s <= 20.0) coarse = std::max(coarse, std::max(ep, eq));
          fine = std::max(fine, std::max(ep, eq));
        }
    stable = stable && fine < 1.5 * coarse + 1e-6;
    cworst = std::max(cworst, fine);
  }
  res.passed = conn < 1e-9 && imr < 1e-9 && stable;
  res.detail = detail::fmt("connection %.1e, ", conn) + detail::fmt("Im R_0 %.1e (need < 1e-9), ", imr) +
               detail::fmt("asymptotic |err||sigma| <= %.3f", cworst) + (stable ? " grid-stable" : " NOT grid-stable");
  return res;
}

inline CriterionResult c5_weighted_resolvent() {
  CriterionResult res{5, "max lambda ||rho^.5 R_0 rho^.5|| over [1, 50], grid doubling, n = 2"};
  const double r_max = 15.0;
  double m1 = 0.0, m2 = 0.0, arg = 0.0;
  for (double lambda : log_spaced(1.0, 50.0, 12)) {
    // ~15 nodes per wavelength at the coarse level
    const int nodes = 10 * static_cast<int>(std::ceil(std::max(40.0, 0.3 * lambda * r_max)));
    const auto g = RadialGrid::make(2, r_max, nodes);
    const auto gf = RadialGrid::make(2, r_max, 2 * nodes, 10, 8);
    const cplx sigma(0.0, lambda);
    const double a = lambda * weighted_norm(discretize(resolvent_kernel(2, sigma), g), WeightProfile::make(g, 0.5));
    const double b = lambda * weighted_norm(discretize(resolvent_kernel(2, sigma), gf), WeightProfile::make(gf, 0.5));
    if (a > m1) {
      m1 = a;
      arg = lambda;
    }
    m2 = std::max(m2, b);
  }
  const double change = std::abs(m2 - m1) / m1;
  res.passed = change < 0.05;
  res.detail = detail::fmt("max %.6f", m1) + detail::fmt(" at lambda = %.2f, ", arg) +
               detail::fmt("doubled grid %.6f, ", m2) + detail::fmt("change %.2e (need < 5%%)", change);
  return res;
}

inline CriterionResult c6_birman_schwinger() {
  CriterionResult res{6, "Birman-Schwinger series + remainder vs direct solve, m = 2"};
  const auto V = PotentialSpec::exponential(0.3, 2.0);
  double worst = 0.0;
  for (double l : {1.0, 3.0, 10.0}) {
    const auto g = perturbation_grid(2, V, l);
    const SpectralPoint pt = SpectralPoint::critical(2, l);
    const auto bs = bs_expand(V, pt, 2, g);
    const auto rv = rv_solve(V, pt, g);
    worst = std::max(worst, folded_norm(bs.sum() - rv.matrix, rv.measure()));
  }
  res.passed = worst < 1e-8;
  res.detail = detail::fmt("max operator-norm difference %.2e (need < 1e-8)", worst);
  return res;
}

inline CriterionResult c7_resonance_scan() {
  CriterionResult res{7, "critical-line determinant and attractive bound state"};
  const auto V = PotentialSpec::exponential(0.3, 2.0);
  const auto scan = critical_line_scan(V, 2, 0.05, 20.0, 80, perturbation_grid(2, V, 20.0));
  const auto g = RadialGrid::make(2, 25.0, 400);
  const auto A = calibrate_attractive_potential(2, 2.0, 0.5, g);
  const auto zeros = real_axis_zeros(A, 2, g);
  const auto s_fd = fd_bound_state(A, 2);
  double ds = infinity;
  if (zeros.size() == 1 && s_fd) ds = std::abs(1.0 + zeros[0] - *s_fd);
  res.passed = scan.min_modulus > 0.1 && ds < 1e-4;
  res.detail = detail::fmt("min |det| %.4f (need > 0.1); ", scan.min_modulus) +
               detail::fmt("bound state |s_det - s_fd| = %.2e (need < 1e-4)", ds);
  return res;
}

inline CriterionResult c8_perturbed_decay() {
  CriterionResult res{8, "perturbed sup-kernel decay, V = 0.3 e^{-2r}, n = 2"};
  const PerturbedPropagator P(PotentialSpec::exponential(0.3, 2.0), 2, {0.0, 0.5, 1.0, 2.0});
  const auto ts = log_spaced(1.0, 100.0, 12);
  std::vector<double> sup(ts.size(), 0.0), hi(ts.size(), 0.0);
  for (std::size_t i = 0; i < ts.size(); ++i)
    for (std::size_t k = 0; k < P.radii().size(); ++k) {
      const auto s = P(ts[i], k);
      sup[i] = std::max(sup[i], std::abs(s.total));
      hi[i] = std::max(hi[i], std::abs(s.high));
    }
  const double e = fit_decay(ts, sup).exponent, eh = fit_decay(ts, hi).exponent;
  res.passed = std::abs(e + 1.5) <= 0.1 && eh <= -3.0;
  res.detail = detail::fmt("exponent %.3f (need -1.5 +- 0.1), ", e) + detail::fmt("high-frequency %.3f (need <= -3)", eh) +
               detail::fmt(", min |det| on the table %.3f", P.min_det_modulus());
  return res;
}

inline CriterionResult c9_bound_state() {
  CriterionResult res{9, "ground state n = 2, mu = 2, p = 1"};
  const auto s = bound_state_solve(2, 2.0, 1.0);
  const double peak = *std::max_element(s.psi.begin(), s.psi.end());
  const double resid = bound_state_residual(s, 0.0, 15.0) / peak;
  const double target = 1.0 + std::sqrt(2.0);
  const double rel = std::abs(s.decay_rate - target) / target;
  res.passed = resid < 1e-6 && rel < 0.02;
  res.detail = detail::fmt("Psi(0) = %.10f, ", s.psi0) + detail::fmt("residual / max Psi %.2e, ", resid) +
               detail::fmt("decay rate %.5f ", s.decay_rate) + detail::fmt("(rel. error %.2e, need < 2%%)", rel);
  return res;
}

inline CriterionResult c10_matrix_decay() {
  CriterionResult res{10, "matrix propagator decay, cubic linearization, amplitude 0.2"};
  const auto V = linearize(bound_state_solve(2, 2.0, 2.0), 0.2);
  const RadialGrid g = perturbation_grid(2, PotentialSpec::exponential(V.v0, V.alpha), 13.0);
  const auto up = matrix_det_scan(V, V.mu + 0.05, V.mu + 25.0, 25, g);
  const auto lo = matrix_det_scan(V, -V.mu - 25.0, -V.mu - 0.05, 25, g);
  const double dmin = std::min(up.min_modulus, lo.min_modulus);
  const bool clean = dmin > 0.1;
  MatrixPropagatorOptions o;
  o.grid = g;
  const MatrixPropagator U(V, {0.0, 0.5, 1.0, 2.0}, o);
  const auto ts = log_spaced(1.0, 100.0, 12);
  std::vector<double> sup;
  for (double t : ts) {
    double s = 0.0;
    for (std::size_t k = 0; k < U.radii().size(); ++k) s = std::max(s, U(t, k).total.cwiseAbs().maxCoeff());
    sup.push_back(s);
  }
  const double e = fit_decay(ts, sup).exponent;
  res.passed = clean && std::abs(e + 1.5) <= 0.15;
  res.detail = detail::fmt("exponent %.3f (need -1.5 +- 0.15); ", e) +
               detail::fmt("determinant scan on both branches: min |det| %.4f", dmin) + (clean ? " (clean)" : " (NOT clean)");
  return res;
}

inline CriterionResult c11_young() {
  CriterionResult res{11, "Young composition bound, 100 random pairs per exponent triple"};
  std::mt19937_64 rng(20260101);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double triples[3][2] = {{1.0, 1.0}, {4.0 / 3.0, 4.0 / 3.0}, {2.0, 1.0}};
  const double expect_p[3] = {1.0, 2.0, 2.0};
  const int N = 40;
  int violations = 0;
  double worst = -infinity;
  for (int k = 0; k < 3; ++k)
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd mu(N);
      CMatrix A(N, N), B(N, N);
      for (int i = 0; i < N; ++i) mu[i] = 0.05 + U(rng);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          A(i, j) = cplx(std::pow(U(rng), 3), U(rng) - 0.5);
          B(i, j) = cplx(std::pow(U(rng), 3), U(rng) - 0.5);
        }
      const auto c = young_compose_check(A, B, mu, triples[k][0], triples[k][1]);
      if (std::abs(c.p - expect_p[k]) > 1e-12 || !(c.lhs <= c.rhs * (1.0 + 1e-10))) ++violations;
      worst = std::max(worst, c.lhs / c.rhs);
    }
  res.passed = violations == 0;
  res.detail = std::to_string(violations) + " violations in 300 pairs, max lhs/rhs " + detail::fmt("%.4f", worst);
  return res;
}

inline const std::vector<std::function<CriterionResult()>>& criteria() {
  static const std::vector<std::function<CriterionResult()>> all = {
      c1_h3_oracle,   c2_free_decay,      c3_disp_lemma,   c4_connection_and_asymptotics, c5_weighted_resolvent,
      c6_birman_schwinger, c7_resonance_scan, c8_perturbed_decay, c9_bound_state, c10_matrix_decay, c11_young};
  return all;
}

/// Runs one criterion, timing it; errors count as failures with the message as detail.
inline CriterionResult run_criterion(int id) {
  require(id >= 1 && id <= static_cast<int>(criteria().size()), ErrorCode::precondition, "criterion id out of range");
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r;
  try {
    r = criteria()[static_cast<std::size_t>(id - 1)]();
  } catch (const std::exception& e) {
    r.id = id;
    r.title = "error";
    r.passed = false;
    r.detail = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace hyperdisp::selftest
