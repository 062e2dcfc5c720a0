#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "fd_oracle.hpp"
#include "hyperdisp/perturbed.hpp"

using namespace hyperdisp;

namespace {

PotentialSpec repulsive() { return PotentialSpec::exponential(0.3, 2.0); }

// Smooth at the origin, so the fourth-order FD oracle keeps its order there.
PotentialSpec smooth_bump() {
  PotentialSpec V;
  V.profile = [](double r) { return 0.3 / std::cosh(2.0 * r); };
  V.alpha = 2.0;
  V.v0 = 0.6;
  return V;
}

}  // namespace

TEST(Potential, ExponentialIsCertified) {
  const auto V = repulsive();
  EXPECT_TRUE(V.certified_on(RadialGrid::make(2)));
  EXPECT_DOUBLE_EQ(V(1.0), 0.3 * std::exp(-2.0));
  PotentialSpec bad = V;
  bad.v0 = 0.1;
  EXPECT_FALSE(bad.certified_on(RadialGrid::make(2)));
}

TEST(Potential, TableInterpolatesAndBounds) {
  const auto V = PotentialSpec::table({0.0, 1.0, 2.0}, {1.0, 0.5, 0.0}, 1.0);
  EXPECT_DOUBLE_EQ(V(0.5), 0.75);
  EXPECT_DOUBLE_EQ(V(3.0), 0.0);
  EXPECT_NEAR(V.v0, 0.5 * std::exp(1.0), 1e-14);
  EXPECT_TRUE(V.certified_on(RadialGrid::make(2, 5.0, 100)));
  EXPECT_THROW(PotentialSpec::table({1.0, 0.0}, {1.0, 1.0}, 1.0), Error);
}

TEST(Potential, AlphaConditionAndOrder) {
  EXPECT_TRUE(PotentialSpec::exponential(1.0, 0.1).alpha_condition(2));
  EXPECT_FALSE(PotentialSpec::exponential(1.0, 1.4).alpha_condition(3));
  EXPECT_TRUE(PotentialSpec::exponential(1.0, 1.6).alpha_condition(3));
  EXPECT_EQ(choose_bs_order(2, 2.0), 1);
  EXPECT_EQ(choose_bs_order(3, 2.0), 2);
  EXPECT_EQ(choose_bs_order(7, 6.0), 3);
  EXPECT_THROW(choose_bs_order(3, 1.0), Error);
  // the two conditions agree with the closed-form threshold
  for (int n = 1; n <= 8; ++n)
    for (double a : {0.3, 1.0, 1.7, 2.5, 4.0, 6.5}) {
      const bool ok = PotentialSpec::exponential(1.0, a).alpha_condition(n);
      bool chosen = true;
      try {
        choose_bs_order(n, a);
      } catch (const Error&) {
        chosen = false;
      }
      EXPECT_EQ(ok, chosen) << "n=" << n << " alpha=" << a;
    }
}

TEST(RvSolve, ZeroPotentialIsFreeResolvent) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  const SpectralPoint pt{2, cplx(0.0, 2.0)};
  const auto rv = rv_solve(PotentialSpec::zero(), pt, g);
  const auto r0 = discretize(resolvent_kernel(2, pt.sigma), g);
  EXPECT_EQ((rv.matrix - r0.matrix).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RvSolve, ResolventIdentity) {
  const auto V = repulsive();
  const auto g = RadialGrid::make(2, 25.0, 400);
  for (cplx sigma : {cplx(1.0, 0.0), cplx(0.0, 3.0), cplx(-0.4, 1.0)}) {
    const SpectralPoint pt{2, sigma};
    const auto rv = rv_solve(V, pt, g);
    const auto r0 = discretize(resolvent_kernel(2, sigma), g);
    const Eigen::VectorXd v = detail::potential_values(V, g);
    const CMatrix res = r0.matrix - rv.matrix - rv.matrix * v.cast<cplx>().asDiagonal() * r0.matrix;
    EXPECT_LT(folded_norm(res, rv.measure()) / folded_norm(r0.matrix, rv.measure()), 1e-9) << sigma;
  }
}

TEST(RvSolve, InvertsTheHelmholtzOperator) {
  const auto V = repulsive();
  const auto g = RadialGrid::make(2, 25.0, 400);
  const SpectralPoint pt{2, cplx(1.0, 0.0)};  // s = 2
  CVector phi(static_cast<long>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) phi[static_cast<long>(i)] = std::exp(-g.r[i] * g.r[i]);
  const RVApplication psi(V, pt, g, phi);
  const double h = 1e-2;
  for (double x : {0.3, 0.5, 1.0, 2.0, 3.0}) {
    const cplx p0 = psi(x), p1 = psi(x + h), m1 = psi(x - h), p2 = psi(x + 2 * h), m2 = psi(x - 2 * h);
    const cplx d2 = (-p2 + 16.0 * p1 - 30.0 * p0 + 16.0 * m1 - m2) / (12.0 * h * h);
    const cplx d1 = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    const cplx lhs = -(d2 + 2.0 / std::tanh(x) * d1) + (V(x) - pt.energy()) * p0;
    EXPECT_LT(std::abs(lhs - std::exp(-x * x)), 1e-4) << x;
  }
}

TEST(RvSolve, ConjugationSymmetry) {
  const auto V = repulsive();
  const auto g = RadialGrid::make(2, 20.0, 300);
  for (double l : {0.5, 4.0}) {
    const auto plus = rv_solve(V, {2, cplx(0.0, l)}, g);
    const auto minus = rv_solve(V, {2, cplx(0.0, -l)}, g);
    EXPECT_LT((plus.kernel - minus.kernel.conjugate()).cwiseAbs().maxCoeff(), 1e-12 * plus.kernel.cwiseAbs().maxCoeff());
  }
}

TEST(RvSolve, Errors) {
  const auto g = RadialGrid::make(2, 25.0, 400);
  const auto A = calibrate_attractive_potential(2, 2.0, 0.5, g);
  EXPECT_THROW(
      {
        try {
          rv_solve(A, {2, cplx(0.5, 0.0)}, g);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::near_resonance);
          throw;
        }
      },
      Error);
  EXPECT_THROW(
      {
        try {
          rv_solve(repulsive(), {2, cplx(-1.0, 0.5)}, g);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::continuation_boundary);
          throw;
        }
      },
      Error);
}

TEST(BSExpand, ZeroPotential) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  const SpectralPoint pt{2, cplx(0.0, 1.5)};
  const auto bs = bs_expand(PotentialSpec::zero(), pt, 2, g);
  ASSERT_EQ(bs.terms.size(), 4u);
  for (std::size_t l = 1; l < bs.terms.size(); ++l) EXPECT_EQ(bs.terms[l].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(bs.remainder.cwiseAbs().maxCoeff(), 0.0);
  const auto r0 = discretize(resolvent_kernel(2, pt.sigma), g);
  EXPECT_EQ((bs.sum() - r0.matrix).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BSExpand, SeriesPlusRemainderIsRV) {
  const auto V = repulsive();
  for (double l : {1.0, 3.0, 10.0}) {
    const auto g = perturbation_grid(2, V, l);
    const SpectralPoint pt = SpectralPoint::critical(2, l);
    const auto bs = bs_expand(V, pt, 2, g);
    const auto rv = rv_solve(V, pt, g);
    EXPECT_LT(folded_norm(bs.sum() - rv.matrix, rv.measure()), 1e-8) << l;
    // dropping the remainder breaks the identity, so the check is not vacuous
    EXPECT_GT(folded_norm(bs.sum() - bs.remainder - rv.matrix, rv.measure()), 1e3 * folded_norm(bs.sum() - rv.matrix, rv.measure()));
  }
}

TEST(BSExpand, FirstTermGrowth) {
  // sup |kernel of R_0 V R_0| / <lambda>^{n-1} stays bounded (n = 2)
  const auto V = repulsive();
  std::vector<double> ratio;
  for (double l : {2.0, 5.0, 10.0}) {
    const auto g = perturbation_grid(2, V, l);
    const auto bs = bs_expand(V, SpectralPoint::critical(2, l), 1, g);
    const CMatrix k = bs.term_kernel(1);
    double sup = 0.0;
    for (long i = 0; i < k.rows(); ++i)
      for (long j = 0; j < k.cols(); ++j)
        if (g.r[static_cast<std::size_t>(i)] >= 0.5 && g.r[static_cast<std::size_t>(j)] >= 0.5)
          sup = std::max(sup, std::abs(k(i, j)));
    ratio.push_back(sup / std::sqrt(1.0 + l * l));
  }
  EXPECT_LE(ratio[1], 1.5 * ratio[0]);
  EXPECT_LE(ratio[2], 1.5 * ratio[0]);
}

TEST(BSExpand, RejectsOrderOutsideConstraints) {
  const auto g = RadialGrid::make(4, 15.0, 200);
  EXPECT_THROW(bs_expand(PotentialSpec::exponential(0.3, 3.0), SpectralPoint::critical(4, 1.0), 1, g), Error);
  EXPECT_THROW(bs_expand(PotentialSpec::exponential(0.3, 1.5), SpectralPoint::critical(4, 1.0), 2, g), Error);
}

TEST(Fredholm, ZeroPotential) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  const auto scan = fredholm_det_scan(PotentialSpec::zero(), 2, ScanRegion{0.0, 0.5, 0.1, 3.0}, 3, 5, g);
  for (auto d : scan.det) EXPECT_EQ(d, cplx(1.0));
  EXPECT_TRUE(scan.zeros.empty());
}

TEST(Fredholm, NoCriticalLineZerosForSmallV) {
  for (double v0 : {0.1, 0.3}) {
    const auto V = PotentialSpec::exponential(v0, 2.0);
    const auto g = perturbation_grid(2, V, 20.0);
    const auto scan = critical_line_scan(V, 2, 0.05, 20.0, 80, g);
    EXPECT_GT(scan.min_modulus, 0.1) << v0;
    EXPECT_TRUE(scan.zeros.empty());
  }
}

TEST(Fredholm, ConjugateSymmetric) {
  const auto V = repulsive();
  const auto g = RadialGrid::make(2, 20.0, 300);
  const cplx s(0.2, 1.3);
  const cplx a = fredholm_determinant(V, 2, s, g), b = fredholm_determinant(V, 2, std::conj(s), g);
  EXPECT_LT(std::abs(a - std::conj(b)), 1e-12);
}

TEST(Fredholm, BoundStateMatchesDiscreteEigenvalue) {
  const auto g = RadialGrid::make(2, 25.0, 400);
  const auto A = calibrate_attractive_potential(2, 2.0, 0.5, g);
  const auto zeros = real_axis_zeros(A, 2, g);
  ASSERT_EQ(zeros.size(), 1u);
  const auto s_fd = fd_bound_state(A, 2);
  ASSERT_TRUE(s_fd.has_value());
  EXPECT_NEAR(1.0 + zeros[0], *s_fd, 1e-4);
  // the same zero from the two-dimensional scan, with winding number one
  const auto scan = fredholm_det_scan(A, 2, ScanRegion{-0.5, 0.9, 0.0, 2.0}, 8, 11, g);
  ASSERT_EQ(scan.zeros.size(), 1u);
  EXPECT_NEAR(scan.zeros[0].sigma.real(), zeros[0], 1e-8);
  EXPECT_NEAR(scan.zeros[0].sigma.imag(), 0.0, 1e-8);
  EXPECT_EQ(scan.zeros[0].multiplicity, 1);
}

TEST(Fredholm, ContinuationBoundary) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  EXPECT_THROW(fredholm_det_scan(repulsive(), 2, ScanRegion{-0.96, 0.0, 0.1, 1.0}, 2, 3, g), Error);
  EXPECT_NO_THROW(fredholm_determinant(repulsive(), 2, cplx(-0.9, 0.5), g));
}

TEST(Fredholm, ResolventThreshold) {
  const auto strong = PotentialSpec::exponential(6.0, 2.0);
  const auto g = perturbation_grid(2, strong, 24.0);
  EXPECT_EQ(resolvent_threshold(repulsive(), 2, g), 0.0);
  const double M = resolvent_threshold(strong, 2, g);
  EXPECT_GT(M, 0.0);
  // lambda |rho^{a/2} R_V rho^{a/2}| stays bounded past M
  const auto w = WeightProfile::make(g, 1.0);
  std::vector<double> vals;
  for (double l : {M + 1.0, 2.0 * M + 2.0, 4.0 * M + 4.0}) vals.push_back(l * weighted_norm(rv_solve(strong, SpectralPoint::critical(2, l), g), w));
  EXPECT_LT(*std::max_element(vals.begin(), vals.end()), 2.0 * vals.front());
}

TEST(Embedded, FreeAndRepulsiveAreEmpty) {
  EXPECT_TRUE(embedded_eigenvalue_scan(PotentialSpec::zero(), 2, 0.2, 5.0).empty());
  const auto rep = embedded_eigenvalue_scan(PotentialSpec::exponential(0.5, 2.0), 2, 0.2, 5.0);
  EXPECT_TRUE(rep.empty());
}

TEST(Embedded, HardWallModesAreRejected) {
  // the box has modes across the continuum; all spread out to the wall
  const auto rep = embedded_eigenvalue_scan(PotentialSpec::exponential(0.5, 2.0), 2, 0.2, 5.0);
  ASSERT_GT(rep.candidates.size(), 20u);
  for (const auto& c : rep.candidates) {
    EXPECT_GT(c.outer_fraction, 0.1);
    EXPECT_GT(c.envelope_ratio, 0.3);
  }
}

TEST(Embedded, FilterAcceptsADecayingVector) {
  // a genuine bound state (below the continuum) passes the same filter
  const auto g = RadialGrid::make(2, 25.0, 400);
  const auto A = calibrate_attractive_potential(2, 2.0, 0.5, g);
  const auto op = FDOperator::make(A, 2, 30.0, 0.02);
  const auto x = op.eigenvector(op.eigenvalue(0));
  double outer = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (op.r[i] > 15.0) outer += x[i] * x[i] * op.h;
  EXPECT_LT(outer, 1e-3);
}

TEST(ImRV, ZeroPotentialIsFree) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  for (double r : {0.0, 0.7, 3.0}) EXPECT_EQ(im_rv_kernel(PotentialSpec::zero(), 2, 1.3, r, g), im_r0_critical(2, 1.3, r));
}

TEST(ImRV, VanishesLinearlyAtZero) {
  const auto V = repulsive();
  const auto g = RadialGrid::make(2, 25.0, 400);
  const double a = im_rv_kernel(V, 2, 1e-3, 0.5, g), b = im_rv_kernel(V, 2, 2e-3, 0.5, g);
  EXPECT_NEAR(b / a, 2.0, 1e-3);
}

TEST(ImRV, DensityPositive) {
  const auto V = repulsive();
  const auto g = perturbation_grid(2, V, 10.0);
  for (double l = 0.1; l <= 10.0; l += 0.7) EXPECT_GT(perturbed_spectral_density(V, 2, l, g), 0.0) << l;
}

TEST(PerturbedPropagator, ZeroPotentialIsFree) {
  const cplx a = perturbed_propagator(PotentialSpec::zero(), 2, 2.0, 1.0);
  EXPECT_LT(std::abs(a - free_propagator_kernel(2, 2.0, 1.0)), 1e-6);
}

TEST(PerturbedPropagator, MatchesTimeDomainOracle) {
  // <e^{itH} g>(0) = int U_V(t; 0, r) g(r) dV against fourth-order FD + Chebyshev in time
  const auto V = smooth_bump();
  const auto g = [](double r) { return std::exp(-3.0 * r * r); };
  const auto& gr = quad::gauss_rule(20);
  std::vector<double> radii, wts;
  for (int p = 0; p < 3; ++p) {
    const double a = 1.2 * p, b = a + 1.2;
    for (int i = 0; i < gr.size(); ++i) {
      radii.push_back(0.5 * (a + b) + 0.5 * (b - a) * gr.x[i]);
      wts.push_back(0.5 * (b - a) * gr.w[i]);
    }
  }
  const PerturbedPropagator P(V, 2, radii);
  for (double t : {1.0, 2.0}) {
    cplx ours{};
    for (std::size_t k = 0; k < radii.size(); ++k) {
      const double r = radii[k];
      ours += wts[k] * 4.0 * pi * std::sinh(r) * std::sinh(r) * g(r) * P(t, k).total;
    }
    std::vector<double> rs;
    const auto u = fdoracle::fd_evolve_h3(g, t, 60.0, 0.01, rs, [&](double r) { return V(r); });
    EXPECT_LT(std::abs(ours - fdoracle::origin_value(u, rs)), 1e-8) << t;
  }
}

TEST(PerturbedPropagator, DecayAndHighFrequencyPart) {
  const PerturbedPropagator P(repulsive(), 2, {0.0, 0.5, 1.0, 2.0});
  EXPECT_GT(P.min_det_modulus(), 0.1);
  EXPECT_GE(P.growth_exponent(), 0.0);
  EXPECT_LT(P.growth_exponent(), 4.0);
  EXPECT_GE(P.ibp_terms(), static_cast<int>(std::ceil(P.growth_exponent())) + 2);
  const auto ts = log_spaced(1.0, 100.0, 12);
  std::vector<double> sup(ts.size(), 0.0), hi(ts.size(), 0.0);
  for (std::size_t i = 0; i < ts.size(); ++i)
    for (std::size_t k = 0; k < P.radii().size(); ++k) {
      const auto s = P(ts[i], k);
      sup[i] = std::max(sup[i], std::abs(s.total));
      hi[i] = std::max(hi[i], std::abs(s.high));
    }
  double lo_scaled = infinity, hi_scaled = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    lo_scaled = std::min(lo_scaled, sup[i] * std::pow(ts[i], 1.5));
    hi_scaled = std::max(hi_scaled, sup[i] * std::pow(ts[i], 1.5));
  }
  EXPECT_LT(hi_scaled / lo_scaled, 1.2);
  EXPECT_NEAR(fit_decay(ts, sup).exponent, -1.5, 0.1);
  EXPECT_LE(fit_decay(ts, hi).exponent, -3.0);
}

TEST(PerturbedPropagator, Preconditions) {
  EXPECT_THROW(perturbed_propagator(repulsive(), 2, 0.5, 1.0), Error);
  EXPECT_THROW(PerturbedPropagator(repulsive(), 2, {}), Error);
}
