#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "hyperdisp/radial_operator.hpp"

using namespace hyperdisp;

namespace {

// Hyperboloid model: x = (cosh r, sinh r cos a, sinh r sin a); cosh d = -<x, y>.
double embedded_distance(double r1, double r2, double theta) {
  const std::array<double, 3> x = {std::cosh(r1), std::sinh(r1), 0.0};
  const std::array<double, 3> y = {std::cosh(r2), std::sinh(r2) * std::cos(theta), std::sinh(r2) * std::sin(theta)};
  return std::acosh(x[0] * y[0] - x[1] * y[1] - x[2] * y[2]);
}

double radial_residual_gauss(int n, cplx sigma, double r) {
  // (-Delta - s(n-s)) e^{-r^2}
  const double phi = std::exp(-r * r);
  const double d1 = -2.0 * r * phi, d2 = (4.0 * r * r - 2.0) * phi;
  const double coth_term = r == 0.0 ? n * d2 : n * std::cosh(r) / std::sinh(r) * d1;
  const cplx s = 0.5 * n + sigma;
  return (-d2 - coth_term - s * (double(n) - s) * phi).real();
}

}  // namespace

TEST(RadialGrid, VolumeQuadrature) {
  for (int n : {1, 2, 3}) {
    const auto g = RadialGrid::make(n, 25.0, 400);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.w[i] * std::pow(std::sinh(g.r[i]), n);
    auto f = [n](double r) { return std::pow(std::sinh(r), n); };
    const double br[] = {0.0, 1.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    const double exact = quad::integrate(f, std::span<const double>(br));
    EXPECT_LT(std::abs(s - exact), 1e-8 * exact) << n;
    for (std::size_t i = 1; i < g.size(); ++i) ASSERT_GT(g.r[i], g.r[i - 1]);
    EXPECT_GT(g.r.front(), 0.0);
  }
}

TEST(Geodesic, ClosedCases) {
  EXPECT_NEAR(geodesic_distance(1.3, 0.4, 0.0), 0.9, 1e-14);
  EXPECT_NEAR(geodesic_distance(1.3, 0.4, pi), 1.7, 1e-14);
  EXPECT_NEAR(geodesic_distance(1.0, 1.0, pi / 2), std::acosh(std::cosh(1.0) * std::cosh(1.0)), 1e-14);
  EXPECT_NEAR(geodesic_distance(1.0, 1.0, pi / 2), 1.51337, 1e-5);
  EXPECT_THROW(geodesic_distance(-1.0, 1.0, 0.5), Error);
}

TEST(Geodesic, MatchesEmbedding) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> R(0.0, 4.0), T(0.0, pi);
  for (int k = 0; k < 200; ++k) {
    const double r1 = R(rng), r2 = R(rng), th = T(rng);
    const double d = embedded_distance(r1, r2, th);
    if (d < 0.1) continue;  // acosh is ill conditioned near 1
    EXPECT_NEAR(geodesic_distance(r1, r2, th), d, 1e-10 * (1.0 + d));
  }
  // small separations where the direct acosh loses digits
  EXPECT_NEAR(geodesic_distance(2.0, 2.0, 1e-9), 1e-9 * std::sinh(2.0), 1e-22);
}

TEST(AngularAverage, TrivialCases) {
  for (int n : {1, 2, 3}) {
    EXPECT_NEAR(std::abs(angular_average(n, [](double) { return cplx(1.0); }, 0.7, 1.9) - 1.0), 0.0, 1e-12) << n;
    auto k = [](double d) { return cplx(std::exp(-d), d); };
    EXPECT_EQ(angular_average(n, k, 1.4, 0.0), k(1.4));
  }
}

TEST(AngularAverage, H3ResolventOnDiagonal) {
  const cplx sigma = 1.0;
  auto R = [&](double d) { return free_resolvent(2, sigma, d); };
  const cplx got = angular_average(2, R, 1.0, 1.0);
  // closed form Phi_1(1) R_0(1; 1) = e^{-1}/(4 pi sinh 1)
  EXPECT_NEAR(std::abs(got - std::exp(-1.0) / (4.0 * pi * std::sinh(1.0))), 0.0, 1e-10);
  // oversampled oracle: theta = u^2 removes the 1/theta singularity; 10x panels of 20-point Gauss
  const auto& g = quad::gauss_rule(20);
  double s = 0.0;
  const int panels = 400;
  const double umax = std::sqrt(pi);
  for (int p = 0; p < panels; ++p) {
    const double a = umax * p / panels, b = umax * (p + 1) / panels;
    for (int i = 0; i < g.size(); ++i) {
      const double u = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
      const double th = u * u;
      s += 0.5 * (b - a) * g.w[i] * 2.0 * u * std::sin(th) * R(geodesic_distance(1.0, 1.0, th)).real();
    }
  }
  EXPECT_NEAR(got.real(), 0.5 * s, 1e-8);
}

TEST(AngularAverage, SeparableFormOtherDimensions) {
  for (int n : {1, 3, 4}) {
    for (cplx sigma : {cplx(0.8, 0.0), cplx(0.5, 2.0)}) {
      auto R = [&](double d) { return free_resolvent(n, sigma, d); };
      const double r1 = 0.7, r2 = 1.5;
      const cplx avg = angular_average(n, R, r1, r2);
      const cplx sep = resolvent_kernel(n, sigma)(r1, r2);
      EXPECT_LT(std::abs(avg - sep), 1e-8 * std::abs(sep)) << n << " " << sigma;
    }
  }
}

TEST(Discretize, ZeroKernel) {
  const auto g = RadialGrid::make(2, 10.0, 100);
  RadialKernel k;
  k.eval = [](double, double) { return cplx{}; };
  const auto op = discretize(k, g);
  EXPECT_EQ(op.matrix.norm(), 0.0);
}

TEST(Discretize, ResolventInvertsHelmholtz) {
  for (int n : {2, 3}) {
    const cplx sigma = 1.0;
    const auto g = RadialGrid::make(n, 25.0, 400);
    const auto op = discretize(resolvent_kernel(n, sigma), g);
    CVector f(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) f[i] = radial_residual_gauss(n, sigma, g.r[i]);
    const CVector u = op.apply(f);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) err = std::max(err, std::abs(u[i] - std::exp(-g.r[i] * g.r[i])));
    EXPECT_LT(err, 1e-4) << n;
    EXPECT_LT(op.max_correction, 0.1);
  }
}

TEST(Discretize, ProductQuadratureBeatsPlainNystrom) {
  const auto g = RadialGrid::make(2, 25.0, 400);
  DiscretizeOptions plain;
  plain.product_quadrature = false;
  const auto a = discretize(resolvent_kernel(2, 1.0), g);
  const auto b = discretize(resolvent_kernel(2, 1.0), g, plain);
  CVector f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) f[i] = radial_residual_gauss(2, 1.0, g.r[i]);
  double ea = 0.0, eb = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double ex = std::exp(-g.r[i] * g.r[i]);
    ea = std::max(ea, std::abs((a.matrix * f)[i] - ex));
    eb = std::max(eb, std::abs((b.matrix * f)[i] - ex));
  }
  EXPECT_LT(10.0 * ea, eb);
}

TEST(Discretize, SelfAdjointForRealSigma) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  const auto op = discretize(resolvent_kernel(2, 0.7), g);
  const CMatrix F = op.folded();
  EXPECT_LT((F - F.transpose()).cwiseAbs().maxCoeff(), 1e-10 * F.cwiseAbs().maxCoeff());
  EXPECT_LT(F.imag().cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Discretize, CoarseGridRejected) {
  const auto g = RadialGrid::make(2, 25.0, 20, 10, 0);
  try {
    discretize(resolvent_kernel(2, 3.0), g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::grid_too_coarse);
  }
}

TEST(WeightedNorm, ZeroMonotoneAndSvdAgreement) {
  const auto g = RadialGrid::make(2, 20.0, 300);
  RadialKernel zero;
  zero.eval = [](double, double) { return cplx{}; };
  EXPECT_EQ(weighted_norm(discretize(zero, g), WeightProfile::make(g, 0.5)), 0.0);
  const auto op = discretize(resolvent_kernel(2, 0.5), g);  // positive kernel
  double prev = std::numeric_limits<double>::infinity();
  for (double eta : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    const double v = weighted_norm(op, WeightProfile::make(g, eta));
    EXPECT_LE(v, prev * (1.0 + 1e-12)) << eta;
    prev = v;
  }
  const CMatrix F = op.folded();
  Eigen::BDCSVD<CMatrix> svd(F);
  CMatrix big = CMatrix::Zero(800, 800);
  big.topLeftCorner(F.rows(), F.cols()) = F;
  EXPECT_NEAR(largest_singular_value(big), svd.singularValues()[0], 1e-8 * svd.singularValues()[0]);
}

TEST(WeightedNorm, CriticalLineDecaysLikeInverseLambda) {
  std::vector<double> scaled, scaled_fine;
  for (double lambda : {1.0, 4.0, 10.0, 20.0}) {
    const int nodes = 10 * static_cast<int>(std::ceil(std::max(40.0, 0.3 * lambda * 15.0)));
    const auto g = RadialGrid::make(2, 15.0, nodes);
    const auto gf = RadialGrid::make(2, 15.0, 2 * nodes, 10, 8);
    const cplx sigma(0.0, lambda);
    scaled.push_back(lambda * weighted_norm(discretize(resolvent_kernel(2, sigma), g), WeightProfile::make(g, 0.5)));
    scaled_fine.push_back(lambda * weighted_norm(discretize(resolvent_kernel(2, sigma), gf), WeightProfile::make(gf, 0.5)));
  }
  const double mx = *std::max_element(scaled.begin(), scaled.end());
  const double mn = *std::min_element(scaled.begin(), scaled.end());
  EXPECT_LT(mx / mn, 5.0);
  for (std::size_t i = 0; i < scaled.size(); ++i) EXPECT_LT(std::abs(scaled[i] - scaled_fine[i]), 0.01 * scaled[i]);
}

TEST(KernelQNorm, SupAndFiniteCases) {
  const auto g = RadialGrid::make(2, 25.0, 400);
  auto k = [](double r) { return cplx(std::exp(-2.0 * r)); };
  const auto sup = kernel_q_norm(k, std::numeric_limits<double>::infinity(), 0.0, g);
  EXPECT_NEAR(sup.value, std::exp(-2.0 * g.r.front()), 1e-15);
  std::vector<double> ratio;
  for (double lambda : {5.0, 10.0, 20.0}) {
    auto R = [lambda](double r) { return free_resolvent(2, cplx(0.0, lambda), r); };
    const auto q1 = kernel_q_norm(R, 1.0, 1.5, g);
    ratio.push_back(q1.value / lambda);
    EXPECT_LT(q1.tail_bound, 1e-3 * q1.value);
  }
  for (std::size_t i = 1; i < ratio.size(); ++i) EXPECT_LE(ratio[i], ratio[0] * (1.0 + 1e-9));
}

TEST(KernelQNorm, DivergenceAtThresholdAndForFullKernelSup) {
  const auto g = RadialGrid::make(2, 25.0, 400);
  const double lambda = 5.0;
  auto R = [lambda](double r) { return free_resolvent(2, cplx(0.0, lambda), r); };
  auto ImR = [lambda](double r) { return cplx(im_r0_critical(2, lambda, r)); };
  try {
    kernel_q_norm(R, 1.0, 1.0, g);
    FAIL() << "alpha at the threshold should not stabilise";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::divergence);
  }
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_NO_THROW(kernel_q_norm(ImR, inf, 0.0, g));
  EXPECT_THROW(kernel_q_norm(R, inf, 0.0, g), Error);
}

TEST(Young, IdentityBump) {
  const auto g = RadialGrid::make(2, 8.0, 60, 10, 2);
  const auto K1 = discretize(resolvent_kernel(2, 1.5), g);
  RadialKernelOp id = K1;
  const auto mu = K1.measure();
  id.kernel = CMatrix::Zero(g.size(), g.size());
  for (std::size_t i = 0; i < g.size(); ++i) id.kernel(i, i) = 1.0 / mu[i];
  const auto res = young_compose_check(K1, id, 2.0, 1.0);
  EXPECT_DOUBLE_EQ(res.p, 2.0);
  double col = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += std::norm(K1.kernel(i, j)) * mu[i];
    col = std::max(col, std::sqrt(s));
  }
  EXPECT_NEAR(res.lhs, col, 1e-12 * col);
  EXPECT_LE(res.lhs, res.rhs * (1.0 + 1e-10));
}

TEST(Young, RandomNonnegativeKernels) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int N = 40;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd mu(N);
    CMatrix A(N, N), B(N, N);
    for (int i = 0; i < N; ++i) mu[i] = 0.05 + U(rng);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        A(i, j) = std::pow(U(rng), 3);
        B(i, j) = std::pow(U(rng), 3);
      }
    const auto res = young_compose_check(A, B, mu, 4.0 / 3.0, 4.0 / 3.0);
    EXPECT_DOUBLE_EQ(res.p, 2.0);
    EXPECT_LE(res.lhs, res.rhs * (1.0 + 1e-10));
    EXPECT_GT(res.slack(), 0.0);
  }
}

TEST(Young, WeightedFreeKernel) {
  const auto g = RadialGrid::make(2, 12.0, 200);
  const double lambda = 5.0, alpha = 1.0;
  RadialKernel k = resolvent_kernel(2, cplx(0.0, lambda));
  RadialKernel w;
  w.eval = [k, alpha](double a, double b) { return std::exp(-0.5 * alpha * (a + b)) * k(a, b); };
  const auto K = discretize(w, g);
  const auto res = young_compose_check(K, K, 4.0 / 3.0, 4.0 / 3.0, 2.0);
  EXPECT_LE(res.lhs, res.rhs * (1.0 + 1e-10));
}

TEST(Young, ExponentMismatch) {
  const auto g = RadialGrid::make(2, 5.0, 40, 10, 1);
  RadialKernel k;
  k.eval = [](double a, double b) { return cplx(std::exp(-a - b)); };
  const auto K = discretize(k, g);
  try {
    young_compose_check(K, K, 4.0 / 3.0, 4.0 / 3.0, 3.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::exponent_mismatch);
  }
  EXPECT_THROW(young_exponent(1.2, 0.5), Error);
}
