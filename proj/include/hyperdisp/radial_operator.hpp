#pragma once

// Radial-sector integral operators on H^{n+1}: two-point kernels averaged over
// the sphere, Nystrom matrices, weighted norms, L^q kernel norms and the
// Young-type composition inequality.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "hyperdisp/errors.hpp"
#include "hyperdisp/free_kernel.hpp"
#include "hyperdisp/parallel.hpp"
#include "hyperdisp/quadrature.hpp"
#include "hyperdisp/radial_grid.hpp"
#include "hyperdisp/specfun.hpp"

namespace hyperdisp {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Distance between points at radii r1, r2 separated by angle theta:
/// cosh d = cosh r1 cosh r2 - sinh r1 sinh r2 cos theta, in a cancellation-free form.
inline double geodesic_distance(double r1, double r2, double theta) {
  require(r1 >= 0.0 && r2 >= 0.0, ErrorCode::precondition, "radii must be >= 0");
  require(theta >= 0.0 && theta <= pi, ErrorCode::precondition, "angle must lie in [0, pi]");
  const double a = std::sinh(0.5 * (r1 - r2)), b = std::sin(0.5 * theta);
  const double x = 2.0 * a * a + 2.0 * std::sinh(r1) * std::sinh(r2) * b * b;  // cosh d - 1
  return std::log1p(x + std::sqrt(x * (x + 2.0)));
}

/// (1/|S^n|) int_{S^n} k(d(x, w)) dw for |x| = r1, |w| = r2.
inline cplx angular_average(int n, const std::function<cplx(double)>& k, double r1, double r2,
                            const quad::AdaptiveOptions& opt = {1e-11, 1e-300, 4000}) {
  require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
  if (r1 == 0.0 || r2 == 0.0) return k(r1 + r2);
  const double c = sphere_area(n - 1) / sphere_area(n);
  auto f = [&](double th) { return k(geodesic_distance(r1, r2, th)) * std::pow(std::sin(th), n - 1); };
  // the kernel may be singular where the two points meet (theta = 0, r1 = r2)
  std::vector<double> br = {0.0};
  for (int e = 9; e >= 1; --e) br.push_back(std::pow(10.0, -e));
  br.push_back(0.3);
  br.push_back(1.0);
  br.push_back(pi / 2);
  br.push_back(pi);
  return c * quad::integrate(f, std::span<const double>(br), opt);
}

/// Angular-averaged two-point kernel kbar(r1, r2). Separable kernels
/// kbar = inner(min) * outer(max) (radial Green's functions) have a derivative
/// jump on the diagonal and get exact treatment there.
struct RadialKernel {
  std::function<cplx(double, double)> eval;
  std::function<cplx(double)> inner, outer;
  bool separable() const { return static_cast<bool>(inner) && static_cast<bool>(outer); }
  cplx operator()(double r1, double r2) const {
    if (eval) return eval(r1, r2);
    return r1 <= r2 ? inner(r1) * outer(r2) : inner(r2) * outer(r1);
  }
};

namespace detail {

// 2 sinh(z/2) e^{z/2}
inline cplx expm1c(cplx z) { return std::abs(z) < 1e-5 ? z * (1.0 + 0.5 * z + z * z / 6.0) : 2.0 * std::sinh(0.5 * z) * std::exp(0.5 * z); }

}  // namespace detail

/// Radial-sector kernel of R_0(n/2 + sigma): Phi_sigma(r_<) R_0(n/2 + sigma; r_>).
inline RadialKernel resolvent_kernel(int n, cplx sigma) {
  RadialKernel k;
  if (n == 2) {
    // sinh(sigma a) e^{-sigma b} / (4 pi sigma sinh a sinh b), written with expm1 for small sigma a
    k.eval = [sigma](double a, double b) -> cplx {
      if (a > b) std::swap(a, b);
      if (a == 0.0) return std::exp(-sigma * b) / (4.0 * pi * std::sinh(b));
      const cplx z = -2.0 * sigma * a;
      const cplx num = std::abs(sigma) * a < 1e-8 ? cplx(-2.0 * a) : detail::expm1c(z) / sigma;
      return -std::exp(-sigma * (b - a)) * num / (8.0 * pi * std::sinh(a) * std::sinh(b));
    };
    k.inner = [sigma](double r) { return spherical_function(2, sigma, r); };
    k.outer = [sigma](double r) { return free_resolvent(2, sigma, r); };
    return k;
  }
  k.inner = [n, sigma](double r) { return spherical_function(n, sigma, r); };
  k.outer = [n, sigma](double r) { return free_resolvent(n, sigma, r); };
  return k;
}

/// Radial-sector kernel of Im R_0(n/2 + i lambda): kappa(lambda) Phi(r1) Phi(r2). Smooth.
inline RadialKernel im_resolvent_kernel(int n, double lambda) {
  RadialKernel k;
  const double kappa = 0.5 * a_n(n, lambda) * legendre_p_origin(n);
  const cplx sigma(0.0, lambda);
  k.eval = [n, sigma, kappa](double a, double b) {
    return kappa * spherical_function(n, sigma, a) * spherical_function(n, sigma, b);
  };
  return k;
}

/// Generic distance kernel, averaged numerically.
inline RadialKernel distance_kernel(int n, std::function<cplx(double)> kd) {
  RadialKernel k;
  k.eval = [n, kd = std::move(kd)](double a, double b) { return angular_average(n, kd, a, b); };
  return k;
}

struct RadialKernelOp {
  std::shared_ptr<const RadialGrid> grid;
  CMatrix kernel;  // kbar(r_i, r_j)
  CMatrix matrix;  // quadrature-folded: (K f)_i = sum_j matrix_ij f_j
  bool weights_folded = true;
  double max_correction = 0.0;  // largest diagonal-panel correction relative to its row norm

  std::size_t size() const { return static_cast<std::size_t>(matrix.rows()); }
  CVector apply(const CVector& f) const { return matrix * f; }
  Eigen::VectorXd measure() const {
    Eigen::VectorXd m(grid->size());
    for (std::size_t i = 0; i < grid->size(); ++i) m[i] = grid->measure(i);
    return m;
  }
  /// D^{1/2} M D^{-1/2}: the operator in an orthonormal frame of L^2(dV).
  CMatrix folded() const {
    const Eigen::VectorXd s = measure().cwiseSqrt();
    return s.asDiagonal() * matrix * s.cwiseInverse().asDiagonal();
  }
};

struct DiscretizeOptions {
  bool product_quadrature = true;
  double coarse_limit = 0.10;
  int interp_points = 24;
};

namespace detail {

// Exact block int_P int_P l_i l_j kbar dV dV for kbar = inner(r_<) outer(r_>).
inline Eigen::MatrixXcd galerkin_block(const RadialKernel& k, const RadialGrid& g, int p, int interp) {
  const double a = g.edges[p], b = g.edges[p + 1];
  const int ord = g.order;
  const auto [i0, i1] = g.panel_range(p);
  std::vector<double> nodes(g.r.begin() + i0, g.r.begin() + i1);
  const auto bw = quad::barycentric_weights(nodes);
  const auto cheb = quad::chebyshev_points(interp, a, b);
  const auto cw = quad::barycentric_weights(cheb);
  std::vector<cplx> A(interp), B(interp);
  const double area = sphere_area(g.n);
  for (int c = 0; c < interp; ++c) {
    const double vol = area * std::pow(std::sinh(cheb[c]), g.n);
    A[c] = k.inner(cheb[c]) * vol;
    B[c] = cheb[c] > 0.0 ? k.outer(cheb[c]) * vol : 0.0;
  }
  auto Ai = [&](double x) { return quad::barycentric_eval<cplx>(cheb, cw, A, x); };
  auto Bi = [&](double x) { return quad::barycentric_eval<cplx>(cheb, cw, B, x); };
  const auto& gr = quad::gauss_rule(20);
  const int outer_pieces = 4;
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(ord, ord);
  std::vector<double> li(ord), lj(ord);
  std::vector<cplx> L(ord), U(ord);
  for (int s = 0; s < outer_pieces; ++s) {
    const double ya = a + (b - a) * s / outer_pieces, yb = a + (b - a) * (s + 1) / outer_pieces;
    for (int m = 0; m < gr.size(); ++m) {
      const double y = 0.5 * (ya + yb) + 0.5 * (yb - ya) * gr.x[m];
      const double W = 0.5 * (yb - ya) * gr.w[m];
      std::fill(L.begin(), L.end(), cplx{});
      std::fill(U.begin(), U.end(), cplx{});
      for (int q = 0; q < gr.size(); ++q) {
        const double xl = 0.5 * (a + y) + 0.5 * (y - a) * gr.x[q], wl = 0.5 * (y - a) * gr.w[q];
        const double xu = 0.5 * (y + b) + 0.5 * (b - y) * gr.x[q], wu = 0.5 * (b - y) * gr.w[q];
        const cplx av = Ai(xl) * wl, bv = Bi(xu) * wu;
        quad::lagrange_basis(nodes, bw, xl, li);
        quad::lagrange_basis(nodes, bw, xu, lj);
        for (int j = 0; j < ord; ++j) {
          L[j] += av * li[j];
          U[j] += bv * lj[j];
        }
      }
      quad::lagrange_basis(nodes, bw, y, li);
      const cplx by = Bi(y), ay = Ai(y);
      for (int i = 0; i < ord; ++i)
        for (int j = 0; j < ord; ++j) out(i, j) += W * li[i] * (by * L[j] + ay * U[j]);
    }
  }
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

/// Nystrom matrix of a radial kernel on `grid`.
inline RadialKernelOp discretize(const RadialKernel& k, const RadialGrid& grid, const DiscretizeOptions& opt = {}) {
  RadialKernelOp op;
  op.grid = std::make_shared<const RadialGrid>(grid);
  const long N = static_cast<long>(grid.size());
  op.kernel.resize(N, N);
  if (k.separable()) {
    std::vector<cplx> in(N), out(N);
    parallel_for(N, [&](long i) {
      in[i] = k.inner(grid.r[i]);
      out[i] = k.outer(grid.r[i]);
    });
    for (long i = 0; i < N; ++i)
      for (long j = 0; j < N; ++j) op.kernel(i, j) = i <= j ? in[i] * out[j] : in[j] * out[i];
  } else {
    parallel_for(N, [&](long i) {
      for (long j = i; j < N; ++j) op.kernel(i, j) = k(grid.r[i], grid.r[j]);
    });
    for (long i = 0; i < N; ++i)
      for (long j = 0; j < i; ++j) op.kernel(i, j) = op.kernel(j, i);
  }
  op.matrix = op.kernel;
  for (long j = 0; j < N; ++j) op.matrix.col(j) *= grid.measure(j);
  if (k.separable() && opt.product_quadrature) {
    std::vector<double> corr(grid.panel_count(), 0.0);
    std::vector<Eigen::MatrixXcd> blocks(grid.panel_count());
    parallel_for(grid.panel_count(), [&](long p) { blocks[p] = detail::galerkin_block(k, grid, static_cast<int>(p), opt.interp_points); });
    for (int p = 0; p < grid.panel_count(); ++p) {
      const auto [i0, i1] = grid.panel_range(p);
      for (std::size_t i = i0; i < i1; ++i) {
        const double row = op.matrix.row(static_cast<long>(i)).cwiseAbs().sum();
        double c = 0.0;
        for (std::size_t j = i0; j < i1; ++j) {
          const cplx v = blocks[p](static_cast<long>(i - i0), static_cast<long>(j - i0)) / grid.measure(i);
          c += std::abs(v - op.matrix(static_cast<long>(i), static_cast<long>(j)));
          op.matrix(static_cast<long>(i), static_cast<long>(j)) = v;
        }
        if (row > 0.0) op.max_correction = std::max(op.max_correction, c / row);
      }
    }
    if (op.max_correction > opt.coarse_limit)
      fail(ErrorCode::grid_too_coarse, "diagonal correction exceeds the coarse-grid limit");
  }
  return op;
}

struct WeightProfile {
  double eta = 0.0;
  std::vector<double> values;  // rho(r_i)^eta, rho = e^{-r}
  static WeightProfile make(const RadialGrid& g, double eta) {
    require(eta >= 0.0, ErrorCode::precondition, "weight exponent must be >= 0");
    WeightProfile w;
    w.eta = eta;
    for (double r : g.r) w.values.push_back(std::exp(-eta * r));
    return w;
  }
};

/// Largest singular value; power iteration on A^* A for large matrices.
inline double largest_singular_value(const CMatrix& A, double tol = 1e-10, int max_iter = 2000) {
  if (A.rows() == 0) return 0.0;
  if (A.rows() <= 700) {
    Eigen::BDCSVD<CMatrix> svd(A);
    return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  }
  CVector v = CVector::Ones(A.cols()).normalized();
  double prev = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const CVector u = A * v;
    CVector w = A.adjoint() * u;
    const double s = std::sqrt(w.norm());
    if (w.norm() == 0.0) return 0.0;
    v = w.normalized();
    if (std::abs(s - prev) <= tol * s) return s;
    prev = s;
  }
  return prev;
}

/// || rho^eta K rho^eta || on L^2(dV) of the grid.
inline double weighted_norm(const RadialKernelOp& op, const WeightProfile& w) {
  require(w.values.size() == op.size(), ErrorCode::precondition, "weight profile and operator grids differ");
  const Eigen::Map<const Eigen::VectorXd> rw(w.values.data(), static_cast<long>(w.values.size()));
  const CMatrix A = rw.asDiagonal() * op.folded() * rw.asDiagonal();
  return largest_singular_value(A);
}

struct QNorm {
  double value = 0.0;
  double tail_bound = 0.0;  // estimate of the part beyond r_max
  double refined = 0.0;     // value on the refined grid
};

namespace detail {

inline double q_sum(const std::function<cplx(double)>& k, const RadialGrid& g, double q, double alpha, double& tail) {
  const bool sup = std::isinf(q);
  double s = 0.0;
  std::vector<double> dens(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = std::abs(k(g.r[i])) * std::exp(-alpha * g.r[i]);
    if (sup) {
      s = std::max(s, v);
    } else {
      dens[i] = std::pow(v, q) * g.vol[i];
      s += g.w[i] * dens[i];
    }
  }
  tail = 0.0;
  if (!sup) {
    // exponential fit of the density over the last panel
    const std::size_t N = g.size(), o = static_cast<std::size_t>(g.order);
    const double f1 = dens[N - o], f2 = dens[N - 1];
    const double gamma = (std::log(f1) - std::log(f2)) / (g.r[N - 1] - g.r[N - o]);
    tail = (f2 > 0.0 && std::isfinite(gamma) && gamma > 0.0) ? f2 / gamma : (f2 > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  }
  return s;
}

}  // namespace detail

/// ( int |k(r)|^q rho^{alpha q} dV )^{1/q} over the grid (q = inf: weighted sup),
/// with a refinement check: > 5% change or an unbounded tail raises divergence.
inline QNorm kernel_q_norm(const std::function<cplx(double)>& k, double q, double alpha, const RadialGrid& grid,
                           double change_limit = 0.05) {
  require(q >= 1.0, ErrorCode::precondition, "q must be >= 1");
  QNorm out;
  double tail = 0.0, tail2 = 0.0;
  const double s1 = detail::q_sum(k, grid, q, alpha, tail);
  const double s2 = detail::q_sum(k, grid.refined(), q, alpha, tail2);
  const double e = std::isinf(q) ? 1.0 : 1.0 / q;
  out.value = std::pow(s1, e);
  out.refined = std::pow(s2, e);
  out.tail_bound = std::isinf(q) ? 0.0 : std::pow(s1 + tail, e) - out.value;
  if (!std::isfinite(out.tail_bound) || out.tail_bound > change_limit * out.value ||
      std::abs(out.refined - out.value) > change_limit * out.value)
    fail(ErrorCode::divergence, "kernel L^q norm does not stabilise under refinement");
  return out;
}

struct YoungCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double p = 1.0;
  double slack() const { return rhs - lhs; }
};

namespace detail {

inline double lq_norm(const Eigen::VectorXd& absval, const Eigen::VectorXd& mu, double q) {
  if (std::isinf(q)) return absval.maxCoeff();
  double s = 0.0;
  for (long i = 0; i < absval.size(); ++i) s += std::pow(absval[i], q) * mu[i];
  return std::pow(s, 1.0 / q);
}

}  // namespace detail

/// Exponent p from 1/q1 + 1/q2 = 1/p + 1.
inline double young_exponent(double q1, double q2) {
  require(q1 >= 1.0 && q2 >= 1.0, ErrorCode::exponent_mismatch, "Young exponents must be >= 1");
  const double inv = (std::isinf(q1) ? 0.0 : 1.0 / q1) + (std::isinf(q2) ? 0.0 : 1.0 / q2) - 1.0;
  if (inv < -1e-12 || inv > 1.0 + 1e-12) fail(ErrorCode::exponent_mismatch, "1/q1 + 1/q2 - 1 must lie in [0, 1]");
  return inv <= 1e-12 ? std::numeric_limits<double>::infinity() : 1.0 / inv;
}

/// sup_{z'} || int K1(., w) K2(w, z') dmu(w) ||_p against A_{q1} B_{q2}, with
/// A the larger of the uniform column and row L^{q1} norms of K1 (rows only
/// when p = inf) and B the uniform column L^{q2} norm of K2.
inline YoungCheck young_compose_check(const CMatrix& K1, const CMatrix& K2, const Eigen::VectorXd& mu, double q1,
                                      double q2) {
  require(K1.rows() == mu.size() && K1.cols() == mu.size() && K2.rows() == mu.size() && K2.cols() == mu.size(),
          ErrorCode::precondition, "kernels and measure must share the grid");
  YoungCheck out;
  out.p = young_exponent(q1, q2);
  const Eigen::MatrixXd A1 = K1.cwiseAbs();
  double A = 0.0;
  for (long i = 0; i < A1.rows(); ++i) A = std::max(A, detail::lq_norm(A1.row(i).transpose(), mu, q1));
  if (!std::isinf(out.p))
    for (long j = 0; j < A1.cols(); ++j) A = std::max(A, detail::lq_norm(A1.col(j), mu, q1));
  const Eigen::MatrixXd A2 = K2.cwiseAbs();
  double B = 0.0;
  for (long j = 0; j < A2.cols(); ++j) B = std::max(B, detail::lq_norm(A2.col(j), mu, q2));
  const CMatrix H = K1 * mu.asDiagonal() * K2;
  const Eigen::MatrixXd Ha = H.cwiseAbs();
  for (long j = 0; j < Ha.cols(); ++j) out.lhs = std::max(out.lhs, detail::lq_norm(Ha.col(j), mu, out.p));
  out.rhs = A * B;
  return out;
}

inline YoungCheck young_compose_check(const RadialKernelOp& K1, const RadialKernelOp& K2, double q1, double q2) {
  require(K1.grid->size() == K2.grid->size(), ErrorCode::precondition, "operators live on different grids");
  return young_compose_check(K1.kernel, K2.kernel, K1.measure(), q1, q2);
}

/// Same, with the target exponent given: it must satisfy the scaling relation.
inline YoungCheck young_compose_check(const RadialKernelOp& K1, const RadialKernelOp& K2, double q1, double q2,
                                      double p) {
  const double expected = young_exponent(q1, q2);
  const bool both_inf = std::isinf(expected) && std::isinf(p);
  if (!both_inf && std::abs(1.0 / expected - 1.0 / p) > 1e-12)
    fail(ErrorCode::exponent_mismatch, "1/q1 + 1/q2 != 1/p + 1");
  return young_compose_check(K1, K2, q1, q2);
}

}  // namespace hyperdisp
