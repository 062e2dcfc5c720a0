#pragma once

// Independent time-domain oracle for radial evolution on H^3: w = sinh(r) u,
// fourth-order differences, odd reflection at 0, Dirichlet at R, Chebyshev
// series in time.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

namespace fdoracle {

using cplx = std::complex<double>;

// Bessel J_0..J_K(x) by Miller's backward recurrence.
inline std::vector<double> bessel_j_sequence(int K, double x) {
  const int start = K + 40 + static_cast<int>(4.0 * std::cbrt(x) + 10);
  std::vector<double> j(start + 2, 0.0);
  j[start + 1] = 0.0;
  j[start] = 1e-300;
  for (int k = start; k >= 1; --k) {
    j[k - 1] = 2.0 * k / x * j[k] - j[k + 1];
    if (std::abs(j[k - 1]) > 1e250) {
      for (int m = k - 1; m <= start; ++m) j[m] *= 1e-250;
    }
  }
  double norm = j[0];
  for (int k = 2; k <= start; k += 2) norm += 2.0 * j[k];
  for (auto& v : j) v /= norm;
  j.resize(K + 1);
  return j;
}

// e^{itH} g with H = -d^2 + 1 + V in the w variable; V must be >= 0.
inline std::vector<cplx> fd_evolve_h3(const std::function<double(double)>& g, double t, double R, double h,
                                      std::vector<double>& rs,
                                      const std::function<double(double)>& V = nullptr) {
  const int N = static_cast<int>(R / h);
  rs.resize(N);
  std::vector<cplx> w(N);
  std::vector<double> pot(N, 0.0);
  double vmax = 0.0;
  for (int j = 0; j < N; ++j) {
    rs[j] = (j + 1) * h;
    w[j] = std::sinh(rs[j]) * g(rs[j]);
    if (V) pot[j] = V(rs[j]);
    vmax = std::max(vmax, pot[j]);
  }
  auto at = [&](const std::vector<cplx>& v, int j) -> cplx {
    if (j >= 0 && j < N) return v[j];
    if (j == -1) return 0.0;
    if (j < -1) return -v[-j - 2];
    return 0.0;
  };
  const double lo = 1.0, hi = 1.0 + vmax + 16.0 / (3.0 * h * h);
  const double c = 0.5 * (hi + lo), d = 0.5 * (hi - lo);
  auto X = [&](const std::vector<cplx>& v) {
    std::vector<cplx> out(N);
    for (int j = 0; j < N; ++j) {
      const cplx lap = (-at(v, j - 2) + 16.0 * at(v, j - 1) - 30.0 * v[j] + 16.0 * at(v, j + 1) - at(v, j + 2)) /
                       (12.0 * h * h);
      out[j] = ((-lap + (1.0 + pot[j]) * v[j]) - c * v[j]) / d;
    }
    return out;
  };
  const double theta = t * d;
  const int K = static_cast<int>(theta + 30.0 * std::cbrt(theta) + 60);
  const auto J = bessel_j_sequence(K, theta);
  std::vector<cplx> T0 = w, T1 = X(w), acc(N);
  cplx ik(1.0, 0.0);
  for (int j = 0; j < N; ++j) acc[j] = J[0] * T0[j];
  for (int k = 1; k <= K; ++k) {
    ik *= cplx(0.0, 1.0);
    for (int j = 0; j < N; ++j) acc[j] += 2.0 * ik * J[k] * T1[j];
    auto T2 = X(T1);
    for (int j = 0; j < N; ++j) T2[j] = 2.0 * T2[j] - T0[j];
    T0 = std::move(T1);
    T1 = std::move(T2);
  }
  const cplx ph = std::exp(cplx(0.0, t * c));
  for (int j = 0; j < N; ++j) acc[j] *= ph / std::sinh(rs[j]);
  return acc;
}

/// u(t, 0) from the evolved w via the odd-reflection stencil for w'(0).
inline cplx origin_value(const std::vector<cplx>& u, const std::vector<double>& rs) {
  const double h = rs[0];
  const cplx w1 = u[0] * std::sinh(rs[0]), w2 = u[1] * std::sinh(rs[1]);
  return (8.0 * w1 - w2) / (6.0 * h);
}

}  // namespace fdoracle
