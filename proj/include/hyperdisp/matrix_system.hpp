#pragma once

// NLS ground states on H^{n+1}, the linearized matrix operator
//   H = diag(A, -A) + [[-V1, -V2], [V2, V1]],  A = -Delta + mu - n^2/4,
// its resolvent on the two spectral branches |m| > mu, and the kernel of
// e^{itH} P_c from the jump of the resolvent across the continuum.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/numeric/odeint.hpp>
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
#include "hyperdisp/perturbed.hpp"
#include "hyperdisp/propagator.hpp"
#include "hyperdisp/quadrature.hpp"
#include "hyperdisp/radial_grid.hpp"
#include "hyperdisp/radial_operator.hpp"
#include "hyperdisp/specfun.hpp"

namespace hyperdisp {

// ---------------------------------------------------------------------------
// Ground state: Psi'' + n coth(r) Psi' - (mu - n^2/4) Psi + Psi^{p+1} = 0, Psi'(0) = 0.

struct BoundState {
  int n = 2;
  double mu = 2.0, p = 1.0;
  std::vector<double> r, psi, dpsi;  // uniform samples on [0, r_max]
  double psi0 = 0.0;
  double decay_rate = 0.0;           // slope of -log Psi on the fit window
  double tail_amplitude = 0.0;       // Psi ~ c R_0(n/2 + sqrt(mu); r) beyond r_max
  double match_radius = 0.0;
  double derivative_mismatch = 0.0;  // relative Psi' jump where the two sweeps meet
  int bisection_steps = 0;
  double bracket_width = 0.0;

  double r_max() const { return r.back(); }
  double step() const { return r[1] - r[0]; }

  /// Cubic Hermite interpolation of the samples; the linear tail beyond r_max.
  double operator()(double x) const {
    if (x <= 0.0) return psi.front();
    if (x >= r.back()) return tail_amplitude * free_resolvent(n, cplx(std::sqrt(mu), 0.0), x).real();
    const double h = step();
    const std::size_t i = std::min(static_cast<std::size_t>(x / h), r.size() - 2);
    const double s = (x - r[i]) / h, s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * psi[i] + (s3 - 2 * s2 + s) * h * dpsi[i] + (-2 * s3 + 3 * s2) * psi[i + 1] +
           (s3 - s2) * h * dpsi[i + 1];
  }
};

struct ShootingOptions {
  double r_max = 20.0;
  double step = 0.005;     // sample spacing
  double tol = 1e-10;      // bracket width in Psi(0), absolute
  double fit_lo = 8.0, fit_hi = 15.0;
  double ode_tol = 1e-13;
};

namespace detail {

using OdeState = std::array<double, 2>;

struct NlsRhs {
  int n;
  double kappa2, p;
  void operator()(const OdeState& y, OdeState& dy, double r) const {
    dy[0] = y[1];
    const double nl = std::pow(std::abs(y[0]), p) * y[0];
    dy[1] = -n * y[1] / std::tanh(r) + kappa2 * y[0] - nl;
  }
};

enum class ShotOutcome { crossed, turned_up, undecided };

/// Taylor start at r0 for Psi(0) = a.
inline OdeState taylor_start(const NlsRhs& f, double a, double r0) {
  const double b = (f.kappa2 * a - std::pow(a, f.p + 1.0)) / (f.n + 1.0);
  return {a + 0.5 * b * r0 * r0, b * r0};
}

inline ShotOutcome shoot(const NlsRhs& f, double a, double r_end, double tol, double* r_event = nullptr) {
  namespace ode = boost::numeric::odeint;
  auto stepper = ode::make_dense_output(tol, tol, ode::runge_kutta_dopri5<OdeState>());
  const double r0 = 1e-4;
  stepper.initialize(taylor_start(f, a, r0), r0, 1e-3);
  while (stepper.current_time() < r_end) {
    stepper.do_step(f);
    const auto& y = stepper.current_state();
    if (r_event) *r_event = stepper.current_time();
    if (y[0] < 0.0) return ShotOutcome::crossed;
    if (y[1] > 0.0) return ShotOutcome::turned_up;
  }
  return ShotOutcome::undecided;
}

/// Samples of the trajectory on [from, to] at spacing h (to < from allowed).
inline void sweep(const NlsRhs& f, OdeState y, double from, double to, double h, double tol, std::vector<double>& rs,
                  std::vector<OdeState>& ys) {
  namespace ode = boost::numeric::odeint;
  const int steps = static_cast<int>(std::lround(std::abs(to - from) / h));
  const double dir = to > from ? 1.0 : -1.0;
  rs.clear();
  ys.clear();
  auto stepper = ode::make_controlled(1e-40, tol, ode::runge_kutta_dopri5<OdeState>());
  ode::integrate_n_steps(stepper, f, y, from, dir * h, steps, [&](const OdeState& s, double r) {
    rs.push_back(r);
    ys.push_back(s);
  });
}

}  // namespace detail

inline BoundState bound_state_solve(int n, double mu, double p, const ShootingOptions& opt = {}) {
  require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
  require(mu > 0.25 * n * n, ErrorCode::precondition, "need mu > n^2/4");
  require(p > 0.0 && (n == 1 || p < 4.0 / (n - 1)), ErrorCode::precondition, "need 0 < p < 4/(n-1)");
  require(opt.r_max > 4.0 && opt.step > 0.0, ErrorCode::precondition, "shooting needs r_max > 4 and step > 0");
  const detail::NlsRhs f{n, mu - 0.25 * n * n, p};
  const double R = opt.r_max;

  // bracket: small data turns up, large data crosses zero
  double lo = 0.0, hi = 0.0;
  bool have_lo = false, have_hi = false;
  for (double a = 1e-4; a < 1e6 && !(have_lo && have_hi); a *= 1.5) {
    const auto out = detail::shoot(f, a, R, 1e-10);
    if (out == detail::ShotOutcome::turned_up) {
      lo = a;
      have_lo = true;
    } else if (out == detail::ShotOutcome::crossed && have_lo) {
      hi = a;
      have_hi = true;
    }
  }
  if (!have_lo || !have_hi) fail(ErrorCode::no_ground_state, "could not bracket a decaying trajectory");

  BoundState s;
  s.n = n;
  s.mu = mu;
  s.p = p;
  double prev_width = hi - lo;
  while (hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const auto out = detail::shoot(f, mid, R, opt.ode_tol);
    if (out == detail::ShotOutcome::undecided) {
      lo = hi = mid;
      break;
    }
    (out == detail::ShotOutcome::turned_up ? lo : hi) = mid;
    ++s.bisection_steps;
    require(hi - lo < prev_width, ErrorCode::nonconvergence, "bisection bracket failed to shrink");
    prev_width = hi - lo;
  }
  s.bracket_width = hi - lo;
  if (s.bracket_width > opt.tol) fail(ErrorCode::no_ground_state, "bracket on Psi(0) did not reach tolerance");
  const double a = 0.5 * (lo + hi);
  s.psi0 = a;

  // the bracket trajectories part ways at r_dev; trust the outward sweep well before that
  double r_lo = R, r_hi = R;
  detail::shoot(f, lo, R, opt.ode_tol, &r_lo);
  detail::shoot(f, hi, R, opt.ode_tol, &r_hi);
  const double r_dev = std::min(r_lo, r_hi);
  const double h = opt.step;
  double rm = std::max(1.0, std::floor(0.5 * r_dev / h) * h);
  rm = std::min(rm, 0.5 * R);
  s.match_radius = rm;

  // outward on [r0, rm]
  std::vector<double> ro, ri;
  std::vector<detail::OdeState> yo, yi;
  const double r0 = 1e-4;
  {
    namespace ode = boost::numeric::odeint;
    auto stepper = ode::make_controlled(1e-40, opt.ode_tol, ode::runge_kutta_dopri5<detail::OdeState>());
    auto y = detail::taylor_start(f, a, r0);
    const int steps = static_cast<int>(std::lround(rm / h));
    ro.push_back(0.0);
    yo.push_back({a, 0.0});
    std::vector<double> grid{r0};
    for (int k = 1; k <= steps; ++k) grid.push_back(k * h);
    ode::integrate_times(stepper, f, y, grid.begin(), grid.end(), 1e-3, [&](const detail::OdeState& st, double t) {
      if (t > r0) {
        ro.push_back(t);
        yo.push_back(st);
      }
    });
  }

  // shooting error grows like e^{2 sqrt(mu) r} against the decaying profile; match where Psi ~ 1e-2 Psi(0)
  for (std::size_t k = 1; k < yo.size(); ++k)
    if (yo[k][0] < 1e-2 * a) {
      ro.resize(k + 1);
      yo.resize(k + 1);
      break;
    }
  rm = ro.back();
  s.match_radius = rm;

  // inward from R with the decaying linear solution, amplitude c fitted to Psi(rm)
  const cplx sig(std::sqrt(mu), 0.0);
  const double dR = 1e-5;
  const double gR = free_resolvent(n, sig, R).real();
  const double dgR = (free_resolvent(n, sig, R + dR).real() - free_resolvent(n, sig, R - dR).real()) / (2.0 * dR);
  const double target = yo.back()[0];
  auto inward = [&](double c) {
    detail::sweep(f, {c * gR, c * dgR}, R, rm, h, opt.ode_tol, ri, yi);
    return yi.back()[0] - target;
  };
  double c0 = target / free_resolvent(n, sig, rm).real(), c1 = 1.01 * c0;
  double f0 = inward(c0), f1 = inward(c1);
  for (int it = 0; it < 60 && std::abs(f1) > 1e-15 * std::abs(target) && f1 != f0; ++it) {
    const double c2 = c1 - f1 * (c1 - c0) / (f1 - f0);
    c0 = c1;
    f0 = f1;
    c1 = c2;
    f1 = inward(c1);
  }
  inward(c1);
  s.tail_amplitude = c1;
  s.derivative_mismatch = std::abs(yi.back()[1] - yo.back()[1]) / std::abs(yo.back()[1]);
  if (s.derivative_mismatch > 1e-5) fail(ErrorCode::nonconvergence, "outward and inward sweeps do not match");

  for (std::size_t k = 0; k < ro.size(); ++k) {
    s.r.push_back(ro[k]);
    s.psi.push_back(yo[k][0]);
    s.dpsi.push_back(yo[k][1]);
  }
  for (std::size_t k = ri.size() - 1; k-- > 0;) {  // skip the duplicate at rm
    s.r.push_back(ri[k]);
    s.psi.push_back(yi[k][0]);
    s.dpsi.push_back(yi[k][1]);
  }
  for (std::size_t k = 0; k < s.r.size(); ++k) s.r[k] = k * h;  // remove drift in the observer times

  // decay fit
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (std::size_t k = 0; k < s.r.size(); ++k) {
    if (s.r[k] < opt.fit_lo || s.r[k] > std::min(opt.fit_hi, R)) continue;
    const double y = -std::log(s.psi[k]);
    sx += s.r[k];
    sy += y;
    sxx += s.r[k] * s.r[k];
    sxy += s.r[k] * y;
    ++cnt;
  }
  if (cnt >= 2) s.decay_rate = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  return s;
}

/// Pointwise ODE residual from sixth-order differences of the samples (even reflection at 0),
/// max over [r_lo, r_hi].
inline double bound_state_residual(const BoundState& s, double r_lo, double r_hi) {
  const double h = s.step();
  const double k2 = s.mu - 0.25 * s.n * s.n;
  const long N = static_cast<long>(s.r.size());
  auto y = [&](long i) { return s.psi[static_cast<std::size_t>(std::abs(i))]; };
  double worst = 0.0;
  for (long i = 1; i + 3 < N; ++i) {
    const double x = s.r[static_cast<std::size_t>(i)];
    if (x < r_lo || x > r_hi) continue;
    const double d2 = (2 * y(i - 3) - 27 * y(i - 2) + 270 * y(i - 1) - 490 * y(i) + 270 * y(i + 1) - 27 * y(i + 2) +
                       2 * y(i + 3)) / (180 * h * h);
    const double d1 = (-y(i - 3) + 9 * y(i - 2) - 45 * y(i - 1) + 45 * y(i + 1) - 9 * y(i + 2) + y(i + 3)) / (60 * h);
    const double res = d2 + s.n * d1 / std::tanh(x) - k2 * y(i) + std::pow(y(i), s.p + 1.0);
    worst = std::max(worst, std::abs(res));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Matrix potential and spectral points.

struct MatrixPotential {
  int n = 2;
  double mu = 2.0;
  std::function<double(double)> V1, V2;
  double alpha = 1.0;
  double v0 = 0.0;  // |V1|, |V2| <= v0 e^{-alpha r}

  bool is_zero() const { return v0 == 0.0; }
  static MatrixPotential zero(int n, double mu, double alpha = 2.0) {
    MatrixPotential V;
    V.n = n;
    V.mu = mu;
    V.V1 = [](double) { return 0.0; };
    V.V2 = [](double) { return 0.0; };
    V.alpha = alpha;
    return V;
  }
  /// Certified bound from samples on [0, r_max] (the profiles must decay at least like e^{-alpha r} beyond).
  void certify(double r_max = 30.0, int samples = 3000) {
    v0 = 0.0;
    for (int k = 0; k <= samples; ++k) {
      const double r = r_max * k / samples;
      v0 = std::max({v0, std::abs(V1(r)) * std::exp(alpha * r), std::abs(V2(r)) * std::exp(alpha * r)});
    }
  }
};

/// V1 = beta(Psi^2) + beta'(Psi^2) Psi^2, V2 = beta'(Psi^2) Psi^2 with beta(x) = x^{p/2},
/// for the bound state scaled by `amplitude`.
inline MatrixPotential linearize(const BoundState& s, double amplitude = 1.0) {
  require(amplitude > 0.0, ErrorCode::precondition, "amplitude must be > 0");
  MatrixPotential V;
  V.n = s.n;
  V.mu = s.mu;
  const double p = s.p;
  auto psi = std::make_shared<BoundState>(s);
  V.V1 = [psi, p, amplitude](double r) { return (1.0 + 0.5 * p) * std::pow(amplitude * std::max((*psi)(r), 0.0), p); };
  V.V2 = [psi, p, amplitude](double r) { return 0.5 * p * std::pow(amplitude * std::max((*psi)(r), 0.0), p); };
  // strictly below p (n/2 + sqrt(mu))
  V.alpha = 0.9 * p * (0.5 * s.n + std::sqrt(s.mu));
  V.certify(std::max(30.0, s.r_max()));
  return V;
}

enum class Side { PlusI0, MinusI0 };

/// m = +-(mu + tau^2), approached from above (PlusI0) or below.
struct MassPoint {
  double m = 0.0, tau = 0.0;
  Side side = Side::PlusI0;
  static MassPoint from_mass(double m, double mu, Side side = Side::PlusI0) {
    if (!(std::abs(m) > mu)) fail(ErrorCode::spectral_gap, "|m| must exceed mu (m = " + std::to_string(m) + ")");
    return {m, std::sqrt(std::abs(m) - mu), side};
  }
  static MassPoint from_tau(double tau, double mu, bool upper = true, Side side = Side::PlusI0) {
    require(tau > 0.0, ErrorCode::precondition, "tau must be > 0");
    return {upper ? mu + tau * tau : -mu - tau * tau, tau, side};
  }
};

/// (sigma_1, sigma_2) with (H_0 - z)^{-1} = diag(R_0(n/2 + sigma_1), -R_0(n/2 + sigma_2)).
struct BlockSigmas {
  cplx s1, s2;
};

inline BlockSigmas block_sigmas(double mu, const MassPoint& pt) {
  const double t = pt.tau, far = std::sqrt(2.0 * mu + t * t);
  const double sgn = pt.side == Side::PlusI0 ? 1.0 : -1.0;
  if (pt.m > 0.0) return {cplx(0.0, -sgn * t), cplx(far, 0.0)};
  return {cplx(far, 0.0), cplx(0.0, sgn * t)};
}

/// Off the continuum: principal roots of mu -+ z.
inline BlockSigmas block_sigmas(double mu, cplx z) {
  const bool on_cut = std::abs(z.imag()) == 0.0 && std::abs(z.real()) >= mu;
  if (on_cut) fail(ErrorCode::spectral_gap, "z lies on the continuous spectrum; use a MassPoint");
  return {std::sqrt(mu - z), std::sqrt(mu + z)};
}

/// 2N x 2N operator on pairs of radial functions, quadrature-folded.
struct BlockOp {
  std::shared_ptr<const RadialGrid> grid;
  CMatrix matrix;
  long half() const { return matrix.rows() / 2; }
  CMatrix block(int i, int j) const { return matrix.block(i * half(), j * half(), half(), half()); }
  Eigen::VectorXd measure() const {
    const long N = half();
    Eigen::VectorXd m(2 * N);
    for (long i = 0; i < N; ++i) m[i] = m[i + N] = grid->measure(static_cast<std::size_t>(i));
    return m;
  }
};

namespace detail {
// Purely decaying kernels concentrate on the diagonal panel, where the Galerkin block is exact;
// the coarse-grid heuristic is meant for oscillation and would reject them.
inline RadialKernelOp discretize_block(int n, cplx sigma, const RadialGrid& grid) {
  DiscretizeOptions opt;
  if (sigma.imag() == 0.0) opt.coarse_limit = infinity;
  return discretize(resolvent_kernel(n, sigma), grid, opt);
}
}  // namespace detail

inline BlockOp h0_block(int n, const BlockSigmas& s, const RadialGrid& grid) {
  const auto a = detail::discretize_block(n, s.s1, grid), b = detail::discretize_block(n, s.s2, grid);
  const long N = static_cast<long>(grid.size());
  BlockOp op;
  op.grid = a.grid;
  op.matrix = CMatrix::Zero(2 * N, 2 * N);
  op.matrix.topLeftCorner(N, N) = a.matrix;
  op.matrix.bottomRightCorner(N, N) = -b.matrix;
  return op;
}

inline BlockOp h0_resolvent(int n, double mu, const MassPoint& pt, const RadialGrid& grid) {
  if (!(std::abs(pt.m) > mu)) fail(ErrorCode::spectral_gap, "|m| must exceed mu");
  return h0_block(n, block_sigmas(mu, pt), grid);
}

inline BlockOp h0_resolvent_at(int n, double mu, cplx z, const RadialGrid& grid) {
  return h0_block(n, block_sigmas(mu, z), grid);
}

namespace detail {

/// LU of rho^{-a/2}(I + R_{H0} V)rho^{a/2} for the matrix potential.
struct MatrixSystem {
  BlockSigmas sig;
  RadialKernel k1, k2;
  BlockOp r0;
  Eigen::VectorXd v1, v2, w;
  CMatrix r0v;  // R_{H0} V, folded
  Eigen::PartialPivLU<CMatrix> lu;
  cplx det{1.0};

  MatrixSystem(const MatrixPotential& V, const BlockSigmas& s, const RadialGrid& g) : sig(s) {
    k1 = resolvent_kernel(V.n, s.s1);
    k2 = resolvent_kernel(V.n, s.s2);
    r0 = h0_block(V.n, s, g);
    const long N = static_cast<long>(g.size());
    v1.resize(N);
    v2.resize(N);
    w.resize(N);
    for (long i = 0; i < N; ++i) {
      const double r = g.r[static_cast<std::size_t>(i)];
      v1[i] = V.V1(r);
      v2[i] = V.V2(r);
      w[i] = std::exp(-0.5 * V.alpha * r);
    }
    CMatrix Vm = CMatrix::Zero(2 * N, 2 * N);
    Vm.topLeftCorner(N, N).diagonal() = -v1.cast<cplx>();
    Vm.topRightCorner(N, N).diagonal() = -v2.cast<cplx>();
    Vm.bottomLeftCorner(N, N).diagonal() = v2.cast<cplx>();
    Vm.bottomRightCorner(N, N).diagonal() = v1.cast<cplx>();
    r0v = r0.matrix * Vm;
    Eigen::VectorXd ww(2 * N);
    ww << w, w;
    CMatrix A = ww.cwiseInverse().asDiagonal() * r0v * ww.asDiagonal();
    A += CMatrix::Identity(2 * N, 2 * N);
    lu.compute(A);
    det = lu.determinant();
    wfull = ww;
  }

  CMatrix solve(const CMatrix& b) const {
    return wfull.asDiagonal() * lu.solve((wfull.cwiseInverse().asDiagonal() * b).eval());
  }

  /// V applied to a 2N x k block.
  CMatrix apply_v(const CMatrix& x) const {
    const long N = v1.size();
    CMatrix out(x.rows(), x.cols());
    out.topRows(N) = -(v1.asDiagonal() * x.topRows(N)) - v2.asDiagonal() * x.bottomRows(N);
    out.bottomRows(N) = v2.asDiagonal() * x.topRows(N) + v1.asDiagonal() * x.bottomRows(N);
    return out;
  }

  Eigen::VectorXd wfull;
};

inline void require_regular(cplx det, double m) {
  if (!(std::abs(det) >= 1e-10))
    fail(ErrorCode::near_resonance, "matrix Fredholm determinant below 1e-10 near m = " + std::to_string(m));
}

}  // namespace detail

inline cplx matrix_determinant(const MatrixPotential& V, const MassPoint& pt, const RadialGrid& grid) {
  if (!(std::abs(pt.m) > V.mu)) fail(ErrorCode::spectral_gap, "|m| must exceed mu");
  if (V.is_zero()) return 1.0;
  return detail::MatrixSystem(V, block_sigmas(V.mu, pt), grid).det;
}

/// (H - (m +- i0))^{-1} = (I + (H_0 - z)^{-1} V)^{-1} (H_0 - z)^{-1}.
inline BlockOp matrix_rv(const MatrixPotential& V, const MassPoint& pt, const RadialGrid& grid) {
  if (!(std::abs(pt.m) > V.mu)) fail(ErrorCode::spectral_gap, "|m| must exceed mu");
  const detail::MatrixSystem sys(V, block_sigmas(V.mu, pt), grid);
  if (V.is_zero()) return sys.r0;
  detail::require_regular(sys.det, pt.m);
  BlockOp op = sys.r0;
  op.matrix = sys.solve(sys.r0.matrix);
  return op;
}

/// V as a 2N x 2N matrix on the grid (for identities in tests and diagnostics).
inline CMatrix matrix_potential_on(const MatrixPotential& V, const RadialGrid& g) {
  const long N = static_cast<long>(g.size());
  CMatrix Vm = CMatrix::Zero(2 * N, 2 * N);
  for (long i = 0; i < N; ++i) {
    const double r = g.r[static_cast<std::size_t>(i)];
    Vm(i, i) = -V.V1(r);
    Vm(i, N + i) = -V.V2(r);
    Vm(N + i, i) = V.V2(r);
    Vm(N + i, N + i) = V.V1(r);
  }
  return Vm;
}

struct MatrixScan {
  std::vector<double> m;
  std::vector<cplx> det;
  double min_modulus = infinity;
  double argmin = 0.0;
  bool clean(double floor = 1e-3) const { return min_modulus > floor; }
};

/// Determinant along one branch: m = +-(mu + tau^2) for tau spaced evenly in m on [|m_lo|, |m_hi|].
inline MatrixScan matrix_det_scan(const MatrixPotential& V, double m_lo, double m_hi, int samples, const RadialGrid& grid) {
  require(samples >= 2 && m_hi > m_lo, ErrorCode::precondition, "scan needs m_hi > m_lo and >= 2 samples");
  require((m_lo > V.mu) || (m_hi < -V.mu), ErrorCode::spectral_gap, "scan range must lie on one branch |m| > mu");
  MatrixScan out;
  out.m.resize(static_cast<std::size_t>(samples));
  out.det.resize(out.m.size());
  for (int k = 0; k < samples; ++k) out.m[k] = m_lo + (m_hi - m_lo) * k / (samples - 1);
  parallel_for(samples, [&](long k) {
    out.det[k] = matrix_determinant(V, MassPoint::from_mass(out.m[k], V.mu), grid);
  });
  for (std::size_t k = 0; k < out.m.size(); ++k)
    if (std::abs(out.det[k]) < out.min_modulus) {
      out.min_modulus = std::abs(out.det[k]);
      out.argmin = out.m[k];
    }
  return out;
}

namespace detail {

/// Correction U(x) = R_H(x, 0) - R_{H0}(x, 0) for sources at the origin in each component.
inline std::vector<Eigen::Matrix2cd> matrix_origin_correction(const MatrixPotential& V, const MassPoint& pt,
                                                              const RadialGrid& g, std::span<const double> radii,
                                                              cplx* det_out = nullptr) {
  std::vector<Eigen::Matrix2cd> out(radii.size(), Eigen::Matrix2cd::Zero());
  if (V.is_zero()) {
    if (det_out) *det_out = 1.0;
    return out;
  }
  const MatrixSystem sys(V, block_sigmas(V.mu, pt), g);
  if (det_out) *det_out = sys.det;
  require_regular(sys.det, pt.m);
  const long N = static_cast<long>(g.size());
  CMatrix F = CMatrix::Zero(2 * N, 2);
  for (long j = 0; j < N; ++j) {
    const double r = g.r[static_cast<std::size_t>(j)];
    F(j, 0) = sys.k1.outer(r);
    F(N + j, 1) = -sys.k2.outer(r);
  }
  const CMatrix U = -sys.solve(sys.r0v * F);
  const CMatrix G = sys.apply_v(F + U);
  for (std::size_t k = 0; k < radii.size(); ++k) {
    const auto W1 = row_weights(sys.k1, g, radii[k]), W2 = row_weights(sys.k2, g, radii[k]);
    Eigen::Matrix2cd u = Eigen::Matrix2cd::Zero();
    for (long j = 0; j < N; ++j)
      for (int c = 0; c < 2; ++c) {
        u(0, c) -= W1[static_cast<std::size_t>(j)] * G(j, c);
        u(1, c) += W2[static_cast<std::size_t>(j)] * G(N + j, c);
      }
    out[k] = u;
  }
  return out;
}

}  // namespace detail

/// Im R_H(m + i0; x, 0) entrywise, free part included (finite at x = 0).
inline std::vector<Eigen::Matrix2d> im_matrix_column(const MatrixPotential& V, const MassPoint& pt,
                                                     const RadialGrid& grid, std::span<const double> radii) {
  const auto u = detail::matrix_origin_correction(V, pt, grid, radii);
  const BlockSigmas s = block_sigmas(V.mu, pt);
  std::vector<Eigen::Matrix2d> out(radii.size());
  for (std::size_t k = 0; k < radii.size(); ++k) {
    Eigen::Matrix2d m = u[k].imag();
    // free part: only the oscillatory block has an imaginary part
    if (s.s1.real() == 0.0) m(0, 0) += (s.s1.imag() > 0 ? 1.0 : -1.0) * im_r0_critical(V.n, pt.tau, radii[k]);
    if (s.s2.real() == 0.0) m(1, 1) -= (s.s2.imag() > 0 ? 1.0 : -1.0) * im_r0_critical(V.n, pt.tau, radii[k]);
    out[k] = m;
  }
  return out;
}

struct MatrixPropagatorOptions {
  double tau_max = 12.0;  // Filon range for the correction; beyond it integration by parts
  double chi_scale = 1.0;
  double tail_tol = 1e-10;
  OscillatoryOptions osc{};
  std::optional<RadialGrid> grid;
};

struct MatrixKernelSample {
  Eigen::Matrix2cd total = Eigen::Matrix2cd::Zero();
  Eigen::Matrix2cd high = Eigen::Matrix2cd::Zero();  // (1 - chi(tau)) part
};

/// Kernel of e^{itH} P_c with source at the origin, evaluated at a fixed set of radii.
/// Upper branch m = mu + tau^2 is tabulated; the lower one follows from
/// sigma_1 H sigma_1 = -H:  K = K_up + sigma_1 conj(K_up) sigma_1.
class MatrixPropagator {
 public:
  MatrixPropagator(MatrixPotential V, std::vector<double> radii, MatrixPropagatorOptions opt = {})
      : V_(std::move(V)), radii_(std::move(radii)), opt_(std::move(opt)) {
    require(!radii_.empty(), ErrorCode::precondition, "need at least one radius");
    for (double r : radii_) require(r >= 0.0, ErrorCode::precondition, "radius must be >= 0");
    osc_ = std::max(1.0, *std::max_element(radii_.begin(), radii_.end()));
    const double L = opt_.tau_max;
    double hw = 0.0;
    patch_ = detail::ibp_patch(L, osc_, opt_.osc, &hw);
    if (opt_.grid) {
      grid_ = *opt_.grid;
    } else {
      PotentialSpec proxy = PotentialSpec::exponential(V_.v0, V_.alpha);
      grid_ = perturbation_grid(V_.n, proxy, L + hw);
    }
    filon_.emplace(0.0, L, detail::panel_width(osc_, opt_.osc), opt_.osc.panel_order);
    taus_ = filon_->nodes();
    taus_.insert(taus_.end(), patch_.begin(), patch_.end());
    table_.assign(taus_.size(), std::vector<Eigen::Matrix2d>(radii_.size(), Eigen::Matrix2d::Zero()));
    dets_.assign(taus_.size(), cplx{1.0});
    if (!V_.is_zero()) {
      parallel_for(static_cast<long>(taus_.size()), [&](long j) {
        const auto pt = MassPoint::from_tau(taus_[j], V_.mu);
        const auto u = detail::matrix_origin_correction(V_, pt, grid_, radii_, &dets_[j]);
        for (std::size_t k = 0; k < radii_.size(); ++k) table_[j][k] = u[k].imag();
      });
    }
  }

  const std::vector<double>& radii() const { return radii_; }
  const RadialGrid& grid() const { return grid_; }
  double min_det_modulus() const {
    double m = infinity;
    for (auto d : dets_) m = std::min(m, std::abs(d));
    return m;
  }

  /// Upper-branch contribution alone.
  MatrixKernelSample upper(double t, std::size_t k) const {
    require(t >= 1.0, ErrorCode::precondition, "matrix propagator needs t >= 1");
    require(k < radii_.size(), ErrorCode::precondition, "radius index out of range");
    const double r = radii_[k];
    const int n = V_.n;
    MatrixKernelSample s;
    const cplx shift = std::exp(cplx(0.0, t * (V_.mu - 0.25 * n * n)));
    s.total(0, 0) = shift * free_propagator_kernel(n, t, r, opt_.osc);
    s.high(0, 0) = shift * free_propagator_kernel(n, t, r, opt_.osc, opt_.chi_scale);
    if (V_.is_zero()) return s;
    const auto w = filon_->weights(t);
    Eigen::Matrix2cd tot = Eigen::Matrix2cd::Zero(), hi = Eigen::Matrix2cd::Zero();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double tau = taus_[j];
      const Eigen::Matrix2cd g = (2.0 * tau / pi * table_[j][k]).cast<cplx>();
      tot += w[j] * g;
      hi += (w[j] * (1.0 - smooth_cutoff(tau / opt_.chi_scale))) * g;
    }
    const std::size_t off = w.size();
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        std::vector<cplx> T(patch_.size());
        for (std::size_t j = 0; j < patch_.size(); ++j) T[j] = 2.0 * patch_[j] / pi * table_[off + j][k](a, b);
        const auto tail = detail::ibp_tail_from_samples(std::move(T), patch_, opt_.tau_max, t, opt_.osc, opt_.tail_tol);
        if (tail.last > std::max(opt_.tail_tol, 1e-6 * std::abs(tot(a, b))))
          fail(ErrorCode::tail_budget, "integrated-by-parts remainder exceeds tolerance");
        tot(a, b) += tail.value;
        hi(a, b) += tail.value;
      }
    const cplx ph = std::exp(cplx(0.0, t * V_.mu));
    s.total += ph * tot;
    s.high += ph * hi;
    return s;
  }

  MatrixKernelSample operator()(double t, std::size_t k) const {
    MatrixKernelSample s = upper(t, k);
    Eigen::Matrix2cd sw;
    sw << 0, 1, 1, 0;
    s.total = s.total + sw * s.total.conjugate() * sw;
    s.high = s.high + sw * s.high.conjugate() * sw;
    return s;
  }

 private:
  MatrixPotential V_;
  std::vector<double> radii_;
  MatrixPropagatorOptions opt_;
  double osc_ = 1.0;
  RadialGrid grid_;
  std::optional<FilonGrid> filon_;
  std::vector<double> patch_, taus_;
  std::vector<std::vector<Eigen::Matrix2d>> table_;
  std::vector<cplx> dets_;
};

inline Eigen::Matrix2cd matrix_propagator(const MatrixPotential& V, double t, double r,
                                          const MatrixPropagatorOptions& opt = {}) {
  require(t >= 1.0, ErrorCode::precondition, "matrix propagator needs t >= 1");
  return MatrixPropagator(V, {r}, opt)(t, 0).total;
}

}  // namespace hyperdisp
