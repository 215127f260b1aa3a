#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "airy.hpp"
#include "error.hpp"
#include "numerics.hpp"

namespace reslab::wkb {

// Conventions: the equation is (V - (h d/dx)^2) y = 0, i.e. ((hD)^2 + V) y = 0 with D = -i d/dx.
// Phases are real-exponential: y ~ a e^{phi/h} with phi'^2 = V - z. The transport equations then
// read 2 phi' a_j' + phi'' a_j = -a_{j-1}'', which is (T_j) after phi -> i phi.

// Holomorphic function with optional exact derivatives; Cauchy integrals fill in the rest.
inline cplx cauchy_derivative(const std::function<cplx(cplx)>& f, cplx x, int order, double r, int m = 32) {
  cplx acc = 0.0;
  for (int k = 0; k < m; ++k) {
    cplx e = std::polar(1.0, 2 * pi * k / m);
    acc += f(x + r * e) * std::pow(e, -order);
  }
  return std::tgamma(order + 1.0) * acc / (m * std::pow(r, order));
}

struct Analytic {
  std::function<cplx(cplx)> f, df, ddf;
  double radius = 1e-2;

  cplx operator()(cplx x) const { return f(x); }
  cplx d1(cplx x) const { return df ? df(x) : cauchy_derivative(f, x, 1, radius); }
  cplx d2(cplx x) const { return ddf ? ddf(x) : cauchy_derivative(f, x, 2, radius); }
  Analytic shifted(cplx z) const {
    Analytic g = *this;
    auto base = f;
    g.f = [base, z](cplx x) { return base(x) - z; };
    return g;
  }
};

inline Analytic polynomial(std::vector<cplx> c, cplx center = 0.0) {
  Analytic a;
  a.f = [c, center](cplx x) {
    cplx s = 0.0;
    for (size_t k = c.size(); k-- > 0;) s = s * (x - center) + c[k];
    return s;
  };
  a.df = [c, center](cplx x) {
    cplx s = 0.0;
    for (size_t k = c.size(); k-- > 1;) s = s * (x - center) + double(k) * c[k];
    return s;
  };
  a.ddf = [c, center](cplx x) {
    cplx s = 0.0;
    for (size_t k = c.size(); k-- > 2;) s = s * (x - center) + double(k * (k - 1)) * c[k];
    return s;
  };
  return a;
}

inline double taylor_radius(double h, double delta = 0.1) { return std::pow(h, 2.0 / 3.0 - delta); }

// Degree-n polynomial interpolating a real (possibly non-analytic) V on Chebyshev points of
// [x0 - radius, x0 + radius], written around x0.
inline Analytic taylor_extension(const std::function<double(double)>& V, double x0, double radius, int degree = 8) {
  if (!(radius > 0)) fail_validation("taylor_extension: radius must be > 0");
  const int n = degree;
  Eigen::MatrixXd A(n + 1, n + 1);
  Eigen::VectorXd b(n + 1);
  for (int j = 0; j <= n; ++j) {
    double s = std::cos(pi * (j + 0.5) / (n + 1));
    for (int k = 0; k <= n; ++k) A(j, k) = std::pow(s, k);
    b[j] = V(x0 + radius * s);
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  std::vector<cplx> coef(n + 1);
  for (int k = 0; k <= n; ++k) coef[k] = c[k] / std::pow(radius, k);
  return polynomial(coef, x0);
}

// Path t -> x(t), t in [0, 1], sampled on Chebyshev-Lobatto nodes in t.
struct Path {
  std::function<cplx(double)> x, dx;

  static Path straight(cplx a, cplx b) {
    return {[=](double t) { return a + t * (b - a); }, [=](double) { return b - a; }};
  }
  // Logarithmic grading toward z0: x = z0 + (a - z0) exp(t L), a straight segment when a, b and z0
  // are collinear with z0 outside [a, b].
  static Path graded(cplx z0, cplx a, cplx b) {
    cplx L = std::log((b - z0) / (a - z0));
    return {[=](double t) { return z0 + (a - z0) * std::exp(t * L); },
            [=](double t) { return L * (a - z0) * std::exp(t * L); }};
  }
};

struct Grid {
  int n = 0;
  std::vector<double> t;
  std::vector<cplx> x, dx;
  RMatrix Dt, Ct;  // d/dt and int_0^t on the nodes

  int size() const { return n + 1; }
};

inline Grid make_grid(const Path& p, int n) {
  if (n < 8) fail_validation("wkb: need at least 8 Chebyshev nodes");
  Grid g;
  g.n = n;
  RVector xi = cheb::lobatto(n);
  for (int j = 0; j <= n; ++j) {
    double t = 0.5 * (1.0 - xi[j]);
    if (j == 0) t = 0.0;
    if (j == n) t = 1.0;
    g.t.push_back(t);
    g.x.push_back(p.x(t));
    g.dx.push_back(p.dx(t));
  }
  g.Dt = -2.0 * cheb::diff_matrix(n);
  RMatrix C = cheb::cumsum_matrix(n);
  g.Ct = RMatrix(n + 1, n + 1);
  for (int j = 0; j <= n; ++j) g.Ct.row(j) = 0.5 * (C.row(0) - C.row(j));
  return g;
}

// Barycentric interpolation of node values at parameter t.
inline cplx interpolate(const Grid& g, const std::vector<cplx>& v, double t) {
  cplx num = 0.0;
  double den = 0.0;
  for (int j = 0; j <= g.n; ++j) {
    double d = t - g.t[j];
    if (d == 0.0) return v[j];
    double w = ((j % 2) ? -1.0 : 1.0) * ((j == 0 || j == g.n) ? 0.5 : 1.0) / d;
    num += w * v[j];
    den += w;
  }
  return num / den;
}

inline std::vector<cplx> matvec(const RMatrix& M, const std::vector<cplx>& v) {
  CVector in = Eigen::Map<const CVector>(v.data(), Eigen::Index(v.size()));
  CVector out = M.cast<cplx>() * in;
  return {out.data(), out.data() + out.size()};
}

// d/dx of node values along the path.
inline std::vector<cplx> ddx(const Grid& g, const std::vector<cplx>& v) {
  auto d = matvec(g.Dt, v);
  for (int j = 0; j <= g.n; ++j) d[j] /= g.dx[j];
  return d;
}

// Square root continued along a sampled curve from a chosen first value.
inline cplx continue_sqrt(cplx w, cplx previous) {
  cplx r = std::sqrt(w);
  return std::abs(r - previous) <= std::abs(r + previous) ? r : -r;
}

struct PhaseFunction {
  Grid grid;
  std::vector<cplx> W;     // V - z at the nodes
  std::vector<cplx> phi;   // phi(start) = 0
  std::vector<cplx> dphi;  // phi' = (V - z)^{1/2} on the tracked branch
  int sign = 1;            // branch at the start relative to the principal root
  std::string branch_tag = "principal, cut along the negative reals, continued along the path";

  double eiconal_residual() const {
    double r = 0;
    for (size_t j = 0; j < W.size(); ++j)
      r = std::max(r, std::abs(dphi[j] * dphi[j] - W[j]) / std::max(1.0, std::abs(W[j])));
    return r;
  }
};

inline PhaseFunction solve_eiconal(const Analytic& V, cplx z, const Path& path, int sign = 1, int n = 64,
                                   double tp_tol = 1e-8) {
  if (sign != 1 && sign != -1) fail_validation("solve_eiconal: sign must be +1 or -1");
  PhaseFunction p;
  p.grid = make_grid(path, n);
  p.sign = sign;
  const auto& g = p.grid;
  cplx prev = 0.0;
  for (int j = 0; j <= g.n; ++j) {
    cplx w = V(g.x[j]) - z;
    if (std::abs(w) < tp_tol) fail_validation("solve_eiconal: turning point on the path");
    p.W.push_back(w);
    if (j == 0) {
      prev = double(sign) * std::sqrt(w);
    } else {
      // Sub-sample between nodes so the branch never jumps.
      for (int s = 1; s <= 8; ++s) {
        double t = g.t[j - 1] + (g.t[j] - g.t[j - 1]) * s / 8.0;
        prev = continue_sqrt(V(path.x(t)) - z, prev);
      }
    }
    p.dphi.push_back(prev);
  }
  std::vector<cplx> integrand(g.size());
  for (int j = 0; j <= g.n; ++j) integrand[j] = p.dphi[j] * g.dx[j];
  p.phi = matvec(g.Ct, integrand);
  return p;
}

struct WKBExpansion {
  PhaseFunction phase;
  int order = 0;
  std::vector<std::vector<cplx>> a;  // a[k][node], a_0 = (phi'(start)/phi')^{1/2}
  std::optional<cplx> z0;
  double bound_constant = 1.0;

  // a_k / a_0: the amplitudes once V^{-1/4} has moved into the exponent.
  std::vector<cplx> reduced(int k) const {
    std::vector<cplx> out(a[k].size());
    for (size_t j = 0; j < out.size(); ++j) out[j] = a[k][j] / a[0][j];
    return out;
  }
  double remainder_bound(cplx x, double h) const {
    if (!z0) return INFINITY;
    return bound_constant * std::pow(h, order + 1) * std::pow(std::abs(x - *z0), -1.5 * (order + 1));
  }
};

// a_j' comes from the transport equation itself, so each order costs one spectral derivative.
inline WKBExpansion transport_coefficients(const PhaseFunction& phase, const Analytic& V, int N,
                                           std::optional<cplx> z0 = std::nullopt) {
  if (N < 0) fail_validation("transport_coefficients: N must be >= 0");
  WKBExpansion e;
  e.phase = phase;
  e.order = N;
  e.z0 = z0;
  const auto& g = phase.grid;
  std::vector<cplx> q(g.size()), ql(g.size());  // (phi')^{1/2} continued along the path, and q'/q
  cplx prev = std::sqrt(phase.dphi[0]);
  for (int j = 0; j <= g.n; ++j) {
    if (std::abs(phase.dphi[j]) < 1e-14) fail_validation("transport_coefficients: phi' vanishes on the path");
    prev = continue_sqrt(phase.dphi[j], prev);
    q[j] = prev;
    ql[j] = V.d1(g.x[j]) / (4.0 * phase.W[j]);
  }
  std::vector<cplx> a(g.size()), da(g.size());
  for (int j = 0; j <= g.n; ++j) {
    a[j] = q[0] / q[j];
    da[j] = -ql[j] * a[j];
  }
  e.a.push_back(a);
  for (int k = 1; k <= N; ++k) {
    auto d2 = ddx(g, da);
    std::vector<cplx> f(g.size());
    for (int j = 0; j <= g.n; ++j) f[j] = -d2[j] / (2.0 * q[j]) * g.dx[j];
    auto F = matvec(g.Ct, f);
    for (int j = 0; j <= g.n; ++j) {
      a[j] = F[j] / q[j];
      da[j] = -d2[j] / (2.0 * q[j] * q[j]) - ql[j] * a[j];
    }
    e.a.push_back(a);
  }
  return e;
}

enum class Construction { volterra, direct_ode };

struct ExactSolution {
  std::vector<double> t;
  std::vector<cplx> x, y, hdy;
  Construction construction = Construction::direct_ode;
  // Volterra construction only: y = amplitude * a_0 * e^{phi/h}, remainder = amplitude - sum a_j h^j.
  std::vector<cplx> amplitude, remainder;
  std::vector<double> bound;
  int iterations = 0;
  // Evaluation off the stored nodes (direct_ode only).
  std::function<cplx(cplx)> V;
  double h = 0.0;

  double residual() const;  // max |h dy' - V y| relative, by finite differences along the nodes
  std::pair<cplx, cplx> at(cplx target, double step_over_h = 0.01) const {
    if (!V) fail_validation("ExactSolution::at: no operator attached");
    size_t best = 0;
    for (size_t k = 1; k < x.size(); ++k)
      if (std::abs(x[k] - target) < std::abs(x[best] - target)) best = k;
    int steps = std::max(4, int(std::ceil(std::abs(target - x[best]) / (step_over_h * h))));
    return integrate_segment(V, h, x[best], target, y[best], hdy[best], steps);
  }
  cplx operator()(cplx target) const { return at(target).first; }
};

inline double ExactSolution::residual() const {
  // Second-order central differences of h dy along the nodes against V y.
  double worst = 0, scale = 0;
  for (size_t k = 1; k + 1 < x.size(); ++k) {
    cplx d = (hdy[k + 1] - hdy[k - 1]) / (x[k + 1] - x[k - 1]) * h;
    worst = std::max(worst, std::abs(d - V(x[k]) * y[k]));
    scale = std::max(scale, std::abs(V(x[k]) * y[k]) + std::abs(d));
  }
  return scale > 0 ? worst / scale : 0.0;
}

struct VolterraSettings {
  int nodes = 20000;        // uniform in the path parameter
  int chebyshev = 64;       // transport grid
  std::optional<cplx> z0;   // nearest simple turning point, for the distance check and the bound
  double tp_constant = 1.0; // require |x - z0| >= h^{2/3} / tp_constant
  double tol = 1e-12;
  int max_iter = 50;
  double bound_constant = 1.0;
};

namespace detail {

// int_0^1 e^{-l tau} tau dtau and int_0^1 e^{-l tau}(1 - tau) dtau.
inline std::pair<cplx, cplx> exp_weights(cplx l) {
  if (std::abs(l) < 1e-3) {
    cplx A = 0.5 - l / 3.0 + l * l / 8.0 - l * l * l / 30.0;
    cplx total = 1.0 - l / 2.0 + l * l / 6.0 - l * l * l / 24.0;
    return {A, total - A};
  }
  cplx e = std::exp(-l);
  cplx A = (1.0 - e * (1.0 + l)) / (l * l);
  cplx total = (1.0 - e) / l;
  return {A, total - A};
}

}  // namespace detail

// Exact solution y = (a^N + r_N) e^{psi/h}, psi = phi - (h/4) ln V, of (V - (h d)^2) y = 0 by the
// Volterra form of the (u_+, u_-) system with initial data from the truncated expansion at the
// path start. The branch of V^{1/2} is the one with Re(V^{1/2} dx) >= 0 at the start.
inline ExactSolution exact_wkb_volterra(const Analytic& V, const Path& path, double h, int N,
                                        const VolterraSettings& s = {}) {
  if (!(h > 0)) fail_validation("exact_wkb_volterra: h must be > 0");
  cplx x0 = path.x(0.0), d0 = path.dx(0.0);
  int sign = (std::sqrt(V(x0)) * d0).real() >= 0 ? 1 : -1;
  PhaseFunction ph = solve_eiconal(V, 0.0, path, sign, s.chebyshev);
  const auto& g = ph.grid;
  for (int j = 0; j <= g.n; ++j) {
    cplx a = ph.dphi[j] * g.dx[j];
    if (a.real() < -1e-12 * std::abs(a)) fail_validation("exact_wkb_volterra: path violates Re V^{1/2} >= 0");
  }
  const int n = s.nodes;
  std::vector<double> t(n + 1);
  std::vector<cplx> x(n + 1), dx(n + 1);
  for (int k = 0; k <= n; ++k) {
    t[k] = double(k) / n;
    x[k] = path.x(t[k]);
    dx[k] = path.dx(t[k]);
    if (s.z0 && std::abs(x[k] - *s.z0) < (1 - 1e-12) * std::pow(h, 2.0 / 3.0) / s.tp_constant)
      fail_validation("exact_wkb_volterra: turning point too close to the path");
  }
  WKBExpansion ex = transport_coefficients(ph, V, N, s.z0);
  ex.bound_constant = s.bound_constant;
  // Truncated reduced amplitude and its x-derivative at the nodes of the transport grid.
  std::vector<cplx> aN(g.size(), 0.0);
  for (int k = 0; k <= N; ++k) {
    auto rk = ex.reduced(k);
    for (int j = 0; j <= g.n; ++j) aN[j] += std::pow(h, k) * rk[j];
  }
  auto daN = ddx(g, aN);
  std::vector<cplx> phi(n + 1), dphi(n + 1), a0(n + 1), aNf(n + 1), rho(n + 1), lv(n + 1);
  for (int k = 0; k <= n; ++k) {
    phi[k] = interpolate(g, ph.phi, t[k]);
    aNf[k] = interpolate(g, aN, t[k]);
    a0[k] = interpolate(g, ex.a[0], t[k]);
    cplx v = V(x[k]), v1 = V.d1(x[k]), v2 = V.d2(x[k]);
    dphi[k] = interpolate(g, ph.dphi, t[k]);
    cplx r = 0.25 * v2 / v - 5.0 / 16.0 * (v1 / v) * (v1 / v);
    rho[k] = r / (2.0 * dphi[k]);
    lv[k] = v1 / v;
  }
  // v_- at the start from matching h dy.
  cplx vm0 = -h * daN[0] / (2.0 * ph.dphi[0]);
  cplx vp0 = aN[0] - vm0;
  std::vector<cplx> vp(n + 1, vp0), vm(n + 1), A(n + 1);
  for (int k = 0; k <= n; ++k) {
    vm[k] = vm0 * std::exp(-2.0 * (phi[k] - phi[0]) / h);
    A[k] = vp[k] + vm[k];
  }
  ExactSolution out;
  out.construction = Construction::volterra;
  for (int it = 1; it <= s.max_iter; ++it) {
    std::vector<cplx> G(n + 1);
    for (int k = 0; k <= n; ++k) G[k] = rho[k] * A[k] * dx[k];
    cplx Ip = 0.0, Im = 0.0;
    std::vector<cplx> nvp(n + 1), nvm(n + 1);
    nvp[0] = vp0;
    nvm[0] = vm0;
    for (int k = 0; k < n; ++k) {
      double dt = t[k + 1] - t[k];
      Ip += 0.5 * dt * (G[k] + G[k + 1]);
      cplx l = 2.0 * (phi[k + 1] - phi[k]) / h;
      auto [wk, wk1] = detail::exp_weights(l);
      Im = std::exp(-l) * Im + dt * (wk * G[k] + wk1 * G[k + 1]);
      nvp[k + 1] = vp0 + h * Ip;
      nvm[k + 1] = vm0 * std::exp(-2.0 * (phi[k + 1] - phi[0]) / h) - h * Im;
    }
    double diff = 0, scale = 0;
    for (int k = 0; k <= n; ++k) {
      cplx a = nvp[k] + nvm[k];
      diff = std::max(diff, std::abs(a - A[k]));
      scale = std::max(scale, std::abs(a));
      A[k] = a;
    }
    vp.swap(nvp);
    vm.swap(nvm);
    out.iterations = it;
    if (diff <= s.tol * scale) break;
  }
  for (int k = 0; k <= n; ++k) {
    cplx e = a0[k] * std::exp(phi[k] / h);
    cplx psip = dphi[k] - 0.25 * h * lv[k], psim = -dphi[k] - 0.25 * h * lv[k];
    out.t.push_back(t[k]);
    out.x.push_back(x[k]);
    out.y.push_back(A[k] * e);
    out.hdy.push_back((vp[k] * psip + vm[k] * psim) * e);
    out.amplitude.push_back(A[k]);
    out.remainder.push_back(A[k] - aNf[k]);
    out.bound.push_back(ex.remainder_bound(x[k], h));
  }
  out.V = V.f;
  out.h = h;
  return out;
}

// RK4 for (h d/dx)^2 y = V y along a polyline, storing every vertex.
inline ExactSolution solve_direct(const std::function<cplx(cplx)>& V, const std::vector<cplx>& nodes, double h,
                                  cplx y0, cplx hdy0, double step_over_h = 0.01) {
  if (nodes.size() < 2) fail_validation("solve_direct: need at least two nodes");
  ExactSolution s;
  s.construction = Construction::direct_ode;
  s.V = V;
  s.h = h;
  cplx y = y0, hdy = hdy0;
  for (size_t k = 0; k < nodes.size(); ++k) {
    if (k > 0) {
      int steps = std::max(2, int(std::ceil(std::abs(nodes[k] - nodes[k - 1]) / (step_over_h * h))));
      std::tie(y, hdy) = integrate_segment(V, h, nodes[k - 1], nodes[k], y, hdy, steps);
    }
    s.t.push_back(double(k));
    s.x.push_back(nodes[k]);
    s.y.push_back(y);
    s.hdy.push_back(hdy);
  }
  return s;
}

// W(u1, u2) = (hD u1) u2 - u1 (hD u2) with D = -i d/dx, evaluated at every common node.
inline cplx wronskian(const ExactSolution& u1, const ExactSolution& u2, double* drift = nullptr) {
  if (u1.x.size() != u2.x.size()) fail_validation("wronskian: solutions are not on a common path");
  double scale = 0;
  std::vector<cplx> w;
  for (size_t k = 0; k < u1.x.size(); ++k) {
    if (std::abs(u1.x[k] - u2.x[k]) > 1e-12 * std::max(1.0, std::abs(u1.x[k])))
      fail_validation("wronskian: solutions are not on a common path");
    w.push_back(-I * (u1.hdy[k] * u2.y[k] - u1.y[k] * u2.hdy[k]));
    scale = std::max(scale, std::abs(u1.hdy[k] * u2.y[k]) + std::abs(u1.y[k] * u2.hdy[k]));
  }
  double dev = 0;
  for (cplx v : w) dev = std::max(dev, std::abs(v - w[0]));
  if (drift) *drift = std::abs(w[0]) > 1e-12 * scale ? dev / std::abs(w[0]) : dev / std::max(scale, 1e-300);
  return std::abs(w[0]) > 1e-14 * scale ? w[0] : cplx(0.0);
}

// Pointwise Wronskian from values.
inline cplx wronskian_at(cplx y1, cplx hdy1, cplx y2, cplx hdy2) { return -I * (hdy1 * y2 - y1 * hdy2); }

// ---------------------------------------------------------------------------------------------
// Simple turning points and Stokes geometry.

inline cplx find_turning_point(const Analytic& V, cplx guess) {
  cplx z = guess;
  for (int it = 0; it < 100; ++it) {
    cplx d = V.d1(z);
    if (std::abs(d) < 1e-10) break;
    cplx step = V(z) / d;
    z -= step;
    if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(z))) break;
  }
  if (std::abs(V.d1(z)) < 1e-10) fail_validation("find_turning_point: turning point is not simple");
  if (!(std::abs(V(z)) <= 1e-10)) fail_numerical("find_turning_point: Newton did not converge");
  return z;
}

// F(x) = phi(x)^2 with phi = int_{z0}^x V^{1/2}; single valued near a simple turning point.
inline cplx phase_squared(const Analytic& V, cplx z0, cplx x) {
  static const auto gl = gauss_legendre(40);
  cplx w = x - z0;
  if (std::abs(w) == 0.0) return 0.0;
  // x = z0 + w tau^2 removes the square-root endpoint singularity.
  std::vector<std::pair<double, double>> nodes;
  for (int i = 0; i < gl.first.size(); ++i) nodes.push_back({0.5 * (gl.first[i] + 1.0), 0.5 * gl.second[i]});
  std::sort(nodes.begin(), nodes.end());
  cplx g = std::sqrt(V.d1(z0) * w);
  cplx phi = 0.0;
  for (auto [tau, wt] : nodes) {
    g = continue_sqrt(V(z0 + w * tau * tau) / (tau * tau), g);
    phi += wt * g * tau * tau;
  }
  phi *= 2.0 * w;
  return phi * phi;
}

struct TurningPointData {
  cplx z0;
  cplx Vprime;
  std::array<cplx, 3> direction;  // initial direction of the Stokes line gamma_j^-
  std::array<std::vector<cplx>, 3> stokes;  // gamma_j^-, from z0 outward (phi^2 < 0)
  std::array<std::vector<cplx>, 3> anti;    // gamma_j^+, from z0 outward (phi^2 > 0)
  std::array<std::string, 3> sector_labels{"Sigma_0", "Sigma_1", "Sigma_2"};
};

// Newton projection of x onto the level set Im F = 0, F = phi^2 from z0.
inline cplx project_to_level(const Analytic& V, cplx z0, cplx x) {
  auto F = [&](cplx y) { return phase_squared(V, z0, y); };
  for (int it = 0; it < 20; ++it) {
    double e = 1e-6 * std::max(1.0, std::abs(x - z0));
    cplx f1 = (F(x + e) - F(x - e)) / (2 * e);
    cplx n = I * std::conj(f1) / std::abs(f1);  // moves F in the imaginary direction
    double beta = -F(x).imag() / std::abs(f1);
    x += beta * n;
    if (std::abs(beta) < 1e-14) break;
  }
  return x;
}

// Follows Im F = 0 from z0 in direction d until |x - z0| = radius.
inline std::vector<cplx> trace_curve(const Analytic& V, cplx z0, cplx d, double radius, double step) {
  std::vector<cplx> pts{z0};
  cplx x = z0 + 1e-3 * d;
  auto F = [&](cplx y) { return phase_squared(V, z0, y); };
  auto dF = [&](cplx y) {
    double e = 1e-6 * std::max(1.0, std::abs(y - z0));
    return (F(y + e) - F(y - e)) / (2 * e);
  };
  auto correct = [&](cplx y) { return project_to_level(V, z0, y); };
  x = correct(x);
  pts.push_back(x);
  cplx dir = d;
  int guard = 0;
  while (std::abs(x - z0) < radius && guard++ < 100000) {
    cplx f1 = dF(x);
    cplx tangent = std::conj(f1) / std::abs(f1);
    if ((tangent * std::conj(dir)).real() < 0) tangent = -tangent;
    cplx next = correct(x + step * tangent);
    dir = (next - x) / std::abs(next - x);
    x = next;
    pts.push_back(x);
  }
  return pts;
}

inline TurningPointData stokes_geometry(const Analytic& V, cplx z0_guess, double radius = 1.0, double step = 0.002) {
  TurningPointData tp;
  tp.z0 = find_turning_point(V, z0_guess);
  tp.Vprime = V.d1(tp.z0);
  // phi^2 ~ (4/9) V'(z0) (x - z0)^3 < 0 along Stokes lines.
  cplx base = std::pow(-1.0 / tp.Vprime, 1.0 / 3.0);
  std::array<cplx, 3> d;
  for (int m = 0; m < 3; ++m) d[m] = base * std::polar(1.0, 2 * pi * m / 3);
  // Label 0: the direction closest to the negative real axis, then counterclockwise.
  int first = 0;
  for (int m = 1; m < 3; ++m)
    if (std::abs(std::arg(-d[m])) < std::abs(std::arg(-d[first]))) first = m;
  for (int j = 0; j < 3; ++j) {
    cplx dj = d[(first + j) % 3];
    tp.direction[j] = dj / std::abs(dj);
    tp.stokes[j] = trace_curve(V, tp.z0, tp.direction[j], radius, step);
    tp.anti[j] = trace_curve(V, tp.z0, -tp.direction[j], radius, step);
  }
  return tp;
}

// Solution decaying along gamma_j^+, integrated in from its far end, through z0, and out along
// gamma_j^-. Normalized by the leading WKB term V^{-1/4} e^{-phi/h} at the far end.
inline ExactSolution subdominant_solution(const Analytic& V, const TurningPointData& tp, int j, double h) {
  const auto& plus = tp.anti[j];
  const auto& minus = tp.stokes[j];
  cplx xf = plus.back();
  cplx F = phase_squared(V, tp.z0, xf);
  cplx phi = std::sqrt(F);
  if (phi.real() < 0) phi = -phi;
  // Branch of V^{1/2} with Re(V^{1/2} dx) > 0 going outward.
  cplx out = plus.back() - plus[plus.size() - 2];
  cplx sq = std::sqrt(V(xf));
  if ((sq * out).real() < 0) sq = -sq;
  cplx y0 = std::pow(V(xf), -0.25) * std::exp(-phi / h);
  cplx hdy0 = (-sq - 0.25 * h * V.d1(xf) / V(xf)) * y0;
  std::vector<cplx> nodes(plus.rbegin(), plus.rend());
  nodes.insert(nodes.end(), minus.begin() + 1, minus.end());
  return solve_direct(V.f, nodes, h, y0, hdy0);
}

struct ConnectionResult {
  Eigen::Matrix3cd c = Eigen::Matrix3cd::Zero();  // u_j = sum_{k != j} c(j, k) u_k
  Eigen::Matrix3cd W = Eigen::Matrix3cd::Zero();  // W(u_j, u_k) at z0
};

inline ConnectionResult connection_coefficients(const std::array<ExactSolution, 3>& u, cplx z0,
                                                double min_wronskian = 1e-12) {
  std::array<std::pair<cplx, cplx>, 3> v;
  for (int j = 0; j < 3; ++j) v[j] = u[j].at(z0);
  ConnectionResult r;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) r.W(j, k) = wronskian_at(v[j].first, v[j].second, v[k].first, v[k].second);
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) {
      if (k == j) continue;
      int l = 3 - j - k;
      double scale = std::abs(v[k].first * v[l].second) + std::abs(v[k].second * v[l].first);
      if (std::abs(r.W(k, l)) < min_wronskian * scale)
        fail_numerical("connection_coefficients: Wronskian denominator below threshold");
      r.c(j, k) = r.W(j, l) / r.W(k, l);
    }
  return r;
}

// ||u_j - sum_k c_{j,k} u_k|| / ||u_j|| over sample points.
inline double reconstruction_residual(const std::array<ExactSolution, 3>& u, const ConnectionResult& c, int j,
                                      const std::vector<cplx>& points) {
  double num = 0, den = 0;
  for (cplx p : points) {
    cplx uj = u[j](p);
    cplx s = 0.0;
    for (int k = 0; k < 3; ++k)
      if (k != j) s += c.c(j, k) * u[k](p);
    num += std::norm(uj - s);
    den += std::norm(uj);
  }
  return std::sqrt(num / den);
}

// Leading-order zeros -h^{2/3} V'(0)^{-1/3} zeta_j of the solution subdominant in Sigma_0.
inline std::vector<cplx> predict_zeros(const Analytic& V, double h, double radius, cplx z0 = 0.0) {
  if (!(h > 0)) fail_validation("predict_zeros: h must be > 0");
  cplx vp = V.d1(z0);
  std::vector<cplx> out;
  for (int j = 1; j < 400; ++j) {
    cplx z = z0 - std::pow(h, 2.0 / 3.0) * std::pow(vp, -1.0 / 3.0) * airy::airy_zero(j);
    if (std::abs(z - z0) > radius) break;
    out.push_back(z);
  }
  return out;
}

inline double distance_to_polyline(cplx p, const std::vector<cplx>& poly) {
  double best = INFINITY;
  for (size_t k = 0; k + 1 < poly.size(); ++k) {
    cplx a = poly[k], b = poly[k + 1];
    double L2 = std::norm(b - a);
    double s = L2 > 0 ? std::clamp(((p - a) * std::conj(b - a)).real() / L2, 0.0, 1.0) : 0.0;
    best = std::min(best, std::abs(p - (a + s * (b - a))));
  }
  return best;
}

// Winding number of f around a circle, with adaptive refinement of large phase jumps.
inline double circle_winding(const std::function<cplx(cplx)>& f, cplx c, double r, int m = 64) {
  double total = 0;
  std::function<double(double, cplx, double, cplx, int)> inc = [&](double a, cplx fa, double b, cplx fb,
                                                                   int depth) -> double {
    double d = std::arg(fb / fa);
    if (std::abs(d) < pi / 6 || depth > 20) return d;
    double mid = 0.5 * (a + b);
    cplx fm = f(c + r * std::polar(1.0, mid));
    return inc(a, fa, mid, fm, depth + 1) + inc(mid, fm, b, fb, depth + 1);
  };
  cplx f0 = f(c + r), fa = f0;
  for (int k = 1; k <= m; ++k) {
    double b = 2 * pi * k / m;
    cplx fb = k == m ? f0 : f(c + r * std::polar(1.0, b));
    total += inc(2 * pi * (k - 1) / m, fa, b, fb, 0);
    fa = fb;
  }
  return total / (2 * pi);
}

struct ZeroReport {
  std::vector<cplx> zeros, predicted;
  std::vector<double> distances;  // to gamma_0^-
  double max_distance = 0.0;
  double min_modulus = INFINITY;  // min |zero - z0|
  int inner_disc_zeros = 0;       // zeros in D(z0, h^{2/3} / disc_constant)
  int disc_zeros = 0;             // argument-principle count in D(z0, radius)
  double distance_constant = 0.0; // max_distance / h^2
  bool ok = true;
  std::vector<std::string> violations;
};

struct ZeroSettings {
  double radius = 0.5;          // zeros are searched in D(z0, radius)
  double distance_constant = 1e-3;  // frozen from x + 0.1i x^2, h = 0.04..0.005 (observed 1.2e-4)
  double disc_constant = 3.0;
};

inline ZeroReport zero_localization_check(const ExactSolution& u0, const TurningPointData& tp, double h,
                                          const ZeroSettings& s = {}) {
  ZeroReport r;
  Analytic V;
  V.f = u0.V;
  auto f = [&](cplx x) { return u0(x); };
  auto leading = predict_zeros(V, h, 2.0 * s.radius, tp.z0);
  // Seeds from the uniform Airy condition phi(x)^2 = -((2/3) h zeta_j^{3/2})^2 along gamma_0^-.
  for (size_t j = 0; j < leading.size(); ++j) {
    double zeta = airy::airy_zero(int(j) + 1);
    cplx target = -std::pow(2.0 / 3.0 * h * std::pow(zeta, 1.5), 2);
    cplx z = leading[j];
    for (int it = 0; it < 40; ++it) {
      double e = 1e-7 * std::max(1.0, std::abs(z - tp.z0));
      cplx F = phase_squared(V, tp.z0, z);
      cplx dF = (phase_squared(V, tp.z0, z + e) - phase_squared(V, tp.z0, z - e)) / (2 * e);
      cplx step = (F - target) / dF;
      z -= step;
      if (std::abs(step) < 1e-14) break;
    }
    if (std::abs(z - tp.z0) > 1.2 * s.radius) break;
    for (int it = 0; it < 40; ++it) {
      auto [y, hdy] = u0.at(z);
      cplx step = h * y / hdy;
      z -= step;
      if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    if (std::abs(z - tp.z0) >= s.radius) continue;
    r.zeros.push_back(z);
    r.predicted.push_back(leading[j]);
  }
  r.disc_zeros = int(std::lround(circle_winding(f, tp.z0, s.radius, 256)));
  if (r.disc_zeros != int(r.zeros.size())) r.violations.push_back("zero count in the disc differs from the seeds");
  // Each zero must be simple and isolated: winding one on a small circle.
  for (size_t k = 0; k < r.zeros.size(); ++k) {
    double gap = INFINITY;
    for (size_t m = 0; m < r.zeros.size(); ++m)
      if (m != k) gap = std::min(gap, std::abs(r.zeros[m] - r.zeros[k]));
    double rad = std::min(0.3 * gap, 0.5 * std::pow(h, 2.0 / 3.0));
    double w = circle_winding(f, r.zeros[k], rad);
    if (std::abs(w - 1.0) > 0.05) r.violations.push_back("zero " + std::to_string(k) + " is not simple");
    // The polyline only locates the branch; the distance comes from projecting onto Im F = 0.
    double dist = distance_to_polyline(r.zeros[k], tp.stokes[0]);
    cplx foot = project_to_level(V, tp.z0, r.zeros[k]);
    if (std::abs(foot - r.zeros[k]) <= dist + 1e-4 && phase_squared(V, tp.z0, foot).real() < 0)
      dist = std::abs(foot - r.zeros[k]);
    r.distances.push_back(dist);
    r.max_distance = std::max(r.max_distance, dist);
    r.min_modulus = std::min(r.min_modulus, std::abs(r.zeros[k] - tp.z0));
  }
  double disc = std::pow(h, 2.0 / 3.0) / s.disc_constant;
  r.inner_disc_zeros = int(std::lround(circle_winding(f, tp.z0, disc)));
  r.distance_constant = r.max_distance / (h * h);
  if (r.max_distance > s.distance_constant * h * h) r.violations.push_back("zero farther than C h^2 from gamma_0^-");
  if (r.inner_disc_zeros != 0 || r.min_modulus < disc) r.violations.push_back("zero inside D(z0, h^{2/3}/C)");
  r.ok = r.violations.empty();
  return r;
}

// ---------------------------------------------------------------------------------------------
// CSV export.

inline void write_solution_csv(std::ostream& os, const ExactSolution& s) {
  os << "node,re_x,im_x,re_y,im_y,re_hdy,im_hdy,bound\n";
  os.precision(12);
  for (size_t k = 0; k < s.x.size(); ++k) {
    double b = k < s.bound.size() ? s.bound[k] : NAN;
    os << k << ',' << s.x[k].real() << ',' << s.x[k].imag() << ',' << s.y[k].real() << ',' << s.y[k].imag() << ','
       << s.hdy[k].real() << ',' << s.hdy[k].imag() << ',' << b << '\n';
  }
}

inline void write_expansion_csv(std::ostream& os, const WKBExpansion& e, double h) {
  os << "node,re_x,im_x,re_phi,im_phi";
  for (int k = 0; k <= e.order; ++k) os << ",re_a" << k << ",im_a" << k;
  os << ",bound\n";
  os.precision(12);
  const auto& g = e.phase.grid;
  for (int j = 0; j <= g.n; ++j) {
    os << j << ',' << g.x[j].real() << ',' << g.x[j].imag() << ',' << e.phase.phi[j].real() << ','
       << e.phase.phi[j].imag();
    for (int k = 0; k <= e.order; ++k) os << ',' << e.a[k][j].real() << ',' << e.a[k][j].imag();
    os << ',' << e.remainder_bound(g.x[j], h) << '\n';
  }
}

}  // namespace reslab::wkb
