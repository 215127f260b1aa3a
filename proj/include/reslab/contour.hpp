#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "numerics.hpp"

namespace reslab {

enum class Smoothness { smooth, lipschitz };

// x(t) on [t0, t1] together with x'(t) and x''(t).
struct Segment {
  double t0 = 0.0;
  double t1 = 1.0;
  bool on_obstacle = false;
  std::function<cplx(double)> x;
  std::function<cplx(double)> dx;
  std::function<cplx(double)> ddx;
};

struct ScaledContour {
  std::vector<Segment> segments;
  double theta = pi / 3.0;
  Smoothness smoothness = Smoothness::lipschitz;
  Interval obstacle;
  bool one_sided = false;  // half-line models: only the right exterior is present
  double r0 = 0.0;         // ramp width of the smooth profile
  double truncation = 0.0; // parameter length of each exterior piece

  cplx at(double t) const {
    for (const auto& s : segments)
      if (t >= s.t0 - 1e-14 && t <= s.t1 + 1e-14) return s.x(t);
    fail_validation("ScaledContour::at: parameter outside contour");
  }
};

namespace detail {

// C-infinity step: 0 for s <= 0, 1 for s >= 1.
inline double smooth_step(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  double a = std::exp(-1.0 / s), b = std::exp(-1.0 / (1.0 - s));
  return a / (a + b);
}

inline double smooth_step_prime(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  double a = std::exp(-1.0 / s), b = std::exp(-1.0 / (1.0 - s));
  double da = a / (s * s), db = -b / ((1.0 - s) * (1.0 - s));
  return (da * b - a * db) / ((a + b) * (a + b));
}

// Integral of smooth_step on [0, s] by Gauss-Legendre.
inline double smooth_step_integral(double s) {
  if (s <= 0.0) return 0.0;
  static const auto gl = gauss_legendre(48);
  double u = std::min(s, 1.0);
  double acc = 0.0;
  for (int i = 0; i < gl.first.size(); ++i) {
    double y = 0.5 * u * (gl.first[i] + 1.0);
    acc += 0.5 * u * gl.second[i] * smooth_step(y);
  }
  if (s > 1.0) acc += s - 1.0;
  return acc;
}

}  // namespace detail

// f''(d) = tan(theta) * step(d / r0) for the distance d outside the obstacle.
struct SmoothProfile {
  double theta = pi / 3.0;
  double r0 = 0.5;
  double f2(double d) const { return d <= 0 ? 0.0 : std::tan(theta) * detail::smooth_step(d / r0); }
  double f1(double d) const { return d <= 0 ? 0.0 : std::tan(theta) * r0 * detail::smooth_step_integral(d / r0); }
  double f3(double d) const { return d <= 0 ? 0.0 : std::tan(theta) * detail::smooth_step_prime(d / r0) / r0; }
};

inline ScaledContour make_scaled_contour(Interval obstacle, double theta, Smoothness smoothness,
                                         double truncation = 0.0, bool one_sided = false, double r0 = 0.0) {
  if (!(theta > 0.0 && theta < pi / 2.0)) fail_validation("make_scaled_contour: theta must lie in (0, pi/2)");
  if (obstacle.hi < obstacle.lo) fail_validation("make_scaled_contour: empty obstacle");
  ScaledContour c;
  c.theta = theta;
  c.smoothness = smoothness;
  c.obstacle = obstacle;
  c.one_sided = one_sided;
  const double radius = std::max({std::abs(obstacle.lo), std::abs(obstacle.hi), 0.5 * obstacle.length(), 1.0});
  c.truncation = truncation > 0 ? truncation : 8.0 * radius;
  const double T = c.truncation;
  const double lo = obstacle.lo, hi = obstacle.hi;
  const cplx e = std::polar(1.0, theta);

  if (smoothness == Smoothness::lipschitz) {
    if (!one_sided) {
      c.segments.push_back({lo - T, lo, false, [=](double t) { return lo + e * (t - lo); },
                            [=](double) { return e; }, [](double) { return cplx(0); }});
    }
    if (obstacle.length() > 0) {
      c.segments.push_back({lo, hi, true, [](double t) { return cplx(t); }, [](double) { return cplx(1); },
                            [](double) { return cplx(0); }});
    }
    c.segments.push_back({hi, hi + T, false, [=](double t) { return hi + e * (t - hi); },
                          [=](double) { return e; }, [](double) { return cplx(0); }});
    return c;
  }

  // Smooth profile: x = y + i f'(y) with f'' ramping to tan(theta) over width r0, then linear.
  c.r0 = r0 > 0 ? r0 : 0.25 * radius;
  SmoothProfile P{theta, c.r0};
  const double r = c.r0;
  auto right = [=](double d) { return cplx(hi + d, P.f1(d)); };
  auto dright = [=](double d) { return cplx(1.0, P.f2(d)); };
  auto ddright = [=](double d) { return cplx(0.0, P.f3(d)); };
  if (!one_sided) {
    // Mirror image: d = lo - y, x = y - i f'(d).
    c.segments.push_back({lo - T, lo - r, false, [=](double t) { return cplx(t, -P.f1(lo - t)); },
                          [=](double t) { return cplx(1.0, P.f2(lo - t)); },
                          [=](double t) { return cplx(0.0, -P.f3(lo - t)); }});
    c.segments.push_back({lo - r, lo, false, [=](double t) { return cplx(t, -P.f1(lo - t)); },
                          [=](double t) { return cplx(1.0, P.f2(lo - t)); },
                          [=](double t) { return cplx(0.0, -P.f3(lo - t)); }});
  }
  if (obstacle.length() > 0) {
    c.segments.push_back({lo, hi, true, [](double t) { return cplx(t); }, [](double) { return cplx(1); },
                          [](double) { return cplx(0); }});
  }
  c.segments.push_back({hi, hi + r, false, [=](double t) { return right(t - hi); },
                        [=](double t) { return dright(t - hi); }, [=](double t) { return ddright(t - hi); }});
  c.segments.push_back({hi + r, hi + T, false, [=](double t) { return right(t - hi); },
                        [=](double t) { return dright(t - hi); }, [=](double t) { return ddright(t - hi); }});
  return c;
}

// (C^{-1} eta | eta) with C = (1 + i f'')^2, scalar case.
inline cplx scaled_symbol_sector(double f_second, double eta) {
  if (f_second < 0) fail_validation("scaled_symbol_sector: f'' must be >= 0");
  cplx c = (1.0 + I * f_second) * (1.0 + I * f_second);
  return eta * eta / c;
}

// Matrix case: F symmetric positive semidefinite.
inline cplx scaled_symbol_sector(const RMatrix& F, const RVector& eta) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(F);
  if (es.eigenvalues().minCoeff() < -1e-12) fail_validation("scaled_symbol_sector: f'' must be >= 0");
  CMatrix A = CMatrix::Identity(F.rows(), F.cols()) + I * F.cast<cplx>();
  CMatrix C = A * A;
  CVector e = eta.cast<cplx>();
  CVector y = C.lu().solve(e);
  return e.transpose() * y;
}

struct BentPath {
  double delta = 0.0;
  double s0 = 1.0;
  std::vector<double> s;
  std::vector<cplx> x;
  std::vector<cplx> dx;
  std::vector<cplx> weights;  // trapezoid weights for integrals in dx

  static cplx gamma(double delta, double s) {
    return s <= delta ? cplx(s) : delta + std::polar(1.0, pi / 3.0) * (s - delta);
  }
  static cplx dgamma(double delta, double s) { return s < delta ? cplx(1.0) : std::polar(1.0, pi / 3.0); }
  cplx end() const { return gamma(delta, s0); }
  size_t size() const { return s.size(); }
};

inline BentPath bent_path(double delta, double s0, int n_nodes) {
  if (!(s0 > delta)) fail_validation("bent_path: s0 must exceed delta");
  if (delta < 0) fail_validation("bent_path: delta must be >= 0");
  if (n_nodes < 3) fail_validation("bent_path: need at least 3 nodes");
  BentPath p;
  p.delta = delta;
  p.s0 = s0;
  // Uniform in s, with delta placed on a node when it is interior.
  std::vector<double> s;
  if (delta > 0) {
    int n1 = std::max(2, int(std::round((n_nodes - 1) * delta / s0)));
    int n2 = std::max(1, n_nodes - 1 - n1);
    for (int i = 0; i < n1; ++i) s.push_back(delta * i / n1);
    for (int i = 0; i <= n2; ++i) s.push_back(delta + (s0 - delta) * i / n2);
  } else {
    for (int i = 0; i < n_nodes; ++i) s.push_back(s0 * i / (n_nodes - 1));
  }
  p.s = s;
  for (double si : s) {
    p.x.push_back(BentPath::gamma(delta, si));
    p.dx.push_back(BentPath::dgamma(delta, si));
  }
  p.weights.assign(s.size(), cplx(0));
  for (size_t i = 0; i + 1 < s.size(); ++i) {
    cplx dz = p.x[i + 1] - p.x[i];
    p.weights[i] += 0.5 * dz;
    p.weights[i + 1] += 0.5 * dz;
  }
  return p;
}

struct CoeffRow {
  double t = 0.0;
  cplx x, a2, a1, a0;  // operator: a2 u_tt + a1 u_t + a0 u
};

// Coefficients of -(h d/dx)^2 + V(x) - z written in the path parameter t.
inline CoeffRow transformed_coeffs_at(double t, cplx x, cplx dx, cplx ddx,
                                      const std::function<cplx(cplx)>& V, double h, cplx z) {
  cplx v = V(x);
  if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
    fail_validation("transformed_operator_coeffs: V not evaluable at a complex node");
  CoeffRow r;
  r.t = t;
  r.x = x;
  r.a2 = -h * h / (dx * dx);
  r.a1 = h * h * ddx / (dx * dx * dx);
  r.a0 = v - z;
  return r;
}

inline std::vector<CoeffRow> transformed_operator_coeffs(const BentPath& p, const std::function<cplx(cplx)>& V,
                                                         double h, cplx z) {
  std::vector<CoeffRow> out;
  for (size_t i = 0; i < p.size(); ++i) out.push_back(transformed_coeffs_at(p.s[i], p.x[i], p.dx[i], 0.0, V, h, z));
  return out;
}

inline std::vector<CoeffRow> transformed_operator_coeffs(const ScaledContour& c, const std::function<cplx(cplx)>& V,
                                                         double h, cplx z, int nodes_per_segment = 32) {
  std::vector<CoeffRow> out;
  RVector xi = cheb::lobatto(nodes_per_segment);
  for (const auto& s : c.segments) {
    for (int j = nodes_per_segment; j >= 0; --j) {
      double t = s.t0 + 0.5 * (xi[j] + 1.0) * (s.t1 - s.t0);
      out.push_back(transformed_coeffs_at(t, s.x(t), s.dx(t), s.ddx(t), V, h, z));
    }
  }
  return out;
}

inline void write_contour_csv(std::ostream& os, const ScaledContour& c, int samples_per_segment = 64) {
  os << "t,re_x,im_x,re_dx,im_dx\n";
  os.precision(12);
  for (const auto& s : c.segments) {
    for (int j = 0; j <= samples_per_segment; ++j) {
      double t = s.t0 + (s.t1 - s.t0) * j / samples_per_segment;
      cplx x = s.x(t), d = s.dx(t);
      os << t << ',' << x.real() << ',' << x.imag() << ',' << d.real() << ',' << d.imag() << '\n';
    }
  }
}

}  // namespace reslab
