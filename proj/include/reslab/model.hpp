#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "airy.hpp"
#include "error.hpp"

namespace reslab {

enum class PotentialKind { square_well, smooth_bump, radial_effective, tabulated };

inline std::string to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::square_well: return "square_well";
    case PotentialKind::smooth_bump: return "smooth_bump";
    case PotentialKind::radial_effective: return "radial_effective";
    case PotentialKind::tabulated: return "tabulated";
  }
  return "unknown";
}

inline PotentialKind parse_potential_kind(const std::string& s) {
  if (s == "square_well") return PotentialKind::square_well;
  if (s == "smooth_bump") return PotentialKind::smooth_bump;
  if (s == "radial_effective") return PotentialKind::radial_effective;
  if (s == "tabulated") return PotentialKind::tabulated;
  fail_validation("unknown potential kind '" + s + "'");
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

// Compactly supported real potential. For radial_effective the stored evaluator is the
// compact part only; the centrifugal term is added by the solvers.
struct PotentialSpec {
  PotentialKind kind = PotentialKind::square_well;
  Interval support{-1.0, 1.0};
  int v0 = 1;
  int ell = 0;
  std::vector<double> breaks;  // interior points where V is not smooth
  std::function<double(double)> evaluator;

  double operator()(double x) const {
    if (x < support.lo || x > support.hi) return 0.0;
    return evaluator ? evaluator(x) : 0.0;
  }
};

inline PotentialSpec square_well(double depth, Interval support) {
  // depth > 0 means a well: V = -depth on the support.
  PotentialSpec p;
  p.kind = PotentialKind::square_well;
  p.support = support;
  p.v0 = 1;
  p.evaluator = [depth](double) { return -depth; };
  return p;
}

// V = height * (4 (x - lo)(hi - x) / len^2)^v0: vanishes to order v0 at both endpoints.
inline PotentialSpec smooth_bump(double height, Interval support, int v0) {
  if (v0 < 1) fail_validation("smooth_bump: v0 must be >= 1");
  PotentialSpec p;
  p.kind = PotentialKind::smooth_bump;
  p.support = support;
  p.v0 = v0;
  const double lo = support.lo, len = support.length();
  p.evaluator = [=](double x) {
    double u = 4.0 * (x - lo) * (lo + len - x) / (len * len);
    return height * std::pow(std::max(u, 0.0), v0);
  };
  return p;
}

inline PotentialSpec radial_effective(int ell, Interval support, std::function<double(double)> compact) {
  if (ell < 0) fail_validation("radial_effective: l must be >= 0");
  PotentialSpec p;
  p.kind = PotentialKind::radial_effective;
  p.support = support;
  p.ell = ell;
  p.v0 = 1;
  p.evaluator = std::move(compact);
  return p;
}

// Piecewise-linear interpolation of (x, y) samples; the support is [x.front(), x.back()].
inline PotentialSpec tabulated(std::vector<double> xs, std::vector<double> ys, int v0 = 1) {
  if (xs.size() < 2 || xs.size() != ys.size()) fail_validation("tabulated: need >= 2 matching samples");
  PotentialSpec p;
  p.kind = PotentialKind::tabulated;
  p.support = {xs.front(), xs.back()};
  p.v0 = v0;
  p.breaks.assign(xs.begin() + 1, xs.end() - 1);
  auto X = std::make_shared<std::vector<double>>(std::move(xs));
  auto Y = std::make_shared<std::vector<double>>(std::move(ys));
  p.evaluator = [X, Y](double x) {
    auto it = std::upper_bound(X->begin(), X->end(), x);
    size_t i = std::clamp<size_t>(it - X->begin(), 1, X->size() - 1);
    double t = (x - (*X)[i - 1]) / ((*X)[i] - (*X)[i - 1]);
    return (1 - t) * (*Y)[i - 1] + t * (*Y)[i];
  };
  return p;
}

// One-sided check that derivatives 0..v0-1 vanish at both endpoints: fit a polynomial to
// samples just inside the support and inspect the low-order coefficients.
inline bool vanishes_to_order(const PotentialSpec& p, double tol = 1e-6) {
  const double step = 1e-3 * p.support.length();
  const int m = p.v0 + 3;
  for (int side = 0; side < 2; ++side) {
    double x0 = side == 0 ? p.support.lo : p.support.hi;
    double dir = side == 0 ? 1.0 : -1.0;
    RMatrix A(m, m);
    RVector b(m);
    for (int j = 0; j < m; ++j) {
      for (int c = 0; c < m; ++c) A(j, c) = std::pow(j, c);
      b[j] = p.evaluator(x0 + dir * j * step);
    }
    // coef[k] = V^(k)(x0) step^k / k!, the k-th term's share of the sampled values.
    RVector coef = A.colPivHouseholderQr().solve(b);
    const double scale = b.cwiseAbs().maxCoeff();
    for (int k = 0; k < p.v0; ++k) {
      if (std::abs(coef[k]) > tol * scale) return false;
    }
  }
  return true;
}

struct SpectralWindow {
  double a = 0.5;
  double b = 2.0;
  double c = 1.0;
  double h = 0.1;
};

struct Constants {
  double kappa = 0.0;
  std::vector<double> zeta;
  double c0 = 0.0;
  double Q = 1.0;
};

inline double kappa_of(double Q) { return std::pow(2.0, -1.0 / 3.0) * std::cos(pi / 6.0) * std::pow(Q, 2.0 / 3.0); }

inline double c_max(double kappa, double zeta1) { return 2.0 * std::pow(0.5, 2.0 / 3.0) * kappa * zeta1; }
inline double c_max(const Constants& k) { return c_max(k.kappa, k.zeta.at(0)); }

inline Constants make_constants(double Q = 1.0, int n_zeros = 8) {
  Constants k;
  k.Q = Q;
  k.kappa = kappa_of(Q);
  k.zeta = airy::airy_zeros(n_zeros);
  k.c0 = 0.5 * c_max(k);
  return k;
}

struct WindowCheck {
  bool ok = true;
  std::string reason;
  explicit operator bool() const { return ok; }
};

inline WindowCheck validate_window(const SpectralWindow& w, const Constants& k) {
  if (!(w.h > 0)) fail_validation("validate_window: h must be > 0");
  const double cm = c_max(k);
  if (!(w.a >= 0.5)) return {false, "a >= 1/2 violated"};
  if (!(w.a < w.b)) return {false, "a < b violated"};
  if (!(w.b <= 2.0)) return {false, "b <= 2 violated"};
  if (!(w.c > 0)) return {false, "c > 0 violated"};
  if (!(w.c < cm)) return {false, "c < c_max violated (c_max = " + std::to_string(cm) + ")"};
  return {true, ""};
}

struct PerturbationConfig {
  double s = 1.0;
  double eps = 0.25;
  double theta = 0.25;
  double M = 0.0;
  double M_tilde = 0.0;
  double L = 0.0;
  double R = 0.0;
  double tau0 = 0.0;
  double alpha = 0.0;
  double delta = 0.0;
  double C = 1.0;
};

inline double m_min(int n, int v0, double s, double eps, double theta) {
  long double num = v0 + (1.0L / 3.0L + n) / (1.0L - 2.0L * theta);
  long double den = (long double)s - n / 2.0L - eps;
  return (double)(num / den);
}

inline void check_feasible(int n, int v0, double s, double eps, double theta) {
  if (n < 1) fail_validation("infeasible: n must be >= 1");
  if (v0 < 1) fail_validation("infeasible: v0 must be >= 1");
  if (!(s > n / 2.0)) fail_validation("infeasible: s <= n/2");
  if (!(s < v0 + 0.5)) fail_validation("infeasible: s >= v0 + 1/2");
  if (!(theta > 0.0 && theta < 0.5)) fail_validation("infeasible: theta not in (0, 1/2)");
  if (!(eps > 0.0 && eps < s - n / 2.0)) fail_validation("infeasible: eps not in (0, s - n/2)");
}

inline PerturbationConfig derive_parameters(int n, int v0, double s, double eps, double theta, double h,
                                            double alpha = 1.0, double C = 1.0) {
  check_feasible(n, v0, s, eps, theta);
  if (!(h > 0.0 && h < 1.0)) fail_validation("infeasible: h not in (0, 1)");
  PerturbationConfig c;
  c.s = s;
  c.eps = eps;
  c.theta = theta;
  long double M = m_min(n, v0, s, eps, theta);
  long double Mt = (n / 2.0L + eps) * M + 1.0L + 1.5L * n + v0;
  long double lh = std::log((long double)h);
  c.M = (double)M;
  c.M_tilde = (double)Mt;
  c.L = (double)std::exp(-M * lh);
  c.R = (double)std::exp(-Mt * lh);
  c.tau0 = (double)std::exp(5.0L / 3.0L * lh);
  c.alpha = alpha;
  c.C = C;
  c.delta = (double)(c.tau0 * std::exp(alpha * lh) / C);
  return c;
}

// Returns an empty string when every PerturbationConfig invariant holds.
inline std::string config_violation(const PerturbationConfig& c, int n, int v0, double h) {
  if (!(c.s > n / 2.0 && c.s < v0 + 0.5)) return "s range";
  if (!(c.eps > 0 && c.eps < c.s - n / 2.0)) return "eps range";
  if (!(c.theta > 0 && c.theta < 0.5)) return "theta range";
  double mm = m_min(n, v0, c.s, c.eps, c.theta);
  if (c.M < mm * (1 - 1e-12)) return "M < M_min";
  double lmin = std::pow(h, -mm);
  if (c.L < lmin * (1 - 1e-9) || c.L > c.C * std::pow(h, -c.M) * (1 + 1e-9)) return "L range";
  double mt_min = (n / 2.0 + c.eps) * mm + 1 + 1.5 * n + v0;
  if (c.R < std::pow(h, -mt_min) * (1 - 1e-9) || c.R > std::pow(h, -c.M_tilde) * (1 + 1e-9)) return "R range";
  if (!(c.tau0 > 0 && c.tau0 <= std::pow(h, 5.0 / 3.0) * (1 + 1e-12))) return "tau0 range";
  if (std::abs(c.delta - c.tau0 * std::pow(h, c.alpha) / c.C) > 1e-12 * c.delta) return "delta relation";
  return "";
}

struct Epsilon0 {
  double value = 0.0;
  bool degenerate = false;
};

inline Epsilon0 epsilon0(double h, double tau0) {
  if (!(h > 0.0 && h <= 1.0)) fail_validation("epsilon0: h must lie in (0, 1)");
  if (!(tau0 > 0.0 && tau0 < 1.0)) fail_validation("epsilon0: tau0 must lie in (0, 1)");
  if (h == 1.0) return {0.0, true};
  long double lh = std::log(1.0L / h);
  long double v = h * (lh * lh + std::log(1.0L / tau0));
  return {(double)v, false};
}

}  // namespace reslab
