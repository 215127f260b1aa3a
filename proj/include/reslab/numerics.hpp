#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "error.hpp"

namespace reslab {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr cplx I{0.0, 1.0};
inline constexpr double pi = std::numbers::pi;

namespace cheb {

// Chebyshev-Lobatto nodes x_j = cos(pi j / n), j = 0..n (descending from 1 to -1).
inline RVector lobatto(int n) {
  RVector x(n + 1);
  for (int j = 0; j <= n; ++j) x[j] = std::cos(pi * j / n);
  return x;
}

// Differentiation matrix on the Lobatto nodes (negative-sum trick on the diagonal).
inline RMatrix diff_matrix(int n) {
  RVector x = lobatto(n);
  RMatrix D = RMatrix::Zero(n + 1, n + 1);
  auto c = [n](int j) { return ((j == 0 || j == n) ? 2.0 : 1.0) * ((j % 2) ? -1.0 : 1.0); };
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      if (i != j) D(i, j) = c(i) / c(j) / (x[i] - x[j]);
    }
  }
  for (int i = 0; i <= n; ++i) D(i, i) = -D.row(i).sum();
  return D;
}

// Clenshaw-Curtis weights on the Lobatto nodes.
inline RVector cc_weights(int n) {
  RVector w = RVector::Zero(n + 1);
  for (int j = 0; j <= n; ++j) {
    double theta = pi * j / n;
    double s = 0.0;
    for (int k = 1; k <= n / 2; ++k) {
      double b = (2 * k == n) ? 1.0 : 2.0;
      s += b * std::cos(2.0 * k * theta) / (4.0 * k * k - 1.0);
    }
    double cj = (j == 0 || j == n) ? 1.0 : 2.0;
    w[j] = cj / n * (1.0 - s);
  }
  return w;
}

// Values -> Chebyshev coefficients on the Lobatto grid (direct cosine transform).
inline RMatrix values_to_coeffs(int n) {
  RMatrix T(n + 1, n + 1);
  for (int k = 0; k <= n; ++k) {
    for (int j = 0; j <= n; ++j) {
      double cj = (j == 0 || j == n) ? 0.5 : 1.0;
      T(k, j) = 2.0 / n * cj * std::cos(pi * k * j / n);
    }
  }
  T.row(0) *= 0.5;
  T.row(n) *= 0.5;
  return T;
}

// Matrix mapping values f(x_j) to values of the antiderivative F with F(-1) = 0.
inline RMatrix cumsum_matrix(int n) {
  RMatrix C = values_to_coeffs(n);
  // Integrate the series: int T_k = (T_{k+1}/(k+1) - T_{k-1}/(k-1))/2.
  RMatrix B = RMatrix::Zero(n + 2, n + 1);
  B(1, 0) = 1.0;
  if (n >= 1) B(2, 1) = 0.25;
  for (int k = 2; k <= n; ++k) {
    B(k + 1, k) += 0.5 / (k + 1);
    B(k - 1, k) -= 0.5 / (k - 1);
  }
  RVector x = lobatto(n);
  RMatrix E(n + 1, n + 2);
  for (int j = 0; j <= n; ++j) {
    for (int k = 0; k <= n + 1; ++k) E(j, k) = std::cos(k * std::acos(std::clamp(x[j], -1.0, 1.0)));
  }
  RMatrix Q = E * B * C;
  // Subtract value at x = -1 (last node).
  RMatrix out = Q;
  for (int j = 0; j <= n; ++j) out.row(j) -= Q.row(n);
  return out;
}

}  // namespace cheb

// Gauss-Legendre nodes and weights on [-1, 1] by Newton on P_n.
inline std::pair<RVector, RVector> gauss_legendre(int n) {
  RVector x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

// Gauss-Lobatto-Legendre nodes (ascending) and weights on [-1, 1].
inline std::pair<RVector, RVector> gauss_lobatto_legendre(int n) {
  // n + 1 nodes: endpoints and the roots of P_n'.
  RVector x(n + 1), w(n + 1);
  auto legendre = [n](double z, double& pn, double& pnm1) {
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    pn = p1;
    pnm1 = p0;
  };
  for (int j = 0; j <= n; ++j) {
    double z = -std::cos(pi * j / n);
    if (j > 0 && j < n) {
      for (int it = 0; it < 100; ++it) {
        double pn, pnm1;
        legendre(z, pn, pnm1);
        // f = P_n'(z) ~ (z pn - pnm1); Newton on (1 - z^2) P_n' using its derivative -n(n+1) P_n.
        double f = n * (pnm1 - z * pn);
        double df = -n * (n + 1.0) * pn;
        double dz = f / df;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
    }
    double pn, pnm1;
    legendre(z, pn, pnm1);
    x[j] = z;
    w[j] = 2.0 / (n * (n + 1.0) * pn * pn);
  }
  return {x, w};
}

// Classical RK4 for a complex first-order system y' = f(t, y) along a real parameter.
template <class F>
Eigen::Matrix<cplx, Eigen::Dynamic, 1> rk4_step(const F& f, double t, const CVector& y, double dt) {
  CVector k1 = f(t, y);
  CVector k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1);
  CVector k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2);
  CVector k4 = f(t + dt, y + dt * k3);
  return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Integrate (h d/dx)^2 y = (V - z) y along a straight complex segment x = x0 + t (x1 - x0), t in [0,1].
// State (y, h dy/dx). Returns the end state.
inline std::pair<cplx, cplx> integrate_segment(const std::function<cplx(cplx)>& V, double h, cplx x0,
                                               cplx x1, cplx y, cplx hdy, int steps) {
  cplx dx = x1 - x0;
  double dt = 1.0 / steps;
  auto rhs = [&](double t, cplx a, cplx b, cplx& da, cplx& db) {
    cplx x = x0 + t * dx;
    da = dx * b / h;
    db = dx * V(x) * a / h;
  };
  for (int k = 0; k < steps; ++k) {
    double t = k * dt;
    cplx a1, b1, a2, b2, a3, b3, a4, b4;
    rhs(t, y, hdy, a1, b1);
    rhs(t + 0.5 * dt, y + 0.5 * dt * a1, hdy + 0.5 * dt * b1, a2, b2);
    rhs(t + 0.5 * dt, y + 0.5 * dt * a2, hdy + 0.5 * dt * b2, a3, b3);
    rhs(t + dt, y + dt * a3, hdy + dt * b3, a4, b4);
    y += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    hdy += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
  }
  return {y, hdy};
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double linear_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace reslab
