#pragma once

#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include "error.hpp"
#include "numerics.hpp"

namespace reslab::airy {

namespace detail {

// Minimal complex arithmetic in quad precision; std::complex<__float128> is not portable.
struct qc {
  __float128 re, im;
};
inline qc mul(qc a, qc b) { return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re}; }
inline qc add(qc a, qc b) { return {a.re + b.re, a.im + b.im}; }
inline qc scale(qc a, __float128 s) { return {a.re * s, a.im * s}; }

// Ai(0) and -Ai'(0) to quad precision.
inline const __float128 c1 = 0.355028053887817239260063186004183176Q;
inline const __float128 c2 = 0.258819403792806798405183560189203963Q;

inline std::pair<cplx, cplx> maclaurin(cplx t) {
  qc x{t.real(), t.imag()};
  qc x3 = mul(mul(x, x), x);
  qc F{1, 0}, Fs{1, 0};
  qc Fp = scale(mul(x, x), 0.5Q), Fps = Fp;
  qc G = x, Gs = x;
  qc Gp{1, 0}, Gps{1, 0};
  for (int k = 1; k < 200; ++k) {
    __float128 kk = k;
    F = scale(mul(F, x3), 1 / ((3 * kk - 1) * (3 * kk)));
    G = scale(mul(G, x3), 1 / ((3 * kk) * (3 * kk + 1)));
    Gp = scale(mul(Gp, x3), 1 / ((3 * kk) * (3 * kk - 2)));
    if (k >= 2) Fp = scale(mul(Fp, x3), 1 / ((3 * kk - 3) * (3 * kk - 1)));
    Fs = add(Fs, F);
    Gs = add(Gs, G);
    Gps = add(Gps, Gp);
    if (k >= 2) Fps = add(Fps, Fp);
    double mag = std::abs((double)F.re) + std::abs((double)F.im) + std::abs((double)G.re) +
                 std::abs((double)G.im) + std::abs((double)Gp.re) + std::abs((double)Gp.im);
    if (k > 4 && mag < 1e-36) break;
  }
  qc ai = add(scale(Fs, c1), scale(Gs, -c2));
  qc aip = add(scale(Fps, c1), scale(Gps, -c2));
  return {cplx((double)ai.re, (double)ai.im), cplx((double)aip.re, (double)aip.im)};
}

inline std::pair<cplx, cplx> asymptotic(cplx t) {
  cplx zeta = 2.0 / 3.0 * t * std::sqrt(t);
  cplx su = 1.0, sv = 1.0;
  double u = 1.0;
  cplx zk = 1.0;
  double last = 1e300;
  for (int k = 1; k < 60; ++k) {
    u *= (6.0 * k - 5) * (6.0 * k - 3) * (6.0 * k - 1) / ((2.0 * k - 1) * 216.0 * k);
    double v = -(6.0 * k + 1) / (6.0 * k - 1) * u;
    zk /= -zeta;
    cplx tu = u * zk, tv = v * zk;
    double mag = std::abs(tu);
    if (mag > last) break;
    su += tu;
    sv += tv;
    last = mag;
    if (mag < 1e-17) break;
  }
  cplx e = std::exp(-zeta) / (2.0 * std::sqrt(pi));
  cplx q = std::pow(t, 0.25);
  return {e / q * su, -e * q * sv};
}

}  // namespace detail

// Ai(t) and Ai'(t) for complex t.
inline std::pair<cplx, cplx> ai_pair(cplx t) {
  const double r = std::abs(t);
  if (r <= 8.0) return detail::maclaurin(t);
  if (std::abs(std::arg(t)) <= 2.0 * pi / 3.0) return detail::asymptotic(t);
  const cplx w = std::polar(1.0, 2.0 * pi / 3.0);
  auto [a1, d1] = detail::asymptotic(w * t);
  auto [a2, d2] = detail::asymptotic(w * w * t);
  return {-w * a1 - w * w * a2, -w * w * d1 - w * d2};
}

inline cplx airy_ai(cplx t) { return ai_pair(t).first; }
inline cplx airy_ai_prime(cplx t) { return ai_pair(t).second; }
inline double airy_ai(double t) { return ai_pair(cplx(t, 0.0)).first.real(); }

inline std::pair<cplx, cplx> bi_pair(cplx t) {
  const cplx w = std::polar(1.0, 2.0 * pi / 3.0);
  const cplx e = std::polar(1.0, pi / 6.0);
  auto [a1, d1] = ai_pair(w * t);
  auto [a2, d2] = ai_pair(std::conj(w) * t);
  return {e * a1 + std::conj(e) * a2, e * w * d1 + std::conj(e) * std::conj(w) * d2};
}

inline cplx airy_bi(cplx t) { return bi_pair(t).first; }

// j-th positive root of Ai(-t).
inline double airy_zero(int j) {
  if (j < 1) fail_validation("airy_zero: index must be >= 1");
  double T = 3.0 * pi * (4.0 * j - 1.0) / 8.0;
  double t = std::pow(T, 2.0 / 3.0) * (1.0 + 5.0 / 48.0 / (T * T));
  for (int it = 0; it < 60; ++it) {
    auto [a, d] = ai_pair(cplx(-t, 0.0));
    double dt = a.real() / (-d.real());
    t -= dt;
    if (std::abs(dt) < 1e-15 * t) break;
  }
  return t;
}

inline std::vector<double> airy_zeros(int count) {
  std::vector<double> z;
  for (int j = 1; j <= count; ++j) z.push_back(airy_zero(j));
  return z;
}

}  // namespace reslab::airy
