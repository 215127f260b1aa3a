#include <gtest/gtest.h>

#include <random>

#include "reslab/airy.hpp"

using namespace reslab;

TEST(Airy, ValueAtZero) {
  // Oracle: 3^{-2/3} / Gamma(2/3).
  EXPECT_NEAR(airy::airy_ai(0.0), std::pow(3.0, -2.0 / 3.0) / std::tgamma(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(airy::airy_ai_prime(cplx(0)).real(), -std::pow(3.0, -1.0 / 3.0) / std::tgamma(1.0 / 3.0), 1e-15);
}

TEST(Airy, Zeros) {
  EXPECT_NEAR(airy::airy_zero(1), 2.338107410459767, 1e-12);
  EXPECT_NEAR(airy::airy_zero(2), 4.087949444130970, 1e-12);
  EXPECT_NEAR(airy::airy_zero(10), 12.828776752865757, 1e-10);
  EXPECT_THROW(airy::airy_zero(0), Error);
  // Bisection oracle on Ai(-t).
  double lo = 2.0, hi = 3.0;
  for (int i = 0; i < 80; ++i) {
    double m = 0.5 * (lo + hi);
    (airy::airy_ai(-m) > 0 ? lo : hi) = m;
  }
  EXPECT_NEAR(airy::airy_zero(1), lo, 1e-12);
}

TEST(Airy, RealReferenceValues) {
  // Tabulated values.
  EXPECT_NEAR(airy::airy_ai(1.0), 0.13529241631288141, 1e-15);
  EXPECT_NEAR(airy::airy_ai(-5.0), 0.35076100902411431, 1e-13);
  EXPECT_NEAR(airy::airy_ai(10.0) / 1.1047532552898687e-10, 1.0, 1e-11);
  EXPECT_NEAR(airy::airy_ai(6.0) / 9.9476943602529e-06, 1.0, 1e-11);
  EXPECT_NEAR(airy::airy_bi(cplx(1.0)).real(), 1.2074235949528713, 1e-13);
}

TEST(Airy, OdeResidualViaCauchy) {
  // Ai'' from a Cauchy integral of Ai on a circle; compare with t Ai(t).
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-14.0, 14.0);
  for (int i = 0; i < 60; ++i) {
    cplx t(U(rng), U(rng));
    const int m = 128;
    const double r = 0.75;
    cplx d2 = 0.0;
    for (int k = 0; k < m; ++k) {
      cplx e = std::polar(1.0, 2 * pi * k / m);
      d2 += airy::airy_ai(t + r * e) / (r * r * e * e);
    }
    d2 *= 2.0 / m;
    cplx ai = airy::airy_ai(t);
    double scale = 0.0;
    for (int k = 0; k < m; ++k) scale = std::max(scale, std::abs(airy::airy_ai(t + r * std::polar(1.0, 2 * pi * k / m))));
    EXPECT_LT(std::abs(d2 - t * ai), 1e-10 * scale * (1 + std::abs(t))) << t;
  }
}

TEST(Airy, DerivativeConsistent) {
  for (double re : {-12.0, -3.0, 0.5, 4.0, 9.0}) {
    for (double im : {-7.0, 0.0, 2.0, 9.0}) {
      cplx t(re, im);
      const int m = 64;
      const double r = 0.5;
      cplx d1 = 0.0;
      double scale = 0.0;
      for (int k = 0; k < m; ++k) {
        cplx e = std::polar(1.0, 2 * pi * k / m);
        cplx v = airy::airy_ai(t + r * e);
        scale = std::max(scale, std::abs(v));
        d1 += v / (r * e);
      }
      d1 /= double(m);
      EXPECT_LT(std::abs(d1 - airy::airy_ai_prime(t)), 1e-11 * scale) << t;
    }
  }
}

TEST(Airy, WronskianAiBi) {
  for (double x : {-9.0, -2.0, 0.0, 1.5, 3.0}) {
    auto [a, ap] = airy::ai_pair(cplx(x));
    auto [b, bp] = airy::bi_pair(cplx(x));
    EXPECT_NEAR(std::abs(a * bp - ap * b - 1.0 / pi), 0.0, 1e-12);
  }
}
