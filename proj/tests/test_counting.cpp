#include <gtest/gtest.h>

#include <boost/numeric/odeint.hpp>

#include <random>
#include <sstream>

#include "reslab/counting.hpp"

using namespace reslab;
using namespace reslab::counting;

namespace {

PotentialSpec zero_on(Interval I) { return square_well(0.0, I); }

PotentialSpec harmonic(Interval I) {
  PotentialSpec p;
  p.kind = PotentialKind::tabulated;
  p.support = I;
  p.evaluator = [](double x) { return x * x; };
  return p;
}

// Dirichlet eigenvalues by shooting with an adaptive integrator and bisection on u(hi).
std::vector<double> shooting_spectrum(const std::function<double(double)>& V, Interval I, double h, double lmax) {
  using state = std::array<double, 2>;
  auto end_value = [&](double l) {
    state y{0.0, 1.0};
    auto rhs = [&](const state& s, state& d, double x) {
      d[0] = s[1];
      d[1] = (V(x) - l) / (h * h) * s[0];
    };
    boost::numeric::odeint::integrate_adaptive(
        boost::numeric::odeint::make_controlled<boost::numeric::odeint::runge_kutta_dopri5<state>>(1e-13, 1e-13), rhs,
        y, I.lo, I.hi, 1e-3);
    return y[0];
  };
  std::vector<double> out;
  const int n = 4000;
  double a = -1.0, fa = end_value(a);
  for (int i = 1; i <= n; ++i) {
    double b = -1.0 + (lmax + 1.0) * i / n, fb = end_value(b);
    if (fa * fb < 0) {
      double lo = a, hi = b, flo = fa;
      for (int it = 0; it < 60; ++it) {
        double m = 0.5 * (lo + hi), fm = end_value(m);
        if (flo * fm <= 0) {
          hi = m;
        } else {
          lo = m;
          flo = fm;
        }
      }
      out.push_back(0.5 * (lo + hi));
    }
    a = b;
    fa = fb;
  }
  return out;
}

CountingFunction synthetic(std::vector<double> ev, double lmax = 5.0) {
  std::sort(ev.begin(), ev.end());
  CountingFunction cf;
  cf.eigenvalues = ev;
  cf.h = 0.05;
  cf.lambda_max = lmax;
  return cf;
}

// Direct evaluation of int_a^b (g_r * chi dN)(t) dt by Gauss-Legendre in t.
double convolution_oracle(const CountingFunction& cf, const Cutoff& chi, const Kernel& g, double r, double a, double b) {
  auto [x, w] = gauss_legendre(64);
  const int pieces = 400;
  double total = 0;
  for (int p = 0; p < pieces; ++p) {
    double lo = a + (b - a) * p / pieces, hi = a + (b - a) * (p + 1) / pieces;
    for (int i = 0; i < x.size(); ++i) {
      double t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x[i];
      double s = 0;
      for (double l : cf.eigenvalues) s += chi(l) * g.density((t - l) / r) / r;
      total += 0.5 * (hi - lo) * w[i] * s;
    }
  }
  return total;
}

}  // namespace

TEST(Spectrum, SineSpectrum) {
  auto cf = dirichlet_spectrum(zero_on({0.0, pi}), 1.0, 200.0);
  ASSERT_EQ(cf.eigenvalues.size(), 14u);
  for (int k = 1; k <= 14; ++k) EXPECT_NEAR(cf.eigenvalues[k - 1], double(k * k), 1e-8 * k * k);
}

TEST(Spectrum, HarmonicAgainstShooting) {
  const Interval I{-2.0, 2.0};
  const double h = 0.2;
  auto cf = dirichlet_spectrum(harmonic(I), h, 3.0);
  auto ref = shooting_spectrum([](double x) { return x * x; }, I, h, 3.0);
  ASSERT_EQ(cf.eigenvalues.size(), ref.size());
  for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(cf.eigenvalues[i], ref[i], 1e-7);
}

TEST(Spectrum, NodeDoublingStable) {
  auto V = smooth_bump(1.0, {-1, 1}, 2);
  for (double h : {0.1, 0.05}) {
    SpectrumSettings s;
    auto a = dirichlet_spectrum(V, h, 4.0, s);
    s.nodes_per_wavelength *= 2;
    auto b = dirichlet_spectrum(V, h, 4.0, s);
    ASSERT_EQ(a.eigenvalues.size(), b.eigenvalues.size());
    for (size_t i = 0; i < a.eigenvalues.size(); ++i) EXPECT_NEAR(a.eigenvalues[i], b.eigenvalues[i], 1e-8);
  }
}

TEST(Spectrum, TabulatedBreaksAreElementBoundaries) {
  auto V = tabulated({-1, -0.3, 0.4, 1}, {0, 1.5, -0.5, 0});
  SpectrumSettings s;
  auto a = dirichlet_spectrum(V, 0.1, 3.0, s);
  s.degree = 24;
  auto b = dirichlet_spectrum(V, 0.1, 3.0, s);
  ASSERT_EQ(a.eigenvalues.size(), b.eigenvalues.size());
  for (size_t i = 0; i < a.eigenvalues.size(); ++i) EXPECT_NEAR(a.eigenvalues[i], b.eigenvalues[i], 1e-8);
}

TEST(Spectrum, WeylRatioBounded) {
  auto V = smooth_bump(1.0, {-1, 1}, 2);
  double lo = INFINITY, hi = 0;
  for (double h : {0.2, 0.1, 0.05})
    for (double l : {1.5, 2.5, 4.0}) {
      auto cf = dirichlet_spectrum(V, h, l);
      double r = weyl_ratio(cf, l);
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  EXPECT_GT(lo, 0.1);
  EXPECT_LT(hi / lo, 4.0);
}

TEST(Spectrum, CoarseDiscretizationRejected) {
  SpectrumSettings s;
  s.degree = 4;
  s.elements = 1;
  EXPECT_THROW(dirichlet_spectrum(zero_on({0, pi}), 0.05, 4.0, s), Error);
}

TEST(Count, SineInterval) {
  auto cf = dirichlet_spectrum(zero_on({0.0, pi}), 1.0, 30.0);
  EXPECT_EQ(N0(cf, 0.5, 4.5), 2);
  EXPECT_EQ(N0(cf, 4.5, 0.5), 0);
  EXPECT_EQ(N0(cf, 2.0, 3.0), 0);
  EXPECT_THROW(N0(cf, 0.0, 31.0), Error);
}

TEST(Count, EndpointsAreIncluded) {
  auto cf = synthetic({1.0, 2.0, 3.0});
  EXPECT_EQ(N0(cf, 1.0, 3.0), 3);
  EXPECT_EQ(N0(cf, 2.0, 2.0), 1);
}

TEST(Count, AdditivityAndMonotonicity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<double> ev(200);
  for (auto& e : ev) e = u(rng);
  auto cf = synthetic(ev);
  std::vector<double> cuts{0.0};
  for (int i = 0; i < 9; ++i) cuts.push_back(u(rng));
  cuts.push_back(5.0);
  std::sort(cuts.begin(), cuts.end());
  int sum = 0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) sum += N0(cf, cuts[i], cuts[i + 1]);
  int shared = 0;
  for (size_t i = 1; i + 1 < cuts.size(); ++i) shared += N0(cf, cuts[i], cuts[i]);
  EXPECT_EQ(sum - shared, N0(cf, 0.0, 5.0));
  for (int t = 0; t < 50; ++t) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    double c = std::max(0.0, a - 0.3), d = std::min(5.0, b + 0.2);
    EXPECT_LE(N0(cf, a, b), N0(cf, c, d));
  }
}

TEST(Smoothed, FarSpectrumGivesExactCount) {
  auto cf = synthetic({0.7, 1.1, 1.6, 2.6, 3.0});
  Cutoff chi;
  auto s = smoothed_count(cf, chi, 0.01, 1.0, 2.0, 0.05);
  EXPECT_NEAR(s.value, 2.0, 1e-12);
  EXPECT_EQ(s.lower, 2);
  EXPECT_EQ(s.upper, 2);
}

TEST(Smoothed, EigenvalueAtTheEndpointCountsHalf) {
  auto cf = synthetic({1.0});
  Cutoff chi;
  Kernel g;
  EXPECT_NEAR(smoothed_value(cf, chi, g, 0.02, 1.0, 2.0), 0.5, 1e-12);
  EXPECT_NEAR(convolution_oracle(cf, chi, g, 0.02, 1.0, 2.0), 0.5, 1e-10);
}

TEST(Smoothed, MatchesDirectConvolution) {
  auto V = smooth_bump(1.0, {-1, 1}, 2);
  auto cf = dirichlet_spectrum(V, 0.1, 5.0);
  Cutoff chi;
  Kernel g;
  for (double r : {0.01, 0.05, 0.2})
    EXPECT_NEAR(smoothed_value(cf, chi, g, r, 0.6, 1.9), convolution_oracle(cf, chi, g, r, 0.6, 1.9), 1e-9);
}

TEST(Smoothed, SmallRRecoversCount) {
  auto V = smooth_bump(1.0, {-1, 1}, 2);
  auto cf = dirichlet_spectrum(V, 0.05, 5.0);
  Cutoff chi;
  Kernel g;
  std::vector<double> err;
  for (double r : {1e-2, 1e-3, 1e-4}) err.push_back(std::abs(smoothed_value(cf, chi, g, r, 0.55, 1.95) - N0(cf, 0.55, 1.95)));
  EXPECT_LT(err.back(), 1e-10);
  EXPECT_LE(err[2], err[0]);
}

TEST(Smoothed, SandwichOnRandomSpectra) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  Cutoff chi;
  for (double h : {0.2, 0.1, 0.05, 0.02}) {
    const double r = default_r(h, 1.0), rho = default_rho(h, 0.1);
    ASSERT_GE(rho / r, 4.0);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> ev(int(5 / h));
      for (auto& e : ev) e = u(rng);
      auto cf = synthetic(ev);
      double a = 0.5 + 0.5 * u(rng) / 5.0, b = 1.5 + 0.5 * u(rng) / 5.0;
      auto s = smoothed_count(cf, chi, r, a, b, rho);
      EXPECT_TRUE(s.ok);
      EXPECT_LT(s.tail, 1e-8);
    }
  }
}

TEST(Smoothed, TailIsSmallWhenRhoOverRIsFour) {
  Kernel g;
  EXPECT_LT(1000 * g.two_sided_tail(4.0), 1e-8);
}

TEST(MonteCarlo, Reproducible) {
  MonteCarloConfig c;
  c.window.h = 0.2;
  c.samples = 3;
  c.seed = 5;
  auto a = discrepancy_experiment(c);
  c.workers = 1;
  auto b = discrepancy_experiment(c);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].seed, b.records[i].seed);
    EXPECT_EQ(a.records[i].n_res, b.records[i].n_res);
    EXPECT_EQ(a.records[i].method_gap, b.records[i].method_gap);
  }
  for (const auto& r : a.records) {
    EXPECT_EQ(r.discrepancy, std::abs(r.n_res - r.n0_ab));
    EXPECT_FALSE(r.discarded) << r.note;
  }
}

TEST(MonteCarlo, EmptyIntervalControl) {
  MonteCarloConfig c;
  c.window = {0.5, 0.6, 1.0, 0.2};
  c.samples = 2;
  auto cf = dirichlet_spectrum(c.V, 0.2, 2.0);
  ASSERT_EQ(N0(cf, 0.5, 0.6), 0);
  auto r = discrepancy_experiment(c);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.n0_ab, 0);
    EXPECT_EQ(rec.discrepancy, rec.n_res);
  }
}

TEST(MonteCarlo, CsvHeader) {
  std::ostringstream os;
  write_records_csv(os, {DiscrepancyRecord{}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "index,seed,n_res,n0_ab,boundary_terms,discrepancy,bound,method_gap,within,discarded");
}
