#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "contour.hpp"
#include "error.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "perturb.hpp"
#include "resonance.hpp"

namespace reslab::counting {

struct CountingFunction {
  std::vector<double> eigenvalues;  // ascending, all <= lambda_max
  double h = 0.1;
  double lambda_max = 0.0;
};

struct SpectrumSettings {
  int degree = 16;                     // GLL degree per element
  double nodes_per_wavelength = 16.0;  // auto element size
  double max_element = 0.5;
  int elements = 0;                    // > 0 fixes the element count per smooth piece
};

namespace detail {

// Differentiation matrix on GLL nodes (ascending), from barycentric weights.
inline RMatrix gll_diff(const RVector& x) {
  const int n = int(x.size());
  RVector w = RVector::Ones(n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (k != j) w[j] /= (x[j] - x[k]);
  RMatrix D = RMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      if (i != j) D(i, j) = w[j] / w[i] / (x[i] - x[j]);
    D(i, i) = -D.row(i).sum();
  }
  return D;
}

inline double min_potential(const PotentialSpec& V, int samples = 2001) {
  double m = 0.0;
  for (int i = 0; i <= samples; ++i) m = std::min(m, V(V.support.lo + V.support.length() * i / samples));
  return m;
}

}  // namespace detail

// Local wavelength 2 pi h / sqrt(lambda_max - min V) at the top of the requested range.
inline double wavelength(const PotentialSpec& V, double h, double lambda_max) {
  double k = std::sqrt(std::max(lambda_max - detail::min_potential(V), 1e-12));
  return 2 * pi * h / k;
}

// Dirichlet spectrum of -h^2 d^2 + V on the obstacle: Galerkin on GLL spectral elements with the
// GLL quadrature, giving a symmetric matrix with a diagonal mass.
inline CountingFunction dirichlet_spectrum(const PotentialSpec& V, double h, double lambda_max,
                                           const SpectrumSettings& s = {}) {
  if (!(h > 0)) fail_validation("dirichlet_spectrum: h must be > 0");
  const double wl = wavelength(V, h, lambda_max);
  std::vector<double> cuts{V.support.lo};
  for (double b : V.breaks) cuts.push_back(b);
  cuts.push_back(V.support.hi);
  std::vector<std::pair<double, double>> elems;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    double len = cuts[i + 1] - cuts[i];
    int ne = s.elements > 0 ? s.elements
                            : std::max(1, int(std::ceil(len / std::min(s.max_element,
                                                                        s.degree * wl / s.nodes_per_wavelength))));
    for (int e = 0; e < ne; ++e) elems.push_back({cuts[i] + len * e / ne, cuts[i] + len * (e + 1) / ne});
  }
  const int p = s.degree;
  const int total = int(elems.size()) * p + 1;
  if ((total - 1) / V.support.length() * wl < 8.0)
    fail_validation("dirichlet_spectrum: fewer than 8 nodes per wavelength at lambda_max");
  auto [xi, wi] = gauss_lobatto_legendre(p);
  RMatrix D = detail::gll_diff(xi);
  RMatrix K = RMatrix::Zero(total, total);
  RVector M = RVector::Zero(total);
  for (size_t e = 0; e < elems.size(); ++e) {
    const double lo = elems[e].first, hi = elems[e].second, J = 0.5 * (hi - lo);
    const int off = int(e) * p;
    RMatrix Ke = (h * h / J) * D.transpose() * wi.asDiagonal() * D;
    for (int i = 0; i <= p; ++i) {
      // sample V just inside the element so jumps at the cuts are resolved per side
      double t = std::clamp(xi[i], -1 + 1e-12, 1 - 1e-12);
      Ke(i, i) += J * wi[i] * V(0.5 * (lo + hi) + J * t);
      M[off + i] += J * wi[i];
    }
    K.block(off, off, p + 1, p + 1) += Ke;
  }
  const int n = total - 2;
  RVector m = M.segment(1, n).cwiseSqrt().cwiseInverse();
  RMatrix A = m.asDiagonal() * K.block(1, 1, n, n) * m.asDiagonal();
  Eigen::SelfAdjointEigenSolver<RMatrix> es(A, Eigen::EigenvaluesOnly);
  CountingFunction cf;
  cf.h = h;
  cf.lambda_max = lambda_max;
  for (int i = 0; i < n; ++i)
    if (es.eigenvalues()[i] <= lambda_max) cf.eigenvalues.push_back(es.eigenvalues()[i]);
  return cf;
}

// Closed-interval count; ties at the endpoints are included.
inline int N0(const CountingFunction& cf, double lo, double hi) {
  if (hi > cf.lambda_max * (1 + 1e-12)) fail_validation("N0: interval exceeds lambda_max");
  if (lo > hi) return 0;
  auto b = std::lower_bound(cf.eigenvalues.begin(), cf.eigenvalues.end(), lo);
  auto e = std::upper_bound(cf.eigenvalues.begin(), cf.eigenvalues.end(), hi);
  return int(e - b);
}

// Rough Weyl ratio N(lambda) h / sqrt(lambda) for n = 1.
inline double weyl_ratio(const CountingFunction& cf, double lambda) {
  return N0(cf, -INFINITY, lambda) * cf.h / std::sqrt(lambda);
}

// Smooth cutoff: 1 on [inner_lo, inner_hi], 0 outside [outer_lo, outer_hi].
struct Cutoff {
  double outer_lo = 0.1, inner_lo = 0.25, inner_hi = 3.5, outer_hi = 4.5;
  double operator()(double t) const {
    using reslab::detail::smooth_step;
    if (t < inner_lo) return smooth_step((t - outer_lo) / (inner_lo - outer_lo));
    if (t > inner_hi) return smooth_step((outer_hi - t) / (outer_hi - inner_hi));
    return 1.0;
  }
};

// g_1: centred Gaussian with standard deviation sigma.
struct Kernel {
  double sigma = 0.5;
  double density(double t) const { return std::exp(-0.5 * t * t / (sigma * sigma)) / (sigma * std::sqrt(2 * pi)); }
  double cdf(double t) const { return 0.5 * std::erfc(-t / (sigma * std::sqrt(2.0))); }
  double two_sided_tail(double t) const { return std::erfc(t / (sigma * std::sqrt(2.0))); }
};

struct SmoothedCount {
  double value = 0.0;
  double r = 0.0, rho = 0.0;
  int lower = 0, upper = 0;  // N0 brackets
  double tail = 0.0;
  bool ok = true;
};

inline double smoothed_value(const CountingFunction& cf, const Cutoff& chi, const Kernel& g, double r, double a,
                             double b) {
  if (!(r > 0)) fail_validation("smoothed_count: r must be > 0");
  double v = 0;
  for (double l : cf.eigenvalues) {
    double c = chi(l);
    if (c == 0.0) continue;
    v += c * (g.cdf((b - l) / r) - g.cdf((a - l) / r));
  }
  return v;
}

// Integral over [a, b] of g_r * (chi dN0) with the N0(. +- rho) sandwich asserted.
inline SmoothedCount smoothed_count(const CountingFunction& cf, const Cutoff& chi, double r, double a, double b,
                                    double rho, const Kernel& g = {}) {
  if (cf.lambda_max < chi.outer_hi) fail_validation("smoothed_count: spectrum must cover the cutoff support");
  SmoothedCount s;
  s.r = r;
  s.rho = rho;
  s.value = smoothed_value(cf, chi, g, r, a, b);
  int in_support = 0;
  for (double l : cf.eigenvalues)
    if (chi(l) > 0) ++in_support;
  s.tail = in_support * g.two_sided_tail(rho / r);
  s.upper = N0(cf, a - rho, b + rho);
  s.lower = b - a >= 2 * rho ? N0(cf, a + rho, b - rho) : 0;
  s.ok = s.value >= s.lower - s.tail - 1e-12 && s.value <= s.upper + s.tail + 1e-12;
  if (!s.ok) fail_numerical("smoothed_count: sandwich violated beyond the tail");
  return s;
}

inline double default_r(double h, double c) { return std::pow(h, 2.0 / 3.0) * c / 4.0; }
inline double default_rho(double h, double delta0) { return std::pow(h, 2.0 / 3.0 - delta0); }
inline double default_eps_tilde(double h, double C = 10.0) {
  double l = std::log(1.0 / h);
  return C * h * l * l;
}

// Monte Carlo discrepancy statistic.

struct DiscrepancyRecord {
  int index = 0;
  std::uint64_t seed = 0;
  int n_res = 0;
  int n0_ab = 0;
  int boundary_terms = 0;
  int discrepancy = 0;
  double bound = 0.0;
  double method_gap = 0.0;
  bool within = false;
  bool discarded = false;
  std::string note;
};

struct MonteCarloConfig {
  PotentialSpec V = smooth_bump(1.0, {-1.0, 1.0}, 2);
  SpectralWindow window{0.5, 2.0, 1.0, 0.05};
  int samples = 50;
  std::uint64_t seed = 1;
  double delta0 = 0.1;
  double eps_constant = 10.0;
  double C = 1.0;
  // desk-scale perturbation: L, R = sqrt(D), delta such that the sup bound is sup_fraction * h
  double L = 4.0;
  double sup_fraction = 0.5;
  int v0 = 0;  // 0 takes V.v0
  double agreement = 1e-6;
  double theta = pi / 3;
  double truncation = 2.0;
  int workers = 0;
};

struct MonteCarloSummary {
  double h = 0.0;
  SpectralWindow window;
  int samples = 0;
  int discarded = 0;
  double frac_within_bound = 0.0;
  double mean_discrepancy = 0.0;
  double mean_n0 = 0.0;
  double mean_relative = 0.0;
  double empirical_constant = 0.0;
  double eps_tilde = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
};

struct MonteCarloResult {
  std::vector<DiscrepancyRecord> records;
  MonteCarloSummary summary;
};

struct ResonanceCount {
  int count = 0;
  double gap = 0.0;
  bool agree = false;
  std::string note;
};

// Both resonance methods in the window box; agreement requires equal counts and a Hausdorff gap
// below tol.
inline ResonanceCount count_resonances(const PotentialSpec& V, const SpectralWindow& w, double tol, double theta,
                                       double truncation) {
  ResonanceCount rc;
  double vmax = 0;
  for (int i = 0; i <= 400; ++i) vmax = std::max(vmax, std::abs(V(V.support.lo + V.support.length() * i / 400)));
  Discretization disc = auto_discretization(w.h, w.b + vmax);
  try {
    auto a = resonances_by_scaling(assemble(V, make_scaled_contour(V.support, theta, Smoothness::lipschitz, truncation),
                                            w.h, disc),
                                   w);
    DetdiffSettings s;
    s.dn.truncation = truncation;
    s.dn.theta = theta;
    s.dn.interior = disc;
    s.dn.exterior = disc;
    auto b = resonances_by_detdiff(make_dn_model(V, w.h, s.dn), w, s);
    rc.count = a.count();
    rc.gap = hausdorff(a, b);
    rc.agree = a.count() == b.count() && rc.gap <= tol;
    if (!rc.agree) rc.note = "methods disagree: " + std::to_string(a.count()) + " vs " + std::to_string(b.count());
  } catch (const Error& e) {
    rc.agree = false;
    rc.note = e.what();
  }
  return rc;
}

inline MonteCarloResult discrepancy_experiment(const MonteCarloConfig& cfg) {
  if (cfg.samples < 1) fail_validation("discrepancy_experiment: samples must be >= 1");
  const SpectralWindow& w = cfg.window;
  const double h = w.h;
  const Interval obst = cfg.V.support;
  const int v0 = cfg.v0 > 0 ? cfg.v0 : cfg.V.v0;
  const double rho = default_rho(h, cfg.delta0);
  const double eps = default_eps_tilde(h, cfg.eps_constant);
  auto cf = dirichlet_spectrum(cfg.V, h, w.b + 2 * rho + 0.5);
  const int n0 = N0(cf, w.a, w.b);
  const int boundary = N0(cf, w.a - rho, w.a + rho) + N0(cf, w.b - rho, w.b + rho);
  const double bound = cfg.C * (boundary + std::pow(h, -2.0 / 3.0 - 1.0) * eps);

  auto basis = perturb::build_basis(cfg.L, h, {obst.lo - 1.0, obst.hi + 1.0});
  const double R = std::sqrt(double(basis.dim()));
  RVector th = perturb::theta_weight(obst, v0, basis.x);
  const double delta = cfg.sup_fraction * h / (th.maxCoeff() * R * std::sqrt(2.0 * basis.dim() / basis.length));

  MonteCarloResult out;
  out.records.resize(cfg.samples);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < cfg.samples; i = next++) {
      DiscrepancyRecord rec;
      rec.index = i;
      rec.seed = perturb::stream_seed(cfg.seed, i);
      auto d = perturb::sample_draw(basis, R, rec.seed, obst, v0, delta);
      PotentialSpec Vp = cfg.V;
      auto base = cfg.V.evaluator;
      RVector alpha = d.alpha;
      Vp.evaluator = [base, alpha, &basis, obst, v0, delta](double x) {
        return base(x) + delta * perturb::theta_at(obst, v0, x) * perturb::synthesize_at(basis, alpha, x);
      };
      auto rc = count_resonances(Vp, w, cfg.agreement, cfg.theta, cfg.truncation);
      rec.n_res = rc.count;
      rec.n0_ab = n0;
      rec.boundary_terms = boundary;
      rec.discrepancy = std::abs(rc.count - n0);
      rec.bound = bound;
      rec.method_gap = rc.gap;
      rec.discarded = !rc.agree;
      rec.note = rc.note;
      rec.within = !rec.discarded && rec.discrepancy <= bound;
      out.records[i] = rec;
    }
  };
  int nw = cfg.workers > 0 ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  nw = std::min(nw, cfg.samples);
  std::vector<std::thread> pool;
  for (int t = 0; t < nw; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  auto& s = out.summary;
  s.h = h;
  s.window = w;
  s.seed = cfg.seed;
  s.eps_tilde = eps;
  s.delta = delta;
  int kept = 0, within = 0;
  double disc = 0, worst = 0;
  for (const auto& r : out.records) {
    if (r.discarded) {
      ++s.discarded;
      continue;
    }
    ++kept;
    within += r.within;
    disc += r.discrepancy;
    worst = std::max(worst, r.discrepancy / (boundary + std::pow(h, -5.0 / 3.0) * eps));
  }
  s.samples = kept;
  s.mean_n0 = n0;
  if (kept > 0) {
    s.frac_within_bound = double(within) / kept;
    s.mean_discrepancy = disc / kept;
    s.mean_relative = n0 > 0 ? s.mean_discrepancy / n0 : INFINITY;
    s.empirical_constant = worst;
  }
  return out;
}

inline void write_records_csv(std::ostream& os, const std::vector<DiscrepancyRecord>& rs) {
  os << "index,seed,n_res,n0_ab,boundary_terms,discrepancy,bound,method_gap,within,discarded\n";
  os.precision(12);
  for (const auto& r : rs)
    os << r.index << ',' << r.seed << ',' << r.n_res << ',' << r.n0_ab << ',' << r.boundary_terms << ','
       << r.discrepancy << ',' << r.bound << ',' << r.method_gap << ',' << int(r.within) << ',' << int(r.discarded)
       << '\n';
}

}  // namespace reslab::counting
