#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "numerics.hpp"

namespace reslab::perturb {

// Real trigonometric eigenbasis of -d^2 on the torus [x0, x0 + length), truncated at mu_k = h|w_k| <= L.
// Mode k has frequency index m_k >= 1 and parity (0: cosine, 1: sine); the constant mode has mu = 0
// and is left out.
struct SpectralBasis {
  double x0 = 0.0, length = 2 * pi, h = 1.0, L = 1.0;
  std::vector<int> index;
  std::vector<int> parity;
  std::vector<double> mu;
  RVector x;                  // equispaced torus grid
  std::vector<RVector> modes; // values on x

  int dim() const { return int(mu.size()); }
  double omega(int k) const { return 2 * pi * index[k] / length; }
  double eval(int k, double t) const {
    double a = omega(k) * (t - x0);
    return std::sqrt(2.0 / length) * (parity[k] ? std::sin(a) : std::cos(a));
  }
  double eval_d2(int k, double t) const { return -omega(k) * omega(k) * eval(k, t); }
  double spacing() const { return length / double(x.size()); }
};

inline SpectralBasis build_basis(double L, double h, Interval domain, int grid = 0) {
  if (!(L > 0 && h > 0)) fail_validation("build_basis: L and h must be > 0");
  if (!(domain.length() > 0)) fail_validation("build_basis: empty domain");
  SpectralBasis b;
  b.x0 = domain.lo;
  b.length = domain.length();
  b.h = h;
  b.L = L;
  const int mmax = int(std::floor(L * b.length / (2 * pi * h) + 1e-12));
  for (int m = 1; m <= mmax; ++m) {
    double mu = h * 2 * pi * m / b.length;
    for (int p = 0; p < 2; ++p) {
      b.index.push_back(m);
      b.parity.push_back(p);
      b.mu.push_back(mu);
    }
  }
  if (b.mu.empty()) fail_validation("build_basis: empty basis (L too small)");
  int n = grid > 0 ? grid : std::max(64, 4 * mmax + 8);
  if (n <= 2 * mmax) fail_validation("build_basis: grid too coarse for the basis");
  b.x.resize(n);
  for (int i = 0; i < n; ++i) b.x[i] = b.x0 + b.length * i / n;
  for (int k = 0; k < b.dim(); ++k) {
    RVector v(n);
    for (int i = 0; i < n; ++i) v[i] = b.eval(k, b.x[i]);
    b.modes.push_back(std::move(v));
  }
  return b;
}

// Weyl count for n = 1: (L/h) * length / pi.
inline double weyl_dimension(const SpectralBasis& b) { return b.L / b.h * b.length / pi; }

inline RMatrix mode_matrix(const SpectralBasis& b) {
  RMatrix E(b.x.size(), b.dim());
  for (int k = 0; k < b.dim(); ++k) E.col(k) = b.modes[k];
  return E;
}

inline RVector synthesize(const SpectralBasis& b, const RVector& alpha) { return mode_matrix(b) * alpha; }

inline double synthesize_at(const SpectralBasis& b, const RVector& alpha, double t) {
  double s = 0;
  for (int k = 0; k < b.dim(); ++k) s += alpha[k] * b.eval(k, t);
  return s;
}

// Weight comparable to dist(x, boundary)^v0 inside the obstacle, zero outside. The distance is
// replaced by the smooth l^-p mean of the two one-sided distances with p = 2 v0.
inline void check_v0(int v0, int n = 1) {
  if (v0 < 1 || !(v0 > (n - 1) / 2.0)) fail_validation("theta_weight: v0 not admissible");
}

inline double theta_at(Interval obstacle, int v0, double x) {
  if (x <= obstacle.lo || x >= obstacle.hi) return 0.0;
  const double p = 2.0 * v0;
  double a = x - obstacle.lo, b = obstacle.hi - x;
  double m = std::min(a, b), M = std::max(a, b);
  double d = m * std::pow(1.0 + std::pow(m / M, p), -1.0 / p);
  return std::pow(d, v0);
}

inline RVector theta_weight(Interval obstacle, int v0, const RVector& grid) {
  check_v0(v0);
  RVector t(grid.size());
  for (int i = 0; i < grid.size(); ++i) t[i] = theta_at(obstacle, v0, grid[i]);
  return t;
}

inline double boundary_distance(Interval obstacle, double x) {
  if (x <= obstacle.lo || x >= obstacle.hi) return 0.0;
  return std::min(x - obstacle.lo, obstacle.hi - x);
}

// Random draws.

// Log-density Phi(alpha) relative to the uniform law on the ball; must be <= 0.
using LogDensity = std::function<double(const RVector&)>;

struct PerturbationDraw {
  RVector alpha;
  RVector q, theta, realized;
  double R = 0.0, delta = 0.0;
  std::uint64_t seed = 0;
  int rejections = 0;
};

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  std::seed_seq s{std::uint32_t(master), std::uint32_t(master >> 32), std::uint32_t(index), std::uint32_t(index >> 32)};
  std::uint32_t w[2];
  s.generate(w, w + 2);
  return (std::uint64_t(w[0]) << 32) | w[1];
}

inline RVector uniform_ball(int D, double R, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u;
  RVector a(D);
  double nrm = 0;
  do {
    for (int k = 0; k < D; ++k) a[k] = g(rng);
    nrm = a.norm();
  } while (nrm == 0.0);
  return a * (R * std::pow(u(rng), 1.0 / D) / nrm);
}

inline PerturbationDraw sample_draw(const SpectralBasis& b, double R, std::uint64_t seed, Interval obstacle,
                                    int v0 = 1, double delta = 1.0, const LogDensity& phi = {},
                                    int max_rejections = 100000) {
  if (!(R >= 0)) fail_validation("sample_draw: R must be >= 0");
  PerturbationDraw d;
  d.R = R;
  d.delta = delta;
  d.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  for (;;) {
    d.alpha = R > 0 ? uniform_ball(b.dim(), R, rng) : RVector::Zero(b.dim());
    if (!phi) break;
    double p = phi(d.alpha);
    if (p > 1e-12) fail_validation("sample_draw: log-density must be <= 0");
    if (u(rng) < std::exp(p)) break;
    if (++d.rejections > max_rejections) fail_numerical("sample_draw: rejection sampler stalled");
  }
  d.q = synthesize(b, d.alpha);
  d.theta = theta_weight(obstacle, v0, b.x);
  d.realized = delta * d.theta.cwiseProduct(d.q);
  return d;
}

// Draws for indices 0..count-1, each from its own stream; the result does not depend on workers.
inline std::vector<PerturbationDraw> sample_draws(const SpectralBasis& b, double R, std::uint64_t master, int count,
                                                  Interval obstacle, int v0 = 1, double delta = 1.0,
                                                  int workers = 0) {
  std::vector<PerturbationDraw> out(count);
  int w = workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency());
  w = std::min(w, std::max(count, 1));
  std::vector<std::thread> pool;
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < count; i += w) out[i] = sample_draw(b, R, stream_seed(master, i), obstacle, v0, delta);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

// Gramian point selection.

// Omega = O_h \ O_2h for an interval obstacle: the two layers h < dist <= 2h.
inline std::vector<Interval> boundary_layer(Interval obstacle, double h) {
  if (!(4 * h < obstacle.length())) fail_validation("boundary_layer: h too large for the obstacle");
  return {{obstacle.lo + h, obstacle.lo + 2 * h}, {obstacle.hi - 2 * h, obstacle.hi - h}};
}

inline double volume(const std::vector<Interval>& omega) {
  double v = 0;
  for (const auto& I : omega) v += I.length();
  return v;
}

using Family = std::function<CVector(double)>;  // x -> (e_1(x), ..., e_N(x))

struct GramianSelection {
  std::vector<Interval> omega;
  double vol = 0.0;
  CMatrix gram;
  RVector eps_sorted;         // ascending
  RVector E;                  // E_j = eps_1 + ... + eps_{N+1-j}
  std::vector<double> points;
  CMatrix M;                  // M_jk = sum_nu e_j(a_nu) e_k(a_nu)
  RVector s;                  // singular values of M, descending
  double det_abs2 = 0.0;      // |det(e_j(a_nu))|^2
  int candidates = 0;
  int refinements = 0;
  bool sv1 = false, sv2 = false;
  double sv1_margin = 0.0;    // s_1 vol / (E_1..E_N)^(1/N)
  int N() const { return int(gram.rows()); }
};

inline RVector ky_fan_sums(const RVector& eps) {
  const int N = int(eps.size());
  RVector E(N);
  for (int j = 1; j <= N; ++j) E[j - 1] = eps.head(N + 1 - j).sum();
  return E;
}

// Chain lower bound for s_k; k = 1 is the volume bound.
inline double chain_bound(const GramianSelection& g, int k) {
  const int N = g.N();
  double logprod = 0;
  for (int j = 0; j < N; ++j) logprod += std::log(std::max(g.E[j], 1e-300));
  if (k == 1) return std::exp(logprod / N) / g.vol;
  double s1 = g.s[0];
  return s1 * std::exp((logprod - N * std::log(s1 * g.vol)) / (N - k + 1));
}

inline void verify_bounds(GramianSelection& g, double rel = 1e-10) {
  const int N = g.N();
  double b1 = chain_bound(g, 1);
  g.sv1_margin = g.s[0] / b1;
  g.sv1 = g.s[0] >= b1 * (1 - rel);
  g.sv2 = true;
  for (int k = 2; k <= N; ++k)
    if (g.s[k - 1] < chain_bound(g, k) * (1 - rel)) g.sv2 = false;
}

namespace detail {

// Greedy volume maximization: each step takes the candidate with the largest component orthogonal
// to the span of the previous picks.
inline std::vector<int> greedy_pick(const CMatrix& values, int N) {
  const int m = int(values.rows());
  CMatrix R = values;  // rows are e(x)^T, projected in place
  std::vector<int> picks;
  std::vector<char> used(m, 0);
  for (int nu = 0; nu < N; ++nu) {
    int best = -1;
    double bv = -1;
    for (int i = 0; i < m; ++i) {
      if (used[i]) continue;
      double v = R.row(i).squaredNorm();
      if (v > bv) bv = v, best = i;
    }
    if (best < 0 || bv <= 0) break;
    picks.push_back(best);
    used[best] = 1;
    CVector q = R.row(best).transpose() / std::sqrt(bv);
    // remove the component along conj(q) in the Hermitian sense: r <- r - (r . conj q) q^T
    CVector c = R * q.conjugate();
    R -= c * q.transpose();
  }
  return picks;
}

inline std::vector<double> candidate_grid(const std::vector<Interval>& omega, int m) {
  double vol = volume(omega);
  std::vector<double> pts;
  for (const auto& I : omega) {
    int k = std::max(1, int(std::round(m * I.length() / vol)));
    for (int i = 0; i < k; ++i) pts.push_back(I.lo + (i + 0.5) * I.length() / k);
  }
  return pts;
}

}  // namespace detail

inline CMatrix gramian(const Family& e, int N, const std::vector<Interval>& omega, int quad = 64) {
  auto [t, w] = gauss_legendre(quad);
  CMatrix G = CMatrix::Zero(N, N);
  for (const auto& I : omega) {
    double c = 0.5 * (I.lo + I.hi), r = 0.5 * I.length();
    for (int i = 0; i < quad; ++i) {
      CVector v = e(c + r * t[i]);
      G += (w[i] * r) * v * v.adjoint();
    }
  }
  return G;
}

// Selection from values on explicit candidates; gram given.
inline GramianSelection select_from(const CMatrix& values, const std::vector<double>& pts, const CMatrix& gram,
                                    double vol) {
  const int N = int(gram.rows());
  GramianSelection g;
  g.vol = vol;
  g.gram = gram;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (gram + gram.adjoint()));
  g.eps_sorted = es.eigenvalues().cwiseMax(0.0);
  g.E = ky_fan_sums(g.eps_sorted);
  g.candidates = int(pts.size());
  auto picks = detail::greedy_pick(values, N);
  if (int(picks.size()) < N) fail_numerical("gramian_select: family degenerate on the candidates");
  CMatrix Ea(N, N);  // Ea(j, nu) = e_j(a_nu)
  for (int nu = 0; nu < N; ++nu) {
    g.points.push_back(pts[picks[nu]]);
    Ea.col(nu) = values.row(picks[nu]).transpose();
  }
  g.M = Ea * Ea.transpose();
  g.det_abs2 = std::norm(Ea.determinant());
  g.s = Eigen::JacobiSVD<CMatrix>(g.M).singularValues();
  verify_bounds(g);
  return g;
}

inline GramianSelection gramian_select(const Family& e, int N, const std::vector<Interval>& omega,
                                       int candidates_per_function = 50, int quad = 64) {
  if (N < 1) fail_validation("gramian_select: N must be >= 1");
  if (omega.empty() || !(volume(omega) > 0)) fail_validation("gramian_select: empty domain");
  CMatrix G = gramian(e, N, omega, quad);
  int m = candidates_per_function * N;
  for (int attempt = 0; attempt < 2; ++attempt, m *= 4) {
    auto pts = detail::candidate_grid(omega, m);
    CMatrix vals(pts.size(), N);
    for (size_t i = 0; i < pts.size(); ++i) vals.row(i) = e(pts[i]).transpose();
    GramianSelection g = select_from(vals, pts, G, volume(omega));
    g.omega = omega;
    g.refinements = attempt;
    if (g.sv1 && g.sv2) return g;
  }
  fail_numerical("gramian_select: singular value bounds violated after refinement");
}

// Small singular family of the outgoing interior problem: -h^2 u'' + V u - z u on the obstacle with
// h du/dnu = i sqrt(z) u at both ends, Chebyshev collocation in the L^2 metric.
struct OutgoingFamily {
  Interval obstacle;
  RVector nodes;          // Lobatto nodes on the obstacle, descending
  CMatrix values;         // column j: e_j at the nodes, L^2-normalized
  RVector t;              // ascending singular values
  CVector operator()(double x) const {
    const int n = int(nodes.size()) - 1;
    CVector num = CVector::Zero(values.cols());
    cplx den = 0;
    for (int j = 0; j <= n; ++j) {
      double d = x - nodes[j];
      double w = ((j == 0 || j == n) ? 0.5 : 1.0) * ((j % 2) ? -1.0 : 1.0);
      if (d == 0.0) return values.row(j).transpose();
      num += (w / d) * values.row(j).transpose();
      den += w / d;
    }
    return num / den;
  }
};

inline OutgoingFamily outgoing_family(const std::function<double(double)>& V, Interval obstacle, double h, cplx z,
                                      int N, int n = 160) {
  OutgoingFamily f;
  f.obstacle = obstacle;
  const double c = 0.5 * (obstacle.lo + obstacle.hi), r = 0.5 * obstacle.length();
  RVector xi = cheb::lobatto(n);
  f.nodes = (c + r * xi.array()).matrix();
  RMatrix D = cheb::diff_matrix(n) / r;
  RVector w = cheb::cc_weights(n) * r;
  CMatrix A = (-h * h) * (D * D).cast<cplx>();
  for (int i = 0; i <= n; ++i) A(i, i) += V(f.nodes[i]) - z;
  const cplx k = std::sqrt(z);
  // rows: x = hi (node 0) with normal +d/dx, x = lo (node n) with normal -d/dx
  CMatrix B(2, n + 1);
  B.row(0) = (h * D.row(0)).cast<cplx>();
  B.row(1) = (-h * D.row(n)).cast<cplx>();
  B(0, 0) -= I * k;
  B(1, n) -= I * k;
  CMatrix BE(2, 2), BI(2, n - 1);
  BE.col(0) = B.col(0);
  BE.col(1) = B.col(n);
  BI = B.middleCols(1, n - 1);
  CMatrix lift = -BE.partialPivLu().solve(BI);
  CMatrix Ared = A.block(1, 1, n - 1, n - 1) + A.block(1, 0, n - 1, 1) * lift.row(0) +
                 A.block(1, n, n - 1, 1) * lift.row(1);
  RVector sw = w.segment(1, n - 1).cwiseSqrt();
  CMatrix S = sw.asDiagonal() * Ared * sw.cwiseInverse().asDiagonal();
  Eigen::BDCSVD<CMatrix> svd(S, Eigen::ComputeThinV);
  RVector sv = svd.singularValues();
  f.t = sv.reverse();
  f.values.resize(n + 1, N);
  for (int j = 0; j < N; ++j) {
    CVector uI = sw.cwiseInverse().asDiagonal() * svd.matrixV().col(n - 2 - j);
    CVector u(n + 1);
    u.segment(1, n - 1) = uI;
    u[0] = (lift.row(0) * uI)(0);
    u[n] = (lift.row(1) * uI)(0);
    double nrm = std::sqrt((w.array() * u.array().abs2()).sum());
    f.values.col(j) = u / nrm;
  }
  return f;
}

// L^2 mass of each family member on the given sub-domain.
inline RVector restricted_mass(const Family& e, int N, const std::vector<Interval>& omega, int quad = 64) {
  CMatrix G = gramian(e, N, omega, quad);
  return G.diagonal().real();
}

// Point-mass decomposition.

struct Decomposition {
  std::vector<RVector> alpha;      // per point, coefficients on the basis
  RVector alpha_total;             // sum over points
  std::vector<double> remainder;   // semiclassical H^-s norm of the part above L
  std::vector<double> total;       // H^-s norm of the mollified mass
  double alpha_norm = 0.0;
  double alpha_shape = 0.0;        // L^(1/2+eps) N / (h^v0 h^(1/2))
  double width = 0.0;
};

namespace detail {

// Fourier coefficients c_m = (1/n) sum f_j e^{-2 pi i j m / n}, m = 0..n-1.
inline CVector dft(const RVector& f) {
  Eigen::FFT<double> fft;
  std::vector<double> in(f.data(), f.data() + f.size());
  std::vector<cplx> out;
  fft.fwd(out, in);
  CVector c(f.size());
  for (int m = 0; m < f.size(); ++m) c[m] = out[m] / double(f.size());
  return c;
}

// Semiclassical Sobolev norm sum <h w_m>^{2s} |f_m|^2 length over grid modes, optionally restricted
// to h|w_m| > cutoff.
inline double sobolev_norm(const RVector& f, double length, double h, double s, double cutoff = -1) {
  CVector c = dft(f);
  const int n = int(f.size());
  double sum = 0;
  for (int m = 0; m < n; ++m) {
    int k = m <= n / 2 ? m : m - n;
    double mu = h * 2 * pi * std::abs(k) / length;
    if (cutoff >= 0 && mu <= cutoff) continue;
    sum += std::pow(1 + mu * mu, s) * std::norm(c[m]) * length;
  }
  return std::sqrt(sum);
}

}  // namespace detail

// Theta^-1 times a Gaussian bump of the given width centred at a, on the torus grid.
inline RVector mollified_mass(const SpectralBasis& b, Interval obstacle, int v0, double a, double width) {
  RVector f(b.x.size());
  for (int i = 0; i < f.size(); ++i) {
    double d = b.x[i] - a;
    d -= b.length * std::round(d / b.length);
    double th = theta_at(obstacle, v0, b.x[i]);
    double g = std::exp(-0.5 * d * d / (width * width)) / (width * std::sqrt(2 * pi));
    f[i] = th > 0 ? g / th : 0.0;
  }
  return f;
}

inline Decomposition decompose_point_masses(const std::vector<double>& points, const SpectralBasis& b,
                                            Interval obstacle, int v0, double s = 1.0, double eps = 0.25,
                                            double width = 0.0) {
  Decomposition d;
  d.alpha_total = RVector::Zero(b.dim());
  d.width = width > 0 ? width : 2 * b.spacing();
  const double dx = b.spacing();
  RMatrix E = mode_matrix(b);
  for (double a : points) {
    if (!(theta_at(obstacle, v0, a) > 0)) fail_validation("decompose_point_masses: point outside the obstacle");
    RVector f = mollified_mass(b, obstacle, v0, a, d.width);
    RVector al = dx * (E.transpose() * f);
    d.alpha.push_back(al);
    d.alpha_total += al;
    d.remainder.push_back(detail::sobolev_norm(f, b.length, b.h, -s, b.L));
    d.total.push_back(detail::sobolev_norm(f, b.length, b.h, -s));
    if (d.remainder.back() > 0.75 * d.total.back())
      fail_numerical("decompose_point_masses: remainder dominates, L too small");
  }
  d.alpha_norm = d.alpha_total.norm();
  double th = std::pow(b.h, v0);
  d.alpha_shape = std::pow(b.L, 0.5 + eps) * double(points.size()) / (th * std::sqrt(b.h));
  return d;
}

// Norm report for W = delta Theta q.
struct NormReport {
  double sobolev = 0.0;  // semiclassical H^s norm
  double sup = 0.0;
  double shape = 0.0;    // delta L^s R
  double sup_bound = 0.0;
};

inline NormReport perturbation_norm_report(const PerturbationDraw& d, const SpectralBasis& b, double s_tilde,
                                           int v0 = 1, int n = 1) {
  if (!(s_tilde > n / 2.0 && s_tilde < v0 + 0.5)) fail_validation("perturbation_norm_report: s_tilde out of range");
  NormReport r;
  r.sobolev = detail::sobolev_norm(d.realized, b.length, b.h, s_tilde);
  r.sup = d.realized.cwiseAbs().maxCoeff();
  r.shape = d.delta * std::pow(b.L, s_tilde) * d.R;
  r.sup_bound = d.delta * d.theta.cwiseAbs().maxCoeff() * d.R * std::sqrt(2.0 * b.dim() / b.length);
  return r;
}

// Smallest alpha making the Cauchy-Schwarz sup bound delta R sqrt(2D/len) of the derived parameters
// at most h, up to h-independent factors: exponent of h in delta R L^(1/2) h^(-1/2) must reach 1.
inline double min_alpha_for_sup(const PerturbationConfig& c) {
  return 1.0 - 5.0 / 3.0 + c.M_tilde + 0.5 * c.M + 0.5;
}

// Log10 of the sup bound for derived parameters on an obstacle of the given length (Theta <= 1).
inline double log10_sup_bound(const PerturbationConfig& c, double h, double length) {
  double D = c.L / h * length / pi + 1;
  return std::log10(c.delta) + std::log10(c.R) + 0.5 * std::log10(2 * D / length);
}

// Singular value boosting at matrix scale. A acts on values at grid points x (inside the obstacle);
// admissible perturbations are diagonal multiplications by Theta q with q in the basis span.
struct BoostStep {
  int iteration = 0;
  int n_small = 0;
  double t1 = 0.0;
  double threshold = 0.0;
  double delta = 0.0;
};

struct BoostResult {
  CMatrix A;
  RVector q_total;  // accumulated delta Theta q on the grid
  std::vector<BoostStep> history;
  double target = 0.0;
  bool reached = false;
  int iterations() const { return int(history.size()) - 1; }
};

struct BoostSettings {
  double h = 0.1;
  double tau0 = 0.0;       // 0 selects h^(4/3)
  double shrink = 0.0;     // threshold factor per step; 0 selects h^2
  double target = 0.0;     // 0 selects tau0 h^(log 1/h)
  int max_iters = 0;       // 0 selects ceil(3 ln 1/h) + 2
  int v0 = 1;
};

inline RVector singular_values_asc(const CMatrix& A) {
  RVector s = Eigen::JacobiSVD<CMatrix>(A).singularValues();
  return s.reverse();
}

inline BoostResult boost_singular_values(const CMatrix& A0, const RVector& x, Interval obstacle,
                                         const SpectralBasis& basis, const BoostSettings& s) {
  if (A0.rows() != A0.cols()) fail_validation("boost_singular_values: A must be square");
  if (x.size() != A0.rows()) fail_validation("boost_singular_values: grid size mismatch");
  const double h = s.h;
  const double tau0 = s.tau0 > 0 ? s.tau0 : std::pow(h, 4.0 / 3.0);
  if (!(tau0 <= std::pow(h, 4.0 / 3.0) * (1 + 1e-12))) fail_validation("boost_singular_values: tau0 > h^(4/3)");
  const double shrink = s.shrink > 0 ? s.shrink : h * h;
  const int max_iters = s.max_iters > 0 ? s.max_iters : int(std::ceil(3 * std::log(1 / h))) + 2;
  BoostResult r;
  r.A = A0;
  r.q_total = RVector::Zero(x.size());
  r.target = s.target > 0 ? s.target : tau0 * std::pow(h, std::log(1 / h));
  RVector th = theta_weight(obstacle, s.v0, x);
  RMatrix Ex(x.size(), basis.dim());
  for (int i = 0; i < x.size(); ++i)
    for (int k = 0; k < basis.dim(); ++k) Ex(i, k) = basis.eval(k, x[i]);
  std::vector<int> inside;
  for (int i = 0; i < x.size(); ++i)
    if (th[i] > 0) inside.push_back(i);
  double tau = tau0;
  int stall = 0;
  for (int it = 0;; ++it) {
    Eigen::JacobiSVD<CMatrix> svd(r.A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    RVector sv = svd.singularValues();
    const int n = int(sv.size());
    int N = 0;
    while (N < n && sv[n - 1 - N] < tau) ++N;
    BoostStep st{it, N, sv[n - 1], tau, 0.0};
    r.history.push_back(st);
    if (N == 0 && sv[n - 1] >= r.target) {
      r.reached = true;
      return r;
    }
    if (it >= max_iters) return r;
    if (it > 0) {
      const auto& p = r.history[r.history.size() - 2];
      stall = (N >= p.n_small && sv[n - 1] <= p.t1) ? stall + 1 : 0;
      if (stall >= 3) fail_numerical("boost_singular_values: no progress over 3 iterations");
    }
    if (N == 0) {
      tau *= shrink;
      continue;
    }
    // e_j: right singular vectors of the N smallest values.
    CMatrix e(n, N);
    for (int j = 0; j < N; ++j) e.col(j) = svd.matrixV().col(n - 1 - j);
    // For symmetric A, conj(f_j) = e_j up to phases and M_jk(Theta q) = sum_i Theta q e_j e_k, so the
    // point masses come from the Gramian selection on e.
    CMatrix vals(inside.size(), N);
    std::vector<double> pts(inside.size());
    for (size_t i = 0; i < inside.size(); ++i) {
      vals.row(i) = e.row(inside[i]);
      pts[i] = x[inside[i]];
    }
    if (vals.norm() < 1e-12) {
      // the small block does not see the obstacle; no admissible perturbation acts on it
      tau *= shrink;
      continue;
    }
    CMatrix G = vals.adjoint() * vals;
    GramianSelection g = select_from(vals, pts, G.conjugate(), double(inside.size()));
    RVector qpt = RVector::Zero(x.size());
    for (double a : g.points) {
      int i = int(std::find(pts.begin(), pts.end(), a) - pts.begin());
      qpt[inside[i]] += 1.0 / th[inside[i]];
    }
    RVector alpha = Ex.transpose() * qpt;
    RVector W = th.cwiseProduct(Ex * alpha);
    double wmax = W.cwiseAbs().maxCoeff();
    if (!(wmax > 0)) fail_numerical("boost_singular_values: admissible perturbation vanishes");
    // delta ||Theta q||_inf <= tau / 2 keeps the bordered problem invertible
    double delta = 0.5 * tau / wmax;
    r.history.back().delta = delta;
    for (int i = 0; i < x.size(); ++i) r.A(i, i) += delta * W[i];
    r.q_total += delta * W;
    tau *= shrink;
  }
}

// Geometric decay of the small-value counts: each positive count is followed by one at most
// floor((1 - theta) N).
inline bool geometric_decay(const std::vector<BoostStep>& hist, double theta) {
  for (size_t i = 0; i + 1 < hist.size(); ++i) {
    int N = hist[i].n_small;
    if (N == 0) continue;
    if (hist[i + 1].n_small > int(std::floor((1 - theta) * N))) return false;
  }
  return true;
}

inline void write_draw_json(std::ostream& os, const PerturbationDraw& d) {
  os << "{\"seed\":" << d.seed << ",\"R\":" << d.R << ",\"alpha_norm\":" << d.alpha.norm()
     << ",\"q_sup\":" << d.q.cwiseAbs().maxCoeff() << ",\"W_sup\":" << d.realized.cwiseAbs().maxCoeff()
     << ",\"dim\":" << d.alpha.size() << "}\n";
}

}  // namespace reslab::perturb
