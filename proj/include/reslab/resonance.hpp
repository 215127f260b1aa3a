#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "collocation.hpp"
#include "contour.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "numerics.hpp"

namespace reslab {

// Closed rectangle in the spectral plane.
struct Box {
  double re_lo = 0.0, re_hi = 1.0, im_lo = -1.0, im_hi = 0.0;
  bool contains(cplx z, double tol = 0.0) const {
    return z.real() >= re_lo - tol && z.real() <= re_hi + tol && z.imag() >= im_lo - tol && z.imag() <= im_hi + tol;
  }
  cplx center() const { return {0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi)}; }
  double width() const { return re_hi - re_lo; }
  double height() const { return im_hi - im_lo; }
};

inline double window_depth(const SpectralWindow& w) { return std::pow(w.h, 2.0 / 3.0) * w.c; }
inline Box window_box(const SpectralWindow& w) { return {w.a, w.b, -window_depth(w), 0.0}; }

struct Resonance {
  cplx z;
  int multiplicity = 1;
  std::string method;
};

struct ResonanceSet {
  SpectralWindow window;
  std::vector<Resonance> items;
  int count() const {
    int n = 0;
    for (const auto& r : items) n += r.multiplicity;
    return n;
  }
};

// Potential along the path: the compact part on obstacle nodes, the centrifugal term everywhere
// for the radial model.
inline std::vector<cplx> path_potential(const CollocationGrid& g, const PotentialSpec& V, double h) {
  std::vector<cplx> W(g.size());
  const double cf = V.kind == PotentialKind::radial_effective ? h * h * V.ell * (V.ell + 1.0) : 0.0;
  for (int i = 0; i < g.size(); ++i) {
    cplx w = g.on_obstacle[i] ? cplx(V(g.x[i].real())) : cplx(0.0);
    if (cf != 0.0) w += cf / (g.x[i] * g.x[i]);
    W[i] = w;
  }
  return W;
}

struct DiscreteOperator {
  CMatrix matrix;          // reduced operator on interior nodes; eigenvalues are resonances
  CollocationGrid grid;
  std::vector<int> interior, ends;
  std::vector<int> boundary_rows;  // rows of the full system carrying Dirichlet/matching conditions
  CMatrix full;            // full square system: operator rows at interior nodes, constraint rows at ends
  CMatrix lift;            // end values from interior values
  double h = 0.0;
};

inline void check_nodes(const Discretization& d) {
  if (d.nodes_per_piece < 16) fail_validation("assemble: node count too small (< 16 per segment)");
}

inline DiscreteOperator assemble_pieces(const std::vector<Piece>& pieces,
                                        const std::function<std::vector<cplx>(const CollocationGrid&)>& W, double h,
                                        const Discretization& disc) {
  check_nodes(disc);
  DiscreteOperator op;
  op.h = h;
  op.grid = build_grid(pieces, disc.nodes_per_piece);
  const auto& g = op.grid;
  CMatrix A = operator_rows(g, h, W(g));
  CMatrix C = constraint_rows(g);
  split_indices(g, op.ends, op.interior);
  const int ni = int(op.interior.size()), ne = int(op.ends.size());
  CMatrix Ce(ne, ne), Ci(ne, ni);
  for (int j = 0; j < ne; ++j) Ce.col(j) = C.col(op.ends[j]);
  for (int j = 0; j < ni; ++j) Ci.col(j) = C.col(op.interior[j]);
  op.lift = -Ce.partialPivLu().solve(Ci);
  CMatrix Aii(ni, ni), Aie(ni, ne);
  for (int i = 0; i < ni; ++i) {
    for (int j = 0; j < ni; ++j) Aii(i, j) = A(op.interior[i], op.interior[j]);
    for (int j = 0; j < ne; ++j) Aie(i, j) = A(op.interior[i], op.ends[j]);
  }
  op.matrix = Aii + Aie * op.lift;
  op.full = A;
  for (int r = 0; r < ne; ++r) {
    op.full.row(op.ends[r]) = C.row(r);
    op.boundary_rows.push_back(op.ends[r]);
  }
  return op;
}

inline DiscreteOperator assemble(const PotentialSpec& V, const ScaledContour& contour, double h,
                                 const Discretization& disc) {
  auto pieces = split_pieces(pieces_of(contour), disc.max_piece_length, V.breaks);
  return assemble_pieces(pieces, [&](const CollocationGrid& g) { return path_potential(g, V, h); }, h, disc);
}

// Node count heuristic: about nodes_per_wavelength points per local wavelength at energy e_max.
inline Discretization auto_discretization(double h, double e_max, double nodes_per_wavelength = 10.0, int n = 32) {
  double k = std::sqrt(std::max(e_max, 1e-3)) / h;
  double wavelength = 2 * pi / k;
  double len = n / nodes_per_wavelength * wavelength;
  return {n, std::min(len, 1.0)};
}

inline std::vector<cplx> eigenvalues(const CMatrix& M) {
  CVector v = eig(M).values;
  return std::vector<cplx>(v.data(), v.data() + v.size());
}

// Group values within tol into clusters; returns (mean, count).
inline std::vector<std::pair<cplx, int>> cluster(std::vector<cplx> zs, double tol) {
  std::sort(zs.begin(), zs.end(), [](cplx a, cplx b) { return a.real() < b.real(); });
  std::vector<bool> used(zs.size(), false);
  std::vector<std::pair<cplx, int>> out;
  for (size_t i = 0; i < zs.size(); ++i) {
    if (used[i]) continue;
    cplx sum = zs[i];
    int n = 1;
    used[i] = true;
    for (size_t j = i + 1; j < zs.size() && zs[j].real() - zs[i].real() <= tol; ++j) {
      if (!used[j] && std::abs(zs[j] - zs[i]) <= tol) {
        used[j] = true;
        sum += zs[j];
        ++n;
      }
    }
    out.push_back({sum / double(n), n});
  }
  return out;
}

inline ResonanceSet resonances_by_scaling(const DiscreteOperator& op, const SpectralWindow& window,
                                          std::optional<Box> region = std::nullopt) {
  Box box = region ? *region : window_box(window);
  std::vector<cplx> in;
  for (cplx z : eigenvalues(op.matrix))
    if (box.contains(z)) in.push_back(z);
  ResonanceSet set;
  set.window = window;
  double scale = std::max(1.0, std::max(std::abs(box.re_lo), std::abs(box.re_hi)));
  for (auto [z, m] : cluster(in, 1e-7 * scale)) set.items.push_back({z, m, "scaling"});
  return set;
}

// Dirichlet-to-Neumann machinery. Convention: N = h d/dnu with nu the outward normal of the obstacle.
//
// Reduced Dirichlet problem on a path: interior unknowns u_i satisfy (M - z) u_i = G g for boundary
// data g, and the boundary normal derivatives are B_i u_i + B_e g.
struct BoundaryReduction {
  CMatrix M, G, Bi, Be;
  // Optional spectral form of (M - z)^{-1}.
  CVector lambda;
  CMatrix left, right;
  bool spectral = false;

  CMatrix dn(cplx z) const {
    if (spectral) {
      CVector d = (lambda.array() - z).inverse();
      return Be + left * d.asDiagonal() * right;
    }
    CMatrix Mz = M;
    Mz.diagonal().array() -= z;
    return Be + Bi * Mz.partialPivLu().solve(G);
  }
};

// sides: which path ends carry boundary data (0 = start, 1 = end), with the sign of the outward
// normal derivative relative to d/dx at that end.
inline BoundaryReduction reduce_boundary(const std::vector<Piece>& pieces, const PotentialSpec& V, double h,
                                         const Discretization& disc, const std::vector<std::pair<int, double>>& sides) {
  check_nodes(disc);
  CollocationGrid g = build_grid(pieces, disc.nodes_per_piece);
  CMatrix A = operator_rows(g, h, path_potential(g, V, h));
  CMatrix C = constraint_rows(g);
  std::vector<int> ends, interior;
  split_indices(g, ends, interior);
  const int ni = int(interior.size()), ne = int(ends.size()), nb = int(sides.size());
  CMatrix Ce(ne, ne), Ci(ne, ni);
  for (int j = 0; j < ne; ++j) Ce.col(j) = C.col(ends[j]);
  for (int j = 0; j < ni; ++j) Ci.col(j) = C.col(interior[j]);
  auto lu = Ce.partialPivLu();
  CMatrix Ei = -lu.solve(Ci);
  // Data enters the first (start) or last (end) constraint row.
  CMatrix rhs = CMatrix::Zero(ne, nb);
  for (int b = 0; b < nb; ++b) rhs(sides[b].first == 0 ? 0 : ne - 1, b) = 1.0;
  CMatrix Ed = lu.solve(rhs);
  CMatrix Aii(ni, ni), Aie(ni, ne);
  for (int i = 0; i < ni; ++i) {
    for (int j = 0; j < ni; ++j) Aii(i, j) = A(interior[i], interior[j]);
    for (int j = 0; j < ne; ++j) Aie(i, j) = A(interior[i], ends[j]);
  }
  BoundaryReduction r;
  r.M = Aii + Aie * Ei;
  r.G = -Aie * Ed;
  r.Bi = CMatrix::Zero(nb, ni);
  r.Be = CMatrix::Zero(nb, nb);
  for (int b = 0; b < nb; ++b) {
    int node = sides[b].first == 0 ? g.first(0) : g.last(g.pieces - 1);
    double sgn = sides[b].second;
    cplx scale = sgn * h / g.dx[node];
    for (int j = 0; j < ni; ++j) r.Bi(b, j) = scale * g.D1(node, interior[j]);
    CMatrix de(1, ne);
    for (int j = 0; j < ne; ++j) de(0, j) = g.D1(node, ends[j]);
    r.Bi.row(b) += scale * (de * Ei);
    r.Be.row(b) = scale * (de * Ed);
  }
  return r;
}

inline void make_spectral(BoundaryReduction& r) {
  EigResult es = eig(r.M, true);
  const CMatrix& S = es.vectors;
  r.lambda = es.values;
  auto lu = S.partialPivLu();
  r.left = r.Bi * S;
  r.right = lu.solve(r.G);
  r.spectral = true;
}

struct DNPair {
  cplx z;
  CMatrix Nin, Next;
  cplx detdiff;
};

// Interior and exterior reductions for a 1D obstacle (two boundary points) or a half-line model
// (one boundary point at support.hi, Dirichlet at support.lo).
struct DNModel {
  PotentialSpec V;
  double h = 0.1;
  bool one_sided = false;
  BoundaryReduction inner;
  std::vector<BoundaryReduction> outer;  // one per boundary point
  std::vector<double> dirichlet;         // interior Dirichlet eigenvalues (real parts)

  CMatrix Nin(cplx z) const { return inner.dn(z); }
  CMatrix Next(cplx z) const {
    const int nb = int(outer.size());
    CMatrix N = CMatrix::Zero(nb, nb);
    for (int b = 0; b < nb; ++b) N(b, b) = outer[b].dn(z)(0, 0);
    return N;
  }
  cplx detdiff(cplx z) const { return (Nin(z) - Next(z)).determinant(); }
  DNPair pair(cplx z) const {
    DNPair p;
    p.z = z;
    p.Nin = Nin(z);
    p.Next = Next(z);
    p.detdiff = (p.Nin - p.Next).determinant();
    return p;
  }
};

struct DNSettings {
  Discretization interior{40, 0.25};
  Discretization exterior{40, 0.5};
  double theta = pi / 3;
  double truncation = 0.0;  // exterior path length; 0 selects 8x support radius
  bool spectral_interior = true;
  bool spectral_exterior = true;
};

inline DNModel make_dn_model(const PotentialSpec& V, double h, const DNSettings& s, bool one_sided = false) {
  DNModel m;
  m.V = V;
  m.h = h;
  m.one_sided = one_sided;
  const double lo = V.support.lo, hi = V.support.hi;
  Piece obst{lo, hi, [](double t) { return cplx(t); }, [](double) { return cplx(1); }, [](double) { return cplx(0); }, true};
  auto ip = split_pieces({obst}, s.interior.max_piece_length, V.breaks);
  if (one_sided) {
    m.inner = reduce_boundary(ip, V, h, s.interior, {{1, 1.0}});
  } else {
    m.inner = reduce_boundary(ip, V, h, s.interior, {{0, -1.0}, {1, 1.0}});
  }
  if (s.spectral_interior) make_spectral(m.inner);
  for (cplx l : eigenvalues(m.inner.M)) m.dirichlet.push_back(l.real());
  std::sort(m.dirichlet.begin(), m.dirichlet.end());
  auto contour = make_scaled_contour(V.support, s.theta, Smoothness::lipschitz, s.truncation, one_sided);
  PotentialSpec ext = V;  // exterior nodes never see the compact part
  for (const auto& seg : contour.segments) {
    if (seg.on_obstacle) continue;
    Piece p{seg.t0, seg.t1, seg.x, seg.dx, seg.ddx, false};
    auto pp = split_pieces({p}, s.exterior.max_piece_length);
    bool left = seg.t1 <= lo + 1e-14 && !one_sided;
    // Left exterior: boundary data at the path end (x = lo), outward normal is -d/dx.
    // Right exterior: boundary data at the path start (x = hi), outward normal is +d/dx.
    m.outer.push_back(reduce_boundary(pp, ext, h, s.exterior, {left ? std::pair{1, -1.0} : std::pair{0, 1.0}}));
    if (s.spectral_exterior) make_spectral(m.outer.back());
  }
  return m;
}

inline DNPair dn_maps(const DNModel& m, cplx z, double pole_tol = 1e-10) {
  for (double l : m.dirichlet)
    if (std::abs(z - l) < pole_tol) fail_validation("dn_maps: z is an interior Dirichlet eigenvalue");
  DNPair p = m.pair(z);
  auto asym = [](const CMatrix& N) { return (N - N.transpose()).norm() / std::max(N.norm(), 1e-300); };
  if (asym(p.Nin) > 1e-9 || asym(p.Next) > 1e-9) fail_numerical("dn_maps: DN matrices not symmetric");
  return p;
}

// Argument-principle winding of f around a box, sampled adaptively.
struct WindingResult {
  bool ok = false;
  int winding = 0;
  double raw = 0.0;
  int evaluations = 0;
};

inline WindingResult box_winding(const std::function<cplx(cplx)>& f, const Box& b, double max_step) {
  WindingResult r;
  std::vector<cplx> corners{{b.re_lo, b.im_lo}, {b.re_hi, b.im_lo}, {b.re_hi, b.im_hi}, {b.re_lo, b.im_hi}};
  double total = 0.0;
  double fscale = 0.0;
  for (int e = 0; e < 4; ++e) {
    cplx z0 = corners[e], z1 = corners[(e + 1) % 4];
    int m = std::max(4, int(std::ceil(std::abs(z1 - z0) / max_step)));
    cplx za = z0, fa = f(za);
    ++r.evaluations;
    fscale = std::max(fscale, std::abs(fa));
    for (int k = 1; k <= m; ++k) {
      cplx zb = z0 + (z1 - z0) * (double(k) / m);
      cplx fb = f(zb);
      ++r.evaluations;
      // Refine the step until the phase increment is small.
      std::function<double(cplx, cplx, cplx, cplx, int)> inc = [&](cplx a, cplx fa_, cplx c, cplx fc, int depth) -> double {
        double d = std::arg(fc / fa_);
        if (std::abs(d) < pi / 6 || depth > 24) return d;
        cplx mid = 0.5 * (a + c);
        cplx fm = f(mid);
        ++r.evaluations;
        return inc(a, fa_, mid, fm, depth + 1) + inc(mid, fm, c, fc, depth + 1);
      };
      if (std::abs(fb) == 0.0 || !std::isfinite(std::abs(fb))) return r;
      total += inc(za, fa, zb, fb, 0);
      fscale = std::max(fscale, std::abs(fb));
      za = zb;
      fa = fb;
    }
  }
  r.raw = total / (2 * pi);
  r.winding = int(std::lround(r.raw));
  r.ok = std::abs(r.raw - r.winding) < 0.05;
  return r;
}

struct ZeroSearchSettings {
  double max_step = 0.02;     // edge sampling spacing
  double newton_size = 0.05;  // boxes smaller than this try Newton
  double cluster_size = 1e-7; // boxes smaller than this report a multiple zero
  int max_boxes = 20000;
};

struct FoundZero {
  cplx z;
  int multiplicity = 1;
};

// Zeros of a meromorphic f in a box, given the poles inside it (real or complex, simple, known).
inline std::vector<FoundZero> find_zeros(const std::function<cplx(cplx)>& f, Box box, const std::vector<cplx>& poles,
                                         const ZeroSearchSettings& s) {
  auto count = [&](const Box& b) -> std::optional<int> {
    WindingResult w = box_winding(f, b, std::min(s.max_step, 0.25 * std::max(b.width(), b.height())));
    if (!w.ok) return std::nullopt;
    int np = 0;
    for (cplx p : poles)
      if (b.contains(p)) ++np;
    return w.winding + np;
  };
  auto newton = [&](cplx z0, const Box& b) -> std::optional<cplx> {
    cplx z = z0;
    const double size = std::max(b.width(), b.height());
    double last = INFINITY;
    for (int it = 0; it < 60; ++it) {
      double d = 1e-7 * std::max(size, 1e-6);
      cplx fz = f(z);
      cplx df = (f(z + d) - f(z - d)) / (2 * d);
      if (df == 0.0) return std::nullopt;
      cplx step = fz / df;
      if (std::abs(step) > size) step *= size / std::abs(step);
      z -= step;
      if (!Box{b.re_lo - size, b.re_hi + size, b.im_lo - size, b.im_hi + size}.contains(z)) return std::nullopt;
      double a = std::abs(step);
      if (a < 1e-14 * std::max(1.0, std::abs(z))) return z;
      // Stagnation at the noise floor of f.
      if (a < 1e-11 * std::max(1.0, std::abs(z)) && a >= 0.5 * last) return z;
      last = a;
    }
    if (last < 1e-10) return z;
    return std::nullopt;
  };
  std::vector<FoundZero> out;
  struct Item {
    Box b;
    int n;
  };
  std::vector<Item> stack;
  auto c0 = count(box);
  for (double grow = 1e-9; !c0 && grow < 1e-3; grow *= 10) {
    Box g{box.re_lo - grow, box.re_hi + grow, box.im_lo - grow, box.im_hi + grow};
    c0 = count(g);
    if (c0) box = g;
  }
  if (!c0) fail_numerical("find_zeros: box boundary passes through a zero");
  if (*c0 > 0) stack.push_back({box, *c0});
  int processed = 0;
  while (!stack.empty()) {
    if (++processed > s.max_boxes) fail_numerical("find_zeros: box budget exhausted");
    Item it = stack.back();
    stack.pop_back();
    const Box& b = it.b;
    const double size = std::max(b.width(), b.height());
    if (it.n == 1 && size < s.newton_size) {
      auto z = newton(b.center(), b);
      if (z && b.contains(*z, 1e-12)) {
        out.push_back({*z, 1});
        continue;
      }
    }
    if (size < s.cluster_size) {
      auto z = newton(b.center(), b);
      out.push_back({z ? *z : b.center(), it.n});
      continue;
    }
    // Bisect the longer side, shifting the cut when it runs through a zero or pole.
    bool split = false;
    for (double frac : {0.5, 0.47, 0.53, 0.41, 0.59, 0.35, 0.65}) {
      Box b1 = b, b2 = b;
      if (b.width() >= b.height()) {
        double cut = b.re_lo + frac * b.width();
        bool near_pole = false;
        for (cplx p : poles)
          if (std::abs(p.real() - cut) < 1e-3 * b.width() && p.imag() >= b.im_lo && p.imag() <= b.im_hi) near_pole = true;
        if (near_pole) continue;
        b1.re_hi = cut;
        b2.re_lo = cut;
      } else {
        double cut = b.im_lo + frac * b.height();
        bool near_pole = false;
        for (cplx p : poles)
          if (std::abs(p.imag() - cut) < 1e-3 * b.height() && p.real() >= b.re_lo && p.real() <= b.re_hi) near_pole = true;
        if (near_pole) continue;
        b1.im_hi = cut;
        b2.im_lo = cut;
      }
      auto n1 = count(b1);
      if (!n1 || *n1 < 0 || *n1 > it.n) continue;
      int n2 = it.n - *n1;
      if (*n1 > 0) stack.push_back({b1, *n1});
      if (n2 > 0) stack.push_back({b2, n2});
      split = true;
      break;
    }
    if (!split) fail_numerical("find_zeros: unable to subdivide box");
  }
  std::sort(out.begin(), out.end(), [](const FoundZero& a, const FoundZero& b) { return a.z.real() < b.z.real(); });
  return out;
}

struct DetdiffSettings {
  DNSettings dn;
  ZeroSearchSettings search;
  double top = 0.0;  // extent of the search box above the real axis; 0 selects depth / 4
};

inline ResonanceSet resonances_by_detdiff(const DNModel& m, const SpectralWindow& window, const DetdiffSettings& s,
                                          std::optional<Box> region = std::nullopt) {
  Box w = region ? *region : window_box(window);
  ZeroSearchSettings zs = s.search;
  zs.max_step = std::min(zs.max_step, window.c * std::pow(window.h, 2.0 / 3.0) / 8.0);
  double top = s.top > 0 ? s.top : 0.25 * w.height();
  Box b{w.re_lo, w.re_hi, w.im_lo, std::max(w.im_hi, top)};
  std::vector<cplx> poles;
  for (double l : m.dirichlet)
    if (l > b.re_lo - 1 && l < b.re_hi + 1) poles.push_back(l);
  auto f = [&m](cplx z) { return m.detdiff(z); };
  ResonanceSet set;
  set.window = window;
  for (const auto& z : find_zeros(f, b, poles, zs)) {
    if (w.contains(z.z, 1e-9)) set.items.push_back({z.z, z.multiplicity, "detdiff"});
  }
  return set;
}

// Hausdorff distance between two resonance sets (infinity when exactly one is empty).
inline double hausdorff(const ResonanceSet& a, const ResonanceSet& b) {
  if (a.items.empty() && b.items.empty()) return 0.0;
  if (a.items.empty() || b.items.empty()) return INFINITY;
  auto one = [](const ResonanceSet& x, const ResonanceSet& y) {
    double d = 0;
    for (const auto& p : x.items) {
      double m = INFINITY;
      for (const auto& q : y.items) m = std::min(m, std::abs(p.z - q.z));
      d = std::max(d, m);
    }
    return d;
  };
  return std::max(one(a, b), one(b, a));
}

// 1D Jost function F(z) = h u'(hi) - i sqrt(z) u(hi) for the solution outgoing to the left,
// by RK4 along the real obstacle. Zeros are resonances.
inline cplx jost_1d(const PotentialSpec& V, double h, cplx z, int steps = 4000) {
  cplx k = std::sqrt(z);
  cplx u = 1.0, hu = -I * k;
  auto Vz = [&](cplx x) { return cplx(V(x.real())) - z; };
  std::vector<double> cuts{V.support.lo};
  for (double b : V.breaks) cuts.push_back(b);
  cuts.push_back(V.support.hi);
  for (size_t s = 0; s + 1 < cuts.size(); ++s) {
    int n = std::max(16, int(steps * (cuts[s + 1] - cuts[s]) / V.support.length()));
    // Nudge inside each smooth piece so piecewise-constant potentials are sampled consistently.
    double a = cuts[s], b = cuts[s + 1];
    auto Vp = [&, a, b](cplx x) {
      double xr = std::clamp(x.real(), a + 1e-12 * (b - a), b - 1e-12 * (b - a));
      return Vz(xr);
    };
    std::tie(u, hu) = integrate_segment(Vp, h, a, b, u, hu, n);
  }
  return hu - I * k * u;
}

// Radial model: exterior Dirichlet problem of the unit ball, angular momentum l, V = 0 outside.
inline DiscreteOperator radial_exterior_operator(int ell, double h, double theta, double truncation,
                                                 const Discretization& disc) {
  PotentialSpec V = radial_effective(ell, {1.0, 1.0}, [](double) { return 0.0; });
  auto c = make_scaled_contour({1.0, 1.0}, theta, Smoothness::lipschitz, truncation, true);
  return assemble(V, c, h, disc);
}

// Spherical Hankel function h_l^{(1)}(k) by upward recurrence, optionally with its derivative.
inline cplx spherical_hankel1(int ell, cplx k, cplx* deriv = nullptr) {
  cplx h0 = -I * std::exp(I * k) / k;
  if (ell == 0) {
    if (deriv) *deriv = std::exp(I * k) / k + I * std::exp(I * k) / (k * k);
    return h0;
  }
  cplx h1 = -std::exp(I * k) / k * (1.0 + I / k);
  cplx hm = h0, hc = h1;
  for (int l = 1; l < ell; ++l) {
    cplx hn = (2.0 * l + 1.0) / k * hc - hm;
    hm = hc;
    hc = hn;
  }
  if (deriv) *deriv = hm - (ell + 1.0) / k * hc;
  return hc;
}

// Zeros of h_l^{(1)}(k), Im k < 0, from the companion matrix of its polynomial factor. Reliable
// for l up to about 30; use hankel_zero_near beyond that.
inline std::vector<cplx> hankel_zeros(int ell) {
  std::vector<cplx> out;
  if (ell == 0) return out;
  // Polynomial in w = 1/k: sum_m (i/2)^m (l+m)! / (m! (l-m)!) w^m, written in l w to stay in range.
  std::vector<cplx> c(ell + 1);
  for (int m = 0; m <= ell; ++m) {
    double lg = std::lgamma(ell + m + 1.0) - std::lgamma(m + 1.0) - std::lgamma(ell - m + 1.0) - m * std::log(ell);
    c[m] = std::pow(cplx(0, 0.5), m) * std::exp(lg);
  }
  CMatrix comp = CMatrix::Zero(ell, ell);
  for (int i = 1; i < ell; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < ell; ++i) comp(i, ell - 1) = -c[i] / c[ell];
  for (cplx w : eigenvalues(comp)) {
    cplx k = double(ell) / w;
    for (int it = 0; it < 50; ++it) {
      cplx d;
      cplx v = spherical_hankel1(ell, k, &d);
      cplx step = v / d;
      k -= step;
      if (std::abs(step) < 1e-15 * std::abs(k)) break;
    }
    out.push_back(k);
  }
  return out;
}

// Newton from the large-l guess k = nu + e^{-2 i pi/3} 2^{-1/3} zeta_j nu^{1/3}, nu = l + 1/2.
inline cplx hankel_zero_near(int ell, int j = 1) {
  const double nu = ell + 0.5;
  cplx k = nu + std::polar(std::pow(2.0, -1.0 / 3.0) * airy::airy_zero(j), -2 * pi / 3) * std::cbrt(nu);
  for (int it = 0; it < 60; ++it) {
    cplx d;
    cplx v = spherical_hankel1(ell, k, &d);
    cplx step = v / d;
    k -= step;
    if (std::abs(step) < 1e-14 * std::abs(k)) break;
  }
  return k;
}

// Radial resonance-free strip check. Resonances of the Dirichlet ball exterior are collected for
// every angular momentum whose string can reach Re z in [a, b].
struct StripReport {
  double h = 0.0;
  double min_margin = INFINITY;   // min over resonances in the strip of (boundary - Im z); < 0 is a violation
  double first_depth = INFINITY;  // smallest |Im z| / (Re z)^{2/3} in the strip
  cplx offending{NAN, NAN};
  int resonances = 0;
  bool ok = true;
};

struct StripSettings {
  double a = 0.5, b = 2.0;
  double C = 0.25;           // the "+ C h" allowance, frozen from h down to 0.003
  double depth_scale = 1.0;  // > 1 deepens the tested region (negative control)
  double theta = pi / 3;
  double truncation = 0.0;   // 0 selects an h-dependent default
  double nodes_per_wavelength = 10.0;
  double Q = 1.0;
};

inline double strip_boundary(double h, double re_z, const StripSettings& s) {
  const double zeta1 = airy::airy_zero(1);
  return -s.depth_scale * 2.0 * std::pow(h * re_z, 2.0 / 3.0) * kappa_of(s.Q) * zeta1 + s.C * h;
}

inline std::vector<cplx> radial_resonances(double h, const StripSettings& s, int ell_max) {
  std::vector<cplx> out;
  double T = s.truncation > 0 ? s.truncation : 4.0;
  auto disc = auto_discretization(h, s.b, s.nodes_per_wavelength);
  for (int ell = 1; ell <= ell_max; ++ell) {
    auto op = radial_exterior_operator(ell, h, s.theta, T, disc);
    for (cplx z : eigenvalues(op.matrix))
      if (z.real() >= s.a && z.real() <= s.b && z.imag() <= 0 && z.imag() > -3.0 * std::pow(h, 2.0 / 3.0) * 4.0)
        out.push_back(z);
  }
  return out;
}

inline StripReport resonance_free_check(double h, const StripSettings& s) {
  StripReport r;
  r.h = h;
  int ell_max = int(std::ceil(1.2 * std::sqrt(s.b) / h)) + 5;
  for (cplx z : radial_resonances(h, s, ell_max)) {
    ++r.resonances;
    double margin = strip_boundary(h, z.real(), s) - z.imag();
    if (margin < r.min_margin) {
      r.min_margin = margin;
      r.offending = z;
    }
    r.first_depth = std::min(r.first_depth, -z.imag() / std::pow(z.real(), 2.0 / 3.0));
  }
  r.ok = r.min_margin >= 0;
  return r;
}

inline std::vector<StripReport> resonance_free_check(const std::vector<double>& h_list, const StripSettings& s) {
  std::vector<StripReport> out;
  for (double h : h_list) out.push_back(resonance_free_check(h, s));
  return out;
}

// Bent-path model operator -(h d/dx)^2 - x Q(x) + gauge terms on gamma_delta, Dirichlet at both ends.
inline std::function<cplx(cplx)> gauged_potential(const std::function<cplx(cplx)>& Q,
                                                  const std::function<cplx(cplx)>& a, double h) {
  return [Q, a, h](cplx x) {
    cplx w = -x * Q(x);
    if (a) {
      const double d = 1e-5;
      cplx ax = a(x);
      cplx da = (a(x + d) - a(x - d)) / (2 * d);
      w += ax * ax / 4.0 - h * da / 2.0;
    }
    return w;
  };
}

inline DiscreteOperator bent_operator(double delta, double s0, double h, const Discretization& disc,
                                      const std::function<cplx(cplx)>& W) {
  std::vector<Piece> pieces;
  const cplx e = std::polar(1.0, pi / 3);
  if (delta > 0)
    pieces.push_back({0.0, delta, [](double t) { return cplx(t); }, [](double) { return cplx(1); },
                      [](double) { return cplx(0); }, false});
  pieces.push_back({delta, s0, [=](double t) { return delta + e * (t - delta); }, [=](double) { return e; },
                    [](double) { return cplx(0); }, false});
  pieces = split_pieces(pieces, disc.max_piece_length);
  return assemble_pieces(
      pieces,
      [&](const CollocationGrid& g) {
        std::vector<cplx> out(g.size());
        for (int i = 0; i < g.size(); ++i) out[i] = W(g.x[i]);
        return out;
      },
      h, disc);
}

struct BentSolveReport {
  std::vector<double> s;
  std::vector<cplx> x, u, hdu, v;
  double weighted_ratio = 0.0;   // ||(h^{2/3} + |lambda| + s) u|| / ||v||
  double derivative_ratio = 0.0; // ||(h^{2/3} + |lambda| + s)^{1/2} h du|| / ||v||
  cplx ub_before_correction;
};

// Admissible spectral parameters z = lambda + h^{2/3} w: |w| <= w_max and w away from the rotated
// Airy eigenvalues e^{-2 i pi/3} zeta_j.
inline bool admissible_w(cplx w, double w_max = 3.0) {
  if (std::abs(w) > w_max) return false;
  for (int j = 1; j <= 4; ++j)
    if (std::abs(w - std::polar(airy::airy_zero(j), -2 * pi / 3)) < 0.25) return false;
  return true;
}

// Solves (P - z) u = v on gamma_delta with u(0) = u(b) = 0, P = -(h d/dx)^2 + W. The factorization
// P - z = -(h d + phi')(h d - phi') ... is realized with phi' = -h u_s'/u_s for the null solution u_s
// subdominant at b; K inverts (phi' - h d) from b, L inverts (h d + phi') from 0, and the reflected
// null solution e_b restores the condition at b.
inline BentSolveReport exterior_bent_solve(const std::function<cplx(cplx)>& W, const std::function<cplx(cplx)>& v,
                                           double lambda, cplx w, double h, double delta, double s0 = 1.0,
                                           int steps = 20000) {
  if (!admissible_w(w)) fail_validation("exterior_bent_solve: w outside the admissible disc");
  const cplx z = lambda + std::pow(h, 2.0 / 3.0) * w;
  const int n = steps;       // coarse steps; the Riccati sweep uses half steps
  const int nf = 2 * n;
  const double ds = s0 / nf;
  std::vector<cplx> xf(nf + 1), dxf(nf + 1), Wf(nf + 1), vf(nf + 1);
  for (int i = 0; i <= nf; ++i) {
    double si = i * ds;
    xf[i] = BentPath::gamma(delta, si);
    // One-sided derivative: use the piece the half step lies in.
    dxf[i] = BentPath::dgamma(delta, std::min(si + 0.5 * ds, s0));
    Wf[i] = W(xf[i]) - z;
    vf[i] = v(xf[i]);
  }
  auto seg_dx = [&](int i0) { return BentPath::dgamma(delta, (i0 + 0.5) * ds); };
  // Riccati for psi = h u'/u backward from b: h psi' = (W - z) - psi^2, psi(b) = -sqrt(W - z) with the
  // branch decaying along the path.
  std::vector<cplx> psi(nf + 1);
  {
    cplx r = std::sqrt(Wf[nf]);
    if ((r * dxf[nf]).real() < 0) r = -r;
    psi[nf] = -r;
    for (int i = nf; i >= 1; --i) {
      cplx d = seg_dx(i - 1);
      cplx Wm = W(BentPath::gamma(delta, (i - 0.5) * ds)) - z;
      auto f = [&](cplx Wv, cplx p) { return d * (Wv - p * p) / h; };
      const double H = -ds;
      cplx p = psi[i];
      cplx k1 = f(Wf[i], p), k2 = f(Wm, p + 0.5 * H * k1), k3 = f(Wm, p + 0.5 * H * k2), k4 = f(Wf[i - 1], p + H * k3);
      psi[i - 1] = p + H / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  std::vector<cplx> phip(nf + 1);
  for (int i = 0; i <= nf; ++i) phip[i] = -psi[i];
  // K: h w' = phi' w - v backward from b with w(b) = 0; L: h u' = w - phi' u forward with u(0) = 0.
  auto sweep_K = [&](const std::vector<cplx>& rhs) {
    std::vector<cplx> out(n + 1);
    out[n] = 0.0;
    for (int j = n; j >= 1; --j) {
      int i = 2 * j;
      cplx d = seg_dx(i - 1);
      double H = -2 * ds;
      auto f = [&](int k, cplx y) { return d * (phip[k] * y - rhs[k]) / h; };
      cplx y = out[j];
      cplx k1 = f(i, y), k2 = f(i - 1, y + 0.5 * H * k1), k3 = f(i - 1, y + 0.5 * H * k2), k4 = f(i - 2, y + H * k3);
      out[j - 1] = y + H / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
  };
  auto sweep_L = [&](const std::function<cplx(int)>& rhs) {
    std::vector<cplx> out(n + 1);
    out[0] = 0.0;
    for (int j = 0; j < n; ++j) {
      int i = 2 * j;
      cplx d = seg_dx(i + 1);
      double H = 2 * ds;
      auto f = [&](int k, cplx y) { return d * (rhs(k) - phip[k] * y) / h; };
      cplx y = out[j];
      cplx k1 = f(i, y), k2 = f(i + 1, y + 0.5 * H * k1), k3 = f(i + 1, y + 0.5 * H * k2), k4 = f(i + 2, y + H * k3);
      out[j + 1] = y + H / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
  };
  std::vector<cplx> wK = sweep_K(vf);
  // w at half steps by interpolation of the smooth K output (cubic, from coarse nodes).
  auto wfine = [&](const std::vector<cplx>& c) {
    std::vector<cplx> f(nf + 1);
    for (int j = 0; j <= n; ++j) f[2 * j] = c[j];
    for (int j = 0; j < n; ++j) {
      int a = std::max(0, std::min(j - 1, n - 3));
      // Lagrange cubic through coarse nodes a..a+3 at position j + 1/2.
      double t = j + 0.5;
      cplx acc = 0.0;
      for (int m = 0; m < 4; ++m) {
        double L = 1.0;
        for (int q = 0; q < 4; ++q)
          if (q != m) L *= (t - (a + q)) / double(m - q);
        acc += L * c[a + m];
      }
      f[2 * j + 1] = acc;
    }
    return f;
  };
  std::vector<cplx> wKf = wfine(wK);
  std::vector<cplx> uL = sweep_L([&](int k) { return wKf[k]; });
  // phi by cumulative trapezoid on the fine grid, then e_b = L e^{(phi - phi(b))/h}.
  std::vector<cplx> phi(nf + 1);
  phi[0] = 0.0;
  for (int i = 1; i <= nf; ++i) phi[i] = phi[i - 1] + 0.5 * (phip[i] + phip[i - 1]) * (xf[i] - xf[i - 1]);
  // Simpson correction on pairs keeps phi accurate to fourth order at even nodes.
  for (int j = 1; j <= n; ++j) {
    int i = 2 * j;
    phi[i] = phi[i - 2] + (xf[i] - xf[i - 2]) / 6.0 * (phip[i - 2] + 4.0 * phip[i - 1] + phip[i]);
    if (i + 1 <= nf) phi[i + 1] = phi[i] + 0.5 * (phip[i] + phip[i + 1]) * (xf[i + 1] - xf[i]);
  }
  std::vector<cplx> eb = sweep_L([&](int k) { return std::exp((phi[k] - phi[nf]) / h); });
  BentSolveReport rep;
  rep.ub_before_correction = uL[n];
  const double h23 = std::pow(h, 2.0 / 3.0);
  double num0 = 0, num1 = 0, den = 0;
  for (int j = 0; j <= n; ++j) {
    int i = 2 * j;
    cplx u = uL[j] - uL[n] / eb[n] * eb[j];
    // h du/dx = w - phi' u with w the K output corrected by the e_b contribution.
    cplx wk = wK[j] - uL[n] / eb[n] * std::exp((phi[i] - phi[nf]) / h);
    cplx hdu = wk - phip[i] * u;
    rep.s.push_back(i * ds);
    rep.x.push_back(xf[i]);
    rep.u.push_back(u);
    rep.hdu.push_back(hdu);
    rep.v.push_back(vf[i]);
    double wt = (j == 0 || j == n) ? 0.5 : 1.0;
    double weight = h23 + std::abs(lambda) + i * ds;
    num0 += wt * std::norm(weight * u);
    num1 += wt * weight * std::norm(hdu);
    den += wt * std::norm(vf[i]);
  }
  rep.weighted_ratio = std::sqrt(num0 / den);
  rep.derivative_ratio = std::sqrt(num1 / den);
  return rep;
}

}  // namespace reslab
