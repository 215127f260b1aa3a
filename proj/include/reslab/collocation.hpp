#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <vector>

#include "contour.hpp"
#include "numerics.hpp"

namespace reslab {

// Multi-piece Chebyshev collocation along a piecewise-parametrized path. Each piece carries
// n + 1 Lobatto nodes; neighbouring pieces share their junction point through explicit
// continuity rows for u and du/dx.
struct Piece {
  double t0 = 0.0;
  double t1 = 1.0;
  std::function<cplx(double)> x;
  std::function<cplx(double)> dx;
  std::function<cplx(double)> ddx;
  bool on_obstacle = false;
};

struct Discretization {
  int nodes_per_piece = 32;
  double max_piece_length = 1.0;  // in the path parameter
};

struct CollocationGrid {
  int n = 0;                 // polynomial degree per piece
  int pieces = 0;
  std::vector<double> t;     // all nodes, piece-major, ascending within each piece
  std::vector<cplx> x, dx, ddx;
  std::vector<int> piece_of;
  std::vector<bool> on_obstacle;
  CMatrix D1, D2;            // block-diagonal derivatives in t
  int size() const { return int(t.size()); }
  int first(int p) const { return p * (n + 1); }
  int last(int p) const { return p * (n + 1) + n; }
};

inline std::vector<Piece> split_pieces(const std::vector<Piece>& in, double max_len, const std::vector<double>& breaks = {}) {
  std::vector<Piece> out;
  for (const auto& p : in) {
    std::vector<double> cuts{p.t0};
    for (double b : breaks)
      if (b > p.t0 + 1e-12 && b < p.t1 - 1e-12) cuts.push_back(b);
    cuts.push_back(p.t1);
    std::sort(cuts.begin(), cuts.end());
    for (size_t k = 0; k + 1 < cuts.size(); ++k) {
      double a = cuts[k], b = cuts[k + 1];
      int m = std::max(1, int(std::ceil((b - a) / max_len - 1e-9)));
      for (int j = 0; j < m; ++j) {
        Piece q = p;
        q.t0 = a + (b - a) * j / m;
        q.t1 = a + (b - a) * (j + 1) / m;
        out.push_back(q);
      }
    }
  }
  return out;
}

inline std::vector<Piece> pieces_of(const ScaledContour& c) {
  std::vector<Piece> out;
  for (const auto& s : c.segments) out.push_back({s.t0, s.t1, s.x, s.dx, s.ddx, s.on_obstacle});
  return out;
}

inline CollocationGrid build_grid(const std::vector<Piece>& pieces, int n) {
  CollocationGrid g;
  g.n = n;
  g.pieces = int(pieces.size());
  RVector xi = cheb::lobatto(n);
  RMatrix D = cheb::diff_matrix(n);
  // Reverse to ascending order.
  RMatrix P = RMatrix::Zero(n + 1, n + 1);
  for (int i = 0; i <= n; ++i) P(i, n - i) = 1.0;
  RMatrix Da = P * D * P;
  const int N = g.pieces * (n + 1);
  g.D1 = CMatrix::Zero(N, N);
  g.D2 = CMatrix::Zero(N, N);
  for (int p = 0; p < g.pieces; ++p) {
    const auto& pc = pieces[p];
    double half = 0.5 * (pc.t1 - pc.t0);
    RMatrix d1 = Da / half;
    g.D1.block(p * (n + 1), p * (n + 1), n + 1, n + 1) = d1.cast<cplx>();
    g.D2.block(p * (n + 1), p * (n + 1), n + 1, n + 1) = (d1 * d1).cast<cplx>();
    for (int j = 0; j <= n; ++j) {
      double t = pc.t0 + half * (xi[n - j] + 1.0);
      if (j == 0) t = pc.t0;
      if (j == n) t = pc.t1;
      g.t.push_back(t);
      g.x.push_back(pc.x(t));
      g.dx.push_back(pc.dx(t));
      g.ddx.push_back(pc.ddx(t));
      g.piece_of.push_back(p);
      g.on_obstacle.push_back(pc.on_obstacle);
    }
  }
  return g;
}

// Operator rows of -(h d/dx)^2 + W(x) on the grid, written in t.
inline CMatrix operator_rows(const CollocationGrid& g, double h, const std::vector<cplx>& W) {
  const int N = g.size();
  CMatrix A(N, N);
  for (int i = 0; i < N; ++i) {
    cplx d = g.dx[i];
    cplx a2 = -h * h / (d * d);
    cplx a1 = h * h * g.ddx[i] / (d * d * d);
    A.row(i) = a2 * g.D2.row(i) + a1 * g.D1.row(i);
    A(i, i) += W[i];
  }
  return A;
}

// Indices of piece endpoints (the constrained unknowns) and of interior nodes.
inline void split_indices(const CollocationGrid& g, std::vector<int>& ends, std::vector<int>& interior) {
  ends.clear();
  interior.clear();
  for (int p = 0; p < g.pieces; ++p) {
    ends.push_back(g.first(p));
    for (int j = 1; j < g.n; ++j) interior.push_back(g.first(p) + j);
    ends.push_back(g.last(p));
  }
}

// Constraint rows: Dirichlet at both path ends plus u and du/dx continuity at every junction.
// Returns a (2 * pieces) x N matrix acting on all node values, with right-hand side rhs.
inline CMatrix constraint_rows(const CollocationGrid& g) {
  const int N = g.size();
  const int m = 2 * g.pieces;
  CMatrix C = CMatrix::Zero(m, N);
  int r = 0;
  C(r++, g.first(0)) = 1.0;
  for (int p = 0; p + 1 < g.pieces; ++p) {
    int a = g.last(p), b = g.first(p + 1);
    C(r, a) = 1.0;
    C(r, b) = -1.0;
    ++r;
    C.row(r) = g.D1.row(a) / g.dx[a] - g.D1.row(b) / g.dx[b];
    ++r;
  }
  C(r++, g.last(g.pieces - 1)) = 1.0;
  return C;
}

}  // namespace reslab
