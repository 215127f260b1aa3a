#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"
#include "numerics.hpp"

namespace reslab::grushin {

inline double cond(const CMatrix& A) {
  if (A.size() == 0) return 1.0;
  Eigen::JacobiSVD<CMatrix> svd(A);
  const auto& s = svd.singularValues();
  return s[s.size() - 1] > 0 ? s[0] / s[s.size() - 1] : INFINITY;
}

inline double rel_err(const CMatrix& A, const CMatrix& B) {
  double n = B.norm();
  return (A - B).norm() / (n > 0 ? n : 1.0);
}

struct BlockOperator {
  CMatrix P11, P12, P21, P22;

  void check() const {
    if (P11.rows() != P11.cols() || P22.rows() != P22.cols() || P12.rows() != P11.rows() ||
        P12.cols() != P22.cols() || P21.rows() != P22.rows() || P21.cols() != P11.cols())
      fail_validation("BlockOperator: incompatible block shapes");
  }
  Eigen::Index n1() const { return P11.rows(); }
  Eigen::Index n2() const { return P22.rows(); }
  CMatrix full() const {
    check();
    CMatrix M(n1() + n2(), n1() + n2());
    M << P11, P12, P21, P22;
    return M;
  }
  static BlockOperator split(const CMatrix& M, Eigen::Index n1) {
    Eigen::Index n2 = M.rows() - n1;
    return {M.topLeftCorner(n1, n1), M.topRightCorner(n1, n2), M.bottomLeftCorner(n2, n1),
            M.bottomRightCorner(n2, n2)};
  }
};

struct SchurFactors {
  CMatrix lower, upper;
  CMatrix schur;  // P22 - P21 P11^{-1} P12
};

// B = [[P11, 0], [P21, I]] [[I, P11^{-1} P12], [0, S]].
inline SchurFactors schur_factor(const BlockOperator& B, double cond_max = 1e12) {
  B.check();
  if (cond(B.P11) > cond_max) fail_validation("schur_factor: P11 is numerically singular");
  const auto n1 = B.n1(), n2 = B.n2();
  Eigen::PartialPivLU<CMatrix> lu(B.P11);
  CMatrix X = lu.solve(B.P12);
  SchurFactors f;
  f.schur = B.P22 - B.P21 * X;
  f.lower = CMatrix::Zero(n1 + n2, n1 + n2);
  f.lower.topLeftCorner(n1, n1) = B.P11;
  f.lower.bottomLeftCorner(n2, n1) = B.P21;
  f.lower.bottomRightCorner(n2, n2).setIdentity();
  f.upper = CMatrix::Zero(n1 + n2, n1 + n2);
  f.upper.topLeftCorner(n1, n1).setIdentity();
  f.upper.topRightCorner(n1, n2) = X;
  f.upper.bottomRightCorner(n2, n2) = f.schur;
  return f;
}

struct SchurReport {
  double e22_residual = 0;  // E22^{-1} against P22 - P21 P11^{-1} P12
  double p11_residual = 0;  // P11^{-1} against E11 - E12 E22^{-1} E21
  double tolerance = 0;
  bool ok = false;
};

// Einv is the full inverse of B, split like B. The tolerance grows with the conditioning of P11.
inline SchurReport schur_identities(const BlockOperator& B, const CMatrix& Einv, double tol = 1e-10) {
  B.check();
  auto E = BlockOperator::split(Einv, B.n1());
  SchurReport r;
  CMatrix S = B.P22 - B.P21 * B.P11.partialPivLu().solve(B.P12);
  r.e22_residual = rel_err(E.P22.partialPivLu().inverse(), S);
  CMatrix P11inv = B.P11.partialPivLu().inverse();
  r.p11_residual = rel_err(E.P11 - E.P12 * E.P22.partialPivLu().solve(E.P21), P11inv);
  r.tolerance = std::max(tol, 1e-14 * cond(B.P11));
  r.ok = r.e22_residual <= r.tolerance && r.p11_residual <= r.tolerance;
  return r;
}

// Holomorphic matrix family; a missing derivative is filled in by a Cauchy integral.
struct Family {
  std::function<CMatrix(cplx)> P, dP;
  double radius = 1e-3;

  CMatrix operator()(cplx z) const { return P(z); }
  CMatrix d(cplx z) const {
    if (dP) return dP(z);
    const int m = 16;
    CMatrix acc = CMatrix::Zero(P(z).rows(), P(z).cols());
    for (int k = 0; k < m; ++k) {
      cplx e = std::polar(1.0, 2 * pi * k / m);
      acc += P(z + radius * e) / e;
    }
    return acc / (m * radius);
  }
};

// A - z I.
inline Family shifted(const CMatrix& A) {
  const auto n = A.rows();
  return {[A, n](cplx z) -> CMatrix { return A - z * CMatrix::Identity(n, n); },
          [n](cplx) -> CMatrix { return -CMatrix::Identity(n, n); }};
}

inline Family product(const Family& Q, const Family& P) {
  return {[Q, P](cplx z) -> CMatrix { return Q(z) * P(z); },
          [Q, P](cplx z) -> CMatrix { return Q.d(z) * P(z) + Q(z) * P.d(z); }};
}

struct GrushinBlocks {
  CMatrix E, Eplus, Eminus, Eminusplus;
  CMatrix dEminusplus;  // -E_- dP E_+
};

struct GrushinSystem {
  Family P;
  CMatrix Rplus;   // N x dim
  CMatrix Rminus;  // dim x N
  cplx z0;
  int N = 0;
  double cond_P = 0, cond_bordered = 0;

  Eigen::Index dim() const { return Rminus.rows(); }
  CMatrix bordered(cplx z) const {
    const auto n = dim();
    CMatrix M = CMatrix::Zero(n + N, n + N);
    M.topLeftCorner(n, n) = P(z);
    M.topRightCorner(n, N) = Rminus;
    M.bottomLeftCorner(N, n) = Rplus;
    return M;
  }
  GrushinBlocks blocks(cplx z) const {
    const auto n = dim();
    CMatrix inv = bordered(z).partialPivLu().inverse();
    GrushinBlocks b;
    b.E = inv.topLeftCorner(n, n);
    b.Eplus = inv.topRightCorner(n, N);
    b.Eminus = inv.bottomLeftCorner(N, n);
    b.Eminusplus = inv.bottomRightCorner(N, N);
    b.dEminusplus = -b.Eminus * P.d(z) * b.Eplus;
    return b;
  }
};

// R_-, R_+ from the singular vectors of the N smallest singular values of P(z0).
inline GrushinSystem border(const Family& P, cplx z0, int N_guess, double eps_rank = 1e-8) {
  CMatrix A = P(z0);
  if (A.rows() != A.cols()) fail_validation("border: P must be square");
  if (N_guess < 0 || N_guess > A.rows()) fail_validation("border: N out of range");
  Eigen::JacobiSVD<CMatrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const auto n = A.rows();
  int kernel = 0;
  for (Eigen::Index k = 0; k < n; ++k)
    if (s[k] < eps_rank * s[0]) ++kernel;
  if (kernel > N_guess) fail_validation("border: N too small for the numerical kernel");
  GrushinSystem g;
  g.P = P;
  g.z0 = z0;
  g.N = N_guess;
  g.Rminus = svd.matrixU().rightCols(N_guess);
  g.Rplus = svd.matrixV().rightCols(N_guess).adjoint();
  g.cond_P = s[n - 1] > 0 ? s[0] / s[n - 1] : INFINITY;
  g.cond_bordered = cond(g.bordered(z0));
  if (!(g.cond_bordered < 1e12)) fail_validation("border: bordered system still ill-conditioned, increase N");
  return g;
}

// (1 / 2 pi i) contour integral of tr(P^{-1} dP) over a circle; cyclic = tr(dP P^{-1}).
inline cplx trace_winding(const Family& P, cplx c, double r, int m = 64, bool cyclic = false) {
  cplx acc = 0.0;
  for (int k = 0; k < m; ++k) {
    cplx e = std::polar(1.0, 2 * pi * k / m);
    cplx z = c + r * e;
    CMatrix A = P(z), dA = P.d(z);
    Eigen::PartialPivLU<CMatrix> lu(A);
    cplx tr = cyclic ? (dA * lu.inverse()).trace() : lu.solve(dA).trace();
    acc += tr * (r * e);  // dz / (2 pi i) = r e dtheta / (2 pi)
  }
  return acc / double(m);
}

inline int nearest_integer(cplx w, double tol = 0.1) {
  long k = std::lround(w.real());
  if (std::abs(w - double(k)) > tol) fail_numerical("winding integral is not close to an integer, contour invalid");
  return int(k);
}

// Winding with a refinement check: an unresolved integrand (a zero near the circle) is an error.
inline int checked_winding(const Family& P, cplx c, double r, int m = 64) {
  cplx w1 = trace_winding(P, c, r, m), w2 = trace_winding(P, c, r, 2 * m);
  if (std::abs(w1 - w2) > 1e-2) fail_numerical("winding integral not resolved, contour passes too close to a zero");
  return nearest_integer(w2);
}

struct Multiplicity {
  int value = 0;
  cplx grushin_integral, full_integral;
};

inline Multiplicity multiplicity_at(const GrushinSystem& sys, cplx z0, double radius, int m = 64) {
  Multiplicity out;
  out.full_integral = trace_winding(sys.P, z0, radius, m);
  checked_winding(sys.P, z0, radius, m);
  if (sys.N == 0) {
    out.grushin_integral = out.full_integral;
  } else {
    cplx acc = 0.0;
    for (int k = 0; k < m; ++k) {
      cplx e = std::polar(1.0, 2 * pi * k / m);
      auto b = sys.blocks(z0 + radius * e);
      acc += b.Eminusplus.partialPivLu().solve(b.dEminusplus).trace() * (radius * e);
    }
    out.grushin_integral = acc / double(m);
  }
  out.value = nearest_integer(out.grushin_integral);
  if (nearest_integer(out.full_integral) != out.value)
    fail_numerical("multiplicity_at: bordered and full windings disagree");
  return out;
}

// Half the distance from points[k] to its nearest neighbour.
inline double separation_radius(const std::vector<cplx>& points, size_t k) {
  double d = INFINITY;
  for (size_t j = 0; j < points.size(); ++j)
    if (j != k) d = std::min(d, std::abs(points[j] - points[k]));
  return 0.5 * d;
}

// log det through LU, with the imaginary part continued along the sequence of calls by the caller.
inline cplx logdet(const CMatrix& A) {
  Eigen::PartialPivLU<CMatrix> lu(A);
  cplx s = 0.0;
  const CMatrix& U = lu.matrixLU();
  for (Eigen::Index k = 0; k < U.rows(); ++k) s += std::log(U(k, k));
  if (lu.permutationP().determinant() < 0) s += cplx(0.0, pi);
  return s;
}

struct LogDetDerivative {
  int order = 1;
  std::vector<cplx> z;
  std::vector<std::vector<cplx>> D;  // D[j - 1] = D_{P,j} on the grid, j = 1..order+1
  std::vector<cplx> logdet;          // reconstruction, polynomial part fixed at the anchors
  std::vector<double> log_abs_det;
  std::vector<size_t> anchors;
};

// D_{P,1} = tr(P^{-1} dP); higher orders by Cauchy differentiation of D_{P,1} on circles of radius rho.
inline cplx trace_log_derivative(const Family& P, cplx z, int j, double rho, int m = 32) {
  auto D1 = [&](cplx w) {
    CMatrix A = P(w);
    Eigen::PartialPivLU<CMatrix> lu(A);
    if (!(std::abs(lu.determinant()) > 0)) fail_validation("logdet_via_traces: singular point on the grid");
    return lu.solve(P.d(w)).trace();
  };
  if (j == 1) return D1(z);
  cplx acc = 0.0;
  for (int k = 0; k < m; ++k) {
    cplx e = std::polar(1.0, 2 * pi * k / m);
    acc += D1(z + rho * e) * std::pow(e, -(j - 1));
  }
  return std::tgamma(double(j)) * acc / (double(m) * std::pow(rho, j - 1));
}

// Integrates D_{P,N} N times along the polyline zgrid and fixes the degree N-1 polynomial by
// matching the direct log det at N anchors.
inline LogDetDerivative logdet_via_traces(const Family& P, const std::vector<cplx>& zgrid, int N, double rho = 0.05) {
  if (N < 1) fail_validation("logdet_via_traces: order must be >= 1");
  if (zgrid.size() < size_t(N) + 1) fail_validation("logdet_via_traces: grid too small");
  LogDetDerivative out;
  out.order = N;
  out.z = zgrid;
  const size_t n = zgrid.size();
  for (int j = 1; j <= N + 1; ++j) {
    std::vector<cplx> v(n);
    for (size_t k = 0; k < n; ++k) v[k] = trace_log_derivative(P, zgrid[k], j, rho);
    out.D.push_back(v);
  }
  // Corrected trapezoid: int f = dz (f_a + f_b)/2 + dz^2 (f'_a - f'_b)/12.
  std::vector<cplx> f = out.D[N - 1], df = out.D[N];
  for (int level = 0; level < N; ++level) {
    std::vector<cplx> F(n, 0.0);
    for (size_t k = 1; k < n; ++k) {
      cplx dz = zgrid[k] - zgrid[k - 1];
      F[k] = F[k - 1] + 0.5 * dz * (f[k - 1] + f[k]) + dz * dz / 12.0 * (df[k - 1] - df[k]);
    }
    df = f;
    f = F;
  }
  // Direct log det with the branch continued along the grid.
  std::vector<cplx> direct(n);
  for (size_t k = 0; k < n; ++k) {
    direct[k] = logdet(P(zgrid[k]));
    if (k > 0) {
      double jump = direct[k].imag() - direct[k - 1].imag();
      direct[k] -= cplx(0.0, 2 * pi * std::round(jump / (2 * pi)));
    }
  }
  for (int a = 0; a < N; ++a) out.anchors.push_back(N == 1 ? 0 : size_t(a) * (n - 1) / size_t(N - 1));
  CMatrix A(N, N);
  CVector b(N);
  for (int a = 0; a < N; ++a) {
    cplx z = zgrid[out.anchors[a]] - zgrid[0];
    for (int p = 0; p < N; ++p) A(a, p) = std::pow(z, p);
    b[a] = direct[out.anchors[a]] - f[out.anchors[a]];
  }
  CVector c = A.colPivHouseholderQr().solve(b);
  for (size_t k = 0; k < n; ++k) {
    cplx poly = 0.0, z = zgrid[k] - zgrid[0];
    for (int p = N; p-- > 0;) poly = poly * z + c[p];
    out.logdet.push_back(f[k] + poly);
    out.log_abs_det.push_back((f[k] + poly).real());
  }
  return out;
}

inline double log_abs_det(const CMatrix& A) { return logdet(A).real(); }

// P(z) = B(z) + sum_j (z - pole)^{-j} P_j with finite-rank P_j.
struct LaurentFamily {
  cplx pole;
  std::vector<CMatrix> Pj;  // Pj[j - 1] multiplies (z - pole)^{-j}
  Family B;

  Family family() const {
    auto self = *this;
    return {[self](cplx z) -> CMatrix {
              CMatrix M = self.B(z);
              for (size_t j = 0; j < self.Pj.size(); ++j) M += std::pow(z - self.pole, -double(j + 1)) * self.Pj[j];
              return M;
            },
            [self](cplx z) -> CMatrix {
              CMatrix M = self.B.d(z);
              for (size_t j = 0; j < self.Pj.size(); ++j)
                M -= double(j + 1) * std::pow(z - self.pole, -double(j + 2)) * self.Pj[j];
              return M;
            }};
  }
  cplx det(cplx z) const { return family()(z).determinant(); }
};

// Signed order of the meromorphic determinant at z0: zeros count positive, poles negative.
inline int meromorphic_multiplicity(const LaurentFamily& L, cplx z0, double radius, int m = 64) {
  if (std::abs(std::abs(L.pole - z0) - radius) < 1e-3 * radius)
    fail_validation("meromorphic_multiplicity: contour crosses a pole");
  return checked_winding(L.family(), z0, radius, m);
}

inline void write_logdet_csv(std::ostream& os, const LogDetDerivative& d) {
  os << "node,re_z,im_z";
  for (size_t j = 0; j < d.D.size(); ++j) os << ",re_D" << j + 1 << ",im_D" << j + 1;
  os << ",log_abs_det\n";
  os.precision(12);
  for (size_t k = 0; k < d.z.size(); ++k) {
    os << k << ',' << d.z[k].real() << ',' << d.z[k].imag();
    for (const auto& v : d.D) os << ',' << v[k].real() << ',' << v[k].imag();
    os << ',' << d.log_abs_det[k] << '\n';
  }
}

}  // namespace reslab::grushin
