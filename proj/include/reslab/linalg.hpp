#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

#include "error.hpp"
#include "numerics.hpp"

extern "C" {
void zgeev_(const char* jobvl, const char* jobvr, const int* n, std::complex<double>* a, const int* lda,
            std::complex<double>* w, std::complex<double>* vl, const int* ldvl, std::complex<double>* vr,
            const int* ldvr, std::complex<double>* work, const int* lwork, double* rwork, int* info);
}

namespace reslab {

struct EigResult {
  CVector values;
  CMatrix vectors;  // right eigenvectors when requested
};

// Dense nonsymmetric eigensolve through LAPACK zgeev.
inline EigResult eig(const CMatrix& M, bool want_vectors = false) {
  const int n = int(M.rows());
  EigResult r;
  r.values.resize(n);
  if (n == 0) return r;
  CMatrix a = M;
  if (want_vectors) r.vectors.resize(n, n);
  std::complex<double> dummy;
  int one = 1, lwork = -1, info = 0;
  std::vector<double> rwork(2 * n);
  std::complex<double> wq;
  const char jl = 'N', jr = want_vectors ? 'V' : 'N';
  std::complex<double>* vr = want_vectors ? r.vectors.data() : &dummy;
  int ldvr = want_vectors ? n : 1;
  zgeev_(&jl, &jr, &n, a.data(), &n, r.values.data(), &dummy, &one, vr, &ldvr, &wq, &lwork, rwork.data(), &info);
  lwork = int(wq.real());
  std::vector<std::complex<double>> work(lwork);
  zgeev_(&jl, &jr, &n, a.data(), &n, r.values.data(), &dummy, &one, vr, &ldvr, work.data(), &lwork, rwork.data(),
         &info);
  if (info != 0) fail_numerical("eigensolver failure (zgeev info " + std::to_string(info) + ")");
  return r;
}

}  // namespace reslab
