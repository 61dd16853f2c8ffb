#include "gemm.hpp"

#include <cstring>

#ifdef SELORA_USE_BLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);

namespace {
// Pin BLAS to one thread: keeps results reproducible and wall-clock
// comparisons between paired runs fair.
const bool blas_pinned = [] {
  openblas_set_num_threads(1);
  return true;
}();
}  // namespace
#endif

namespace selora {

#ifdef SELORA_USE_BLAS

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc) {
  (void)blas_pinned;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

#else

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc) {
  if (beta == 0.0) {
    for (int64_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, static_cast<size_t>(n) * sizeof(double));
  }
  auto at = [&](int64_t i, int64_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (int64_t p = 0; p < k; ++p) {
      const double av = at(i, p);
      if (trans_b) {
        const double* brow = b + p;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j * ldb];
      } else {
        const double* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

#endif

}  // namespace selora
