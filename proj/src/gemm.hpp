#pragma once

#include <cstdint>

namespace selora {

/// Row-major C = op(A)·op(B) + beta·C with C of size m×n and inner size k.
/// `lda`/`ldb` are the leading dimensions of the stored matrices.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc);

}  // namespace selora
