#pragma once

#include <cstddef>

namespace ssigan {

// Row-major C = alpha * op(A) * op(B) + beta * C, backed by OpenBLAS dgemm.
// op(A) is m x k, op(B) is k x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

}  // namespace ssigan
