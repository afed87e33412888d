#pragma once

#include <cstdint>

namespace subi {

// Dense row-major f64 kernels with a pinned accumulation contract: element
// C[i][j] is produced by the chain acc <- fma(a, b, acc) over the inner
// dimension in ascending order, starting from 0. The chain is the same for
// every shape, stride, and thread count, so a 1-row matvec and a wide GEMM
// yield bit-identical rows for identical operands.

// C(m,n) = A(m,k) * B(k,n)
void gemm_nn(std::int64_t m, std::int64_t k, std::int64_t n, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double* c,
             std::int64_t ldc);

// C(m,n) = A(m,k) * B(n,k)^T   (rows of B are dotted against rows of A)
void gemm_nt(std::int64_t m, std::int64_t k, std::int64_t n, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double* c,
             std::int64_t ldc);

// C(m,n) += A(k,m)^T * B(k,n)
void gemm_tn_acc(std::int64_t m, std::int64_t k, std::int64_t n,
                 const double* a, std::int64_t lda, const double* b,
                 std::int64_t ldb, double* c, std::int64_t ldc);

// Thread count used by the kernels (clamped to hardware). Thread count never
// changes results, only wall-clock.
void set_gemm_threads(int threads);
int gemm_threads();

}  // namespace subi
