#include "subilstm/gemm.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace subi {

namespace {

int g_threads = 1;

// Work threshold (fma count) below which threading is not worth the fork.
constexpr std::int64_t kParallelThreshold = std::int64_t{1} << 22;

template <int ROWS>
void nn_block(std::int64_t k, std::int64_t n, const double* a, std::int64_t lda,
              const double* b, std::int64_t ldb, double* c, std::int64_t ldc) {
  for (int r = 0; r < ROWS; ++r) std::fill(c + r * ldc, c + r * ldc + n, 0.0);
  for (std::int64_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    double av[ROWS];
    for (int r = 0; r < ROWS; ++r) av[r] = a[r * lda + p];
    for (std::int64_t j = 0; j < n; ++j) {
      const double bv = brow[j];
      for (int r = 0; r < ROWS; ++r) {
        c[r * ldc + j] = std::fma(av[r], bv, c[r * ldc + j]);
      }
    }
  }
}

void nn_rows(std::int64_t m, std::int64_t k, std::int64_t n, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double* c,
             std::int64_t ldc) {
  std::int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    nn_block<4>(k, n, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  }
  for (; i < m; ++i) {
    nn_block<1>(k, n, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  }
}

void tn_rows(std::int64_t i0, std::int64_t i1, std::int64_t k, std::int64_t n,
             const double* a, std::int64_t lda, const double* b,
             std::int64_t ldb, double* c, std::int64_t ldc) {
  for (std::int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * lda;
    const double* brow = b + p * ldb;
    for (std::int64_t i = i0; i < i1; ++i) {
      const double av = arow[i];
      double* crow = c + i * ldc;
      for (std::int64_t j = 0; j < n; ++j) {
        crow[j] = std::fma(av, brow[j], crow[j]);
      }
    }
  }
}

}  // namespace

void set_gemm_threads(int threads) {
  g_threads = std::clamp(threads, 1, omp_get_max_threads());
}

int gemm_threads() { return g_threads; }

void gemm_nn(std::int64_t m, std::int64_t k, std::int64_t n, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double* c,
             std::int64_t ldc) {
  const bool parallel =
      g_threads > 1 && m > 1 && m * k * n >= kParallelThreshold && !omp_in_parallel();
  if (!parallel) {
    nn_rows(m, k, n, a, lda, b, ldb, c, ldc);
    return;
  }
#pragma omp parallel num_threads(g_threads)
  {
    const int nt = omp_get_num_threads();
    const int id = omp_get_thread_num();
    // Chunks of 4 rows keep the unrolled block aligned.
    const std::int64_t quads = (m + 3) / 4;
    const std::int64_t q0 = quads * id / nt, q1 = quads * (id + 1) / nt;
    const std::int64_t i0 = q0 * 4, i1 = std::min(m, q1 * 4);
    if (i1 > i0) {
      nn_rows(i1 - i0, k, n, a + i0 * lda, lda, b, ldb, c + i0 * ldc, ldc);
    }
  }
}

void gemm_nt(std::int64_t m, std::int64_t k, std::int64_t n, const double* a,
             std::int64_t lda, const double* b, std::int64_t ldb, double* c,
             std::int64_t ldc) {
  // Transpose B once, then run the nn kernel; the transpose is cheap next to
  // the multiply and keeps a single accumulation path.
  std::vector<double> bt(static_cast<std::size_t>(k) * n);
  for (std::int64_t j = 0; j < n; ++j) {
    const double* brow = b + j * ldb;
    for (std::int64_t p = 0; p < k; ++p) bt[p * n + j] = brow[p];
  }
  gemm_nn(m, k, n, a, lda, bt.data(), n, c, ldc);
}

void gemm_tn_acc(std::int64_t m, std::int64_t k, std::int64_t n,
                 const double* a, std::int64_t lda, const double* b,
                 std::int64_t ldb, double* c, std::int64_t ldc) {
  const bool parallel =
      g_threads > 1 && m > 1 && m * k * n >= kParallelThreshold && !omp_in_parallel();
  if (!parallel) {
    tn_rows(0, m, k, n, a, lda, b, ldb, c, ldc);
    return;
  }
#pragma omp parallel num_threads(g_threads)
  {
    const int nt = omp_get_num_threads();
    const int id = omp_get_thread_num();
    const std::int64_t i0 = m * id / nt, i1 = m * (id + 1) / nt;
    if (i1 > i0) tn_rows(i0, i1, k, n, a, lda, b, ldb, c, ldc);
  }
}

}  // namespace subi
