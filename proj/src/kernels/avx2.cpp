// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "ndsc/kernels.hpp"

#include <immintrin.h>

#include <limits>
#include <vector>

namespace ndsc::kernels {
namespace {

inline double hsum(__m256d v) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, v);
  return ((lanes[0] + lanes[1]) + lanes[2]) + lanes[3];
}

// 4 x 8 register tile; B rows are streamed once per tile.
void gemm_avx2(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    std::size_t j = 0;
    for (; j + 8 <= m; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * m + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      _mm256_storeu_pd(c + (i + 0) * m + j, c00);
      _mm256_storeu_pd(c + (i + 0) * m + j + 4, c01);
      _mm256_storeu_pd(c + (i + 1) * m + j, c10);
      _mm256_storeu_pd(c + (i + 1) * m + j + 4, c11);
      _mm256_storeu_pd(c + (i + 2) * m + j, c20);
      _mm256_storeu_pd(c + (i + 2) * m + j + 4, c21);
      _mm256_storeu_pd(c + (i + 3) * m + j, c30);
      _mm256_storeu_pd(c + (i + 3) * m + j + 4, c31);
    }
    for (; j + 4 <= m; j += 4) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * m + j);
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), bv, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), bv, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p), bv, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p), bv, c3);
      }
      _mm256_storeu_pd(c + (i + 0) * m + j, c0);
      _mm256_storeu_pd(c + (i + 1) * m + j, c1);
      _mm256_storeu_pd(c + (i + 2) * m + j, c2);
      _mm256_storeu_pd(c + (i + 3) * m + j, c3);
    }
    for (; j < m; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        const double* ar = a + (i + r) * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += ar[p] * b[p * m + j];
        c[(i + r) * m + j] = acc;
      }
    }
  }
  for (; i < n; ++i) {
    const double* ar = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= m; j += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(ar + p), _mm256_loadu_pd(b + p * m + j), acc);
      _mm256_storeu_pd(c + i * m + j, acc);
    }
    for (; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * b[p * m + j];
      c[i * m + j] = acc;
    }
  }
}

// Vectorized across four codebook rows at a time over a transposed copy, so the
// per-code accumulation order over dimensions is the same as the scalar kernel
// and distances (hence tie-breaking) agree bit for bit.
void nearest_avx2(const double* queries, std::size_t rows, std::size_t dim,
                  const double* codebook, std::size_t count, std::int32_t* out_index) {
  const std::size_t blocks = count / 4;
  std::vector<double> transposed(blocks * 4 * dim);
  for (std::size_t blk = 0; blk < blocks; ++blk)
    for (std::size_t d = 0; d < dim; ++d)
      for (std::size_t l = 0; l < 4; ++l)
        transposed[(blk * dim + d) * 4 + l] = codebook[(blk * 4 + l) * dim + d];

  alignas(32) double lanes[4];
  for (std::size_t r = 0; r < rows; ++r) {
    const double* q = queries + r * dim;
    double best = std::numeric_limits<double>::infinity();
    std::int32_t best_k = 0;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      __m256d acc = _mm256_setzero_pd();
      const double* t = transposed.data() + blk * dim * 4;
      for (std::size_t d = 0; d < dim; ++d) {
        const __m256d diff = _mm256_sub_pd(_mm256_set1_pd(q[d]), _mm256_loadu_pd(t + d * 4));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(diff, diff));
      }
      _mm256_store_pd(lanes, acc);
      for (std::size_t l = 0; l < 4; ++l) {
        if (lanes[l] < best) {
          best = lanes[l];
          best_k = static_cast<std::int32_t>(blk * 4 + l);
        }
      }
    }
    for (std::size_t k = blocks * 4; k < count; ++k) {
      const double* c = codebook + k * dim;
      double d2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = q[d] - c[d];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        best_k = static_cast<std::int32_t>(k);
      }
    }
    out_index[r] = best_k;
  }
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  double res = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) res += a[i] * b[i];
  return res;
}

}  // namespace

namespace detail {
const KernelTable avx2_table{gemm_avx2, nearest_avx2, dot_avx2};
}

}  // namespace ndsc::kernels
