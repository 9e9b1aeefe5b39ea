#include "ndsc/kernels.hpp"

#include <limits>
#include <vector>

namespace ndsc::kernels {
namespace {

void gemm_scalar(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* row = c + i * m;
    for (std::size_t j = 0; j < m; ++j) row[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

void nearest_scalar(const double* queries, std::size_t rows, std::size_t dim,
                    const double* codebook, std::size_t count, std::int32_t* out_index) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* q = queries + r * dim;
    double best = std::numeric_limits<double>::infinity();
    std::int32_t best_k = 0;
    for (std::size_t k = 0; k < count; ++k) {
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

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

namespace detail {
const KernelTable scalar_table{gemm_scalar, nearest_scalar, dot_scalar};
}

}  // namespace ndsc::kernels
