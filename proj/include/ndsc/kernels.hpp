#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

// Data-parallel inner loops behind the dense layers and the codebook search.
// Every kernel has a scalar reference; vector variants are selected at runtime
// and tested against it.
namespace ndsc::kernels {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);

struct KernelTable {
  // c[n x m] = a[n x k] * b[k x m], row-major, c overwritten.
  void (*gemm)(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m);
  // For each of `rows` query vectors of length dim, index of the nearest of the
  // `count` codebook rows (squared l2, lowest index on ties).
  void (*nearest)(const double* queries, std::size_t rows, std::size_t dim, const double* codebook,
                  std::size_t count, std::int32_t* out_index);
  double (*dot)(const double* a, const double* b, std::size_t n);
};

bool available(Backend b);
const KernelTable& table(Backend b);

/// Best backend supported by the running CPU, or the one named by NDSC_SIMD.
Backend detect();
Backend active();
/// Throws ConfigError when the backend is not supported on this CPU.
void set_active(Backend b);

inline void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                 std::size_t m) {
  table(active()).gemm(a, b, c, n, k, m);
}
inline void nearest(const double* queries, std::size_t rows, std::size_t dim,
                    const double* codebook, std::size_t count, std::int32_t* out_index) {
  table(active()).nearest(queries, rows, dim, codebook, count, out_index);
}
inline double dot(const double* a, const double* b, std::size_t n) {
  return table(active()).dot(a, b, n);
}

namespace detail {
extern const KernelTable scalar_table;
#if defined(NDSC_HAVE_AVX2_KERNELS)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace ndsc::kernels
