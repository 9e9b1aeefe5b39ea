#include "ndsc/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "ndsc/error.hpp"

namespace ndsc::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(NDSC_HAVE_AVX2_KERNELS) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<int>& active_slot() {
  static std::atomic<int> slot{static_cast<int>(detect())};
  return slot;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "unknown";
}

bool available(Backend b) {
  switch (b) {
    case Backend::scalar: return true;
    case Backend::avx2: {
      static const bool has = cpu_has_avx2();
      return has;
    }
  }
  return false;
}

const KernelTable& table(Backend b) {
#if defined(NDSC_HAVE_AVX2_KERNELS)
  if (b == Backend::avx2) return detail::avx2_table;
#else
  (void)b;
#endif
  return detail::scalar_table;
}

Backend detect() {
  if (const char* env = std::getenv("NDSC_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Backend::scalar;
    if (want == "avx2" && available(Backend::avx2)) return Backend::avx2;
  }
  return available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

Backend active() { return static_cast<Backend>(active_slot().load(std::memory_order_relaxed)); }

void set_active(Backend b) {
  if (!available(b))
    throw ConfigError("kernel backend '" + std::string(backend_name(b)) +
                      "' is not supported on this CPU");
  active_slot().store(static_cast<int>(b), std::memory_order_relaxed);
}

}  // namespace ndsc::kernels
