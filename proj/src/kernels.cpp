#include "scq/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace scq::simd {
namespace {

const KernelTable kScalar{Backend::scalar,        "scalar",
                          &scalar::gemm,          &scalar::nearest_code,
                          &scalar::sq_distances,  &scalar::simplex_forward,
                          &scalar::simplex_backward};

#if defined(SCQ_HAVE_AVX2)
const KernelTable kAvx2{Backend::avx2,        "avx2",
                        &avx2::gemm,          &avx2::nearest_code,
                        &avx2::sq_distances,  &avx2::simplex_forward,
                        &avx2::simplex_backward};
#endif

bool cpu_has_avx2() {
#if defined(SCQ_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("SCQ_KERNELS");
  if (env && std::string_view(env) == "scalar") return &kScalar;
  if (const KernelTable* t = avx2_kernels()) return t;
  return &kScalar;
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable* avx2_kernels() {
#if defined(SCQ_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& kernels() { return *active().load(std::memory_order_relaxed); }

bool select_backend(Backend b) {
  const KernelTable* t = b == Backend::scalar ? &kScalar : avx2_kernels();
  if (!t) return false;
  active().store(t, std::memory_order_relaxed);
  return true;
}

}  // namespace scq::simd
