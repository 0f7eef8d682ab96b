#pragma once

#include <cstddef>
#include <cstdint>

namespace scq::simd {

#define SCQ_KERNEL_DECLS                                                                        \
  void gemm(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,      \
            double* c, bool accumulate);                                                        \
  void nearest_code(std::size_t f, std::size_t k, std::size_t m, const double* z,              \
                    const double* codes, std::int32_t* index, double* dist);                    \
  void sq_distances(std::size_t f, std::size_t k, std::size_t m, const double* z,              \
                    const double* codes, double* d);                                            \
  void simplex_forward(std::size_t k, std::size_t m, std::size_t steps, double* p);            \
  void simplex_backward(std::size_t k, std::size_t m, std::size_t steps, const double* p0,     \
                        double* g);

namespace scalar {
SCQ_KERNEL_DECLS
}

#if defined(SCQ_HAVE_AVX2)
namespace avx2 {
SCQ_KERNEL_DECLS
}
#endif

#undef SCQ_KERNEL_DECLS

}  // namespace scq::simd
