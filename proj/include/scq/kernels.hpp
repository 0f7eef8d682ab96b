#pragma once

// Data-parallel inner loops behind the dense algebra and the quantizers.
//
// Every kernel has a scalar reference implementation and, where the CPU
// supports it, an AVX2 variant picked at runtime. The AVX2 variants vectorize
// across independent outputs only and keep the per-output operation order of
// the scalar code (no FMA contraction, no split reductions), so both backends
// produce bitwise-identical results.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace scq::simd {

enum class Backend { scalar, avx2 };

struct KernelTable {
  Backend backend;
  std::string_view name;

  /// c[p x r] = a[p x q] * b[q x r] (or += when accumulate). Each output is
  /// summed over q in ascending order starting from 0 (or its prior value).
  void (*gemm)(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
               double* c, bool accumulate);

  /// For each of the m columns of z (f x m), the index of the nearest column
  /// of codes (f x k) in squared Euclidean distance; lowest index wins ties.
  /// dist (nullable) receives the winning squared distance.
  void (*nearest_code)(std::size_t f, std::size_t k, std::size_t m, const double* z,
                       const double* codes, std::int32_t* index, double* dist);

  /// Squared distances d[k x m] between every code and every column of z.
  void (*sq_distances)(std::size_t f, std::size_t k, std::size_t m, const double* z,
                       const double* codes, double* d);

  /// `steps` rounds of clamp-at-zero followed by the per-column shift onto
  /// the hyperplane {sum = 1}, in place on p (k x m).
  void (*simplex_forward)(std::size_t k, std::size_t m, std::size_t steps, double* p);

  /// Vector-Jacobian product of simplex_forward: given the pre-projection
  /// matrix p0 and the upstream gradient g (both k x m), overwrite g with the
  /// gradient with respect to p0. The clamp passes zero gradient at 0.
  void (*simplex_backward)(std::size_t k, std::size_t m, std::size_t steps, const double* p0,
                           double* g);
};

const KernelTable& scalar_kernels();

/// nullptr when this build or this CPU has no AVX2 path.
const KernelTable* avx2_kernels();

/// Currently selected table. Defaults to the best supported backend; the
/// environment variable SCQ_KERNELS=scalar forces the reference path.
const KernelTable& kernels();

/// Returns false (and leaves the selection alone) if the backend is unavailable.
bool select_backend(Backend b);

}  // namespace scq::simd
