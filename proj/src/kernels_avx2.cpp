// AVX2 variants of the kernels in kernels_scalar.cpp. Compiled with -mavx2
// only (no -mfma): multiplies and adds stay separate roundings so results
// match the scalar path bit for bit.

#include <immintrin.h>

#include <algorithm>
#include <array>
#include <limits>
#include <vector>

#include "kernels_impl.hpp"

namespace scq::simd::avx2 {
namespace {

constexpr std::size_t kLanes = 4;

template <int R, int V>
inline void gemm_tile(std::size_t q, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  __m256d acc[R][V];
  for (int i = 0; i < R; ++i)
    for (int v = 0; v < V; ++v)
      acc[i][v] = accumulate ? _mm256_loadu_pd(c + i * ldc + v * kLanes) : _mm256_setzero_pd();
  for (std::size_t k = 0; k < q; ++k) {
    __m256d bv[V];
    for (int v = 0; v < V; ++v) bv[v] = _mm256_loadu_pd(b + k * ldb + v * kLanes);
    for (int i = 0; i < R; ++i) {
      const __m256d av = _mm256_broadcast_sd(a + i * lda + k);
      for (int v = 0; v < V; ++v) acc[i][v] = _mm256_add_pd(acc[i][v], _mm256_mul_pd(av, bv[v]));
    }
  }
  for (int i = 0; i < R; ++i)
    for (int v = 0; v < V; ++v) _mm256_storeu_pd(c + i * ldc + v * kLanes, acc[i][v]);
}

template <int R>
inline void gemm_rows(std::size_t q, std::size_t r, const double* a, const double* b, double* c,
                      bool accumulate) {
  std::size_t j = 0;
  for (; j + 2 * kLanes <= r; j += 2 * kLanes) gemm_tile<R, 2>(q, a, q, b + j, r, c + j, r, accumulate);
  for (; j + kLanes <= r; j += kLanes) gemm_tile<R, 1>(q, a, q, b + j, r, c + j, r, accumulate);
  for (; j < r; ++j) {
    for (int i = 0; i < R; ++i) {
      double s = accumulate ? c[i * r + j] : 0.0;
      for (std::size_t k = 0; k < q; ++k) s += a[i * q + k] * b[k * r + j];
      c[i * r + j] = s;
    }
  }
}

// Lane masks for each 4-bit movemask pattern.
struct alignas(32) LaneMask {
  std::uint64_t lanes[4];
};

const std::array<LaneMask, 16>& mask_table() {
  static const std::array<LaneMask, 16> table = [] {
    std::array<LaneMask, 16> t{};
    for (int bits = 0; bits < 16; ++bits)
      for (int l = 0; l < 4; ++l) t[bits].lanes[l] = (bits >> l) & 1 ? ~0ull : 0ull;
    return t;
  }();
  return table;
}

// Strided columns share cache sets, so blocks are worked on in a packed copy.
inline void gather_block(std::size_t k, std::size_t m, std::size_t w, const double* src,
                         std::vector<double>& dst) {
  dst.resize(k * w);
  for (std::size_t j = 0; j < k; ++j) std::copy_n(src + j * m, w, dst.data() + j * w);
}

inline void scatter_block(std::size_t k, std::size_t m, std::size_t w, const std::vector<double>& src,
                          double* dst) {
  for (std::size_t j = 0; j < k; ++j) std::copy_n(src.data() + j * w, w, dst + j * m);
}

// Forward projection on a block of V*4 columns starting at p (row stride m).
template <int V>
inline void simplex_block_forward(std::size_t k, std::size_t m, std::size_t steps, double* p,
                                  unsigned char* masks) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d kd = _mm256_set1_pd(static_cast<double>(k));
  __m256d shift[V];
  for (int v = 0; v < V; ++v) shift[v] = zero;
  for (std::size_t it = 0; it < steps; ++it) {
    __m256d s[V];
    for (int v = 0; v < V; ++v) s[v] = zero;
    for (std::size_t j = 0; j < k; ++j) {
      double* row = p + j * m;
      for (int v = 0; v < V; ++v) {
        __m256d x = _mm256_loadu_pd(row + v * kLanes);
        // the previous round's shift is applied lazily here
        if (it > 0) x = _mm256_sub_pd(x, shift[v]);
        if (masks) {
          masks[(it * k + j) * V + v] = static_cast<unsigned char>(
              _mm256_movemask_pd(_mm256_cmp_pd(x, zero, _CMP_GT_OQ)));
        }
        x = _mm256_max_pd(x, zero);
        _mm256_storeu_pd(row + v * kLanes, x);
        s[v] = _mm256_add_pd(s[v], x);
      }
    }
    for (int v = 0; v < V; ++v) shift[v] = _mm256_div_pd(_mm256_sub_pd(s[v], one), kd);
  }
  if (steps == 0) return;
  for (std::size_t j = 0; j < k; ++j) {
    double* row = p + j * m;
    for (int v = 0; v < V; ++v)
      _mm256_storeu_pd(row + v * kLanes, _mm256_sub_pd(_mm256_loadu_pd(row + v * kLanes), shift[v]));
  }
}

// g is a packed k x (V*4) block; p0 keeps row stride m.
template <int V>
inline void simplex_block_backward(std::size_t k, std::size_t m, std::size_t steps,
                                   const double* p0, double* g, std::vector<double>& scratch,
                                   std::vector<unsigned char>& masks) {
  constexpr std::size_t W = V * kLanes;
  scratch.resize(k * W);
  masks.resize(steps * k * V);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t l = 0; l < W; ++l) scratch[j * W + l] = p0[j * m + l];
  simplex_block_forward<V>(k, W, steps, scratch.data(), masks.data());

  const auto& table = mask_table();
  const __m256d kd = _mm256_set1_pd(static_cast<double>(k));
  __m256d s[V];
  for (int v = 0; v < V; ++v) s[v] = _mm256_setzero_pd();
  for (std::size_t j = 0; j < k; ++j)
    for (int v = 0; v < V; ++v) s[v] = _mm256_add_pd(s[v], _mm256_loadu_pd(g + j * W + v * kLanes));
  for (std::size_t it = steps; it-- > 0;) {
    __m256d mean[V];
    for (int v = 0; v < V; ++v) {
      mean[v] = _mm256_div_pd(s[v], kd);
      s[v] = _mm256_setzero_pd();
    }
    for (std::size_t j = 0; j < k; ++j) {
      double* row = g + j * W;
      for (int v = 0; v < V; ++v) {
        const __m256d mask = _mm256_load_pd(
            reinterpret_cast<const double*>(table[masks[(it * k + j) * V + v]].lanes));
        __m256d x = _mm256_sub_pd(_mm256_loadu_pd(row + v * kLanes), mean[v]);
        x = _mm256_and_pd(x, mask);
        _mm256_storeu_pd(row + v * kLanes, x);
        s[v] = _mm256_add_pd(s[v], x);
      }
    }
  }
}

// Single-column fallbacks for ragged tails; same operation order as scalar.
void simplex_column_forward(std::size_t k, std::size_t m, std::size_t steps, double* p) {
  const double kd = static_cast<double>(k);
  for (std::size_t it = 0; it < steps; ++it) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j * m] = std::max(0.0, p[j * m]);
      s += p[j * m];
    }
    const double shift = (s - 1.0) / kd;
    for (std::size_t j = 0; j < k; ++j) p[j * m] -= shift;
  }
}

void simplex_column_backward(std::size_t k, std::size_t m, std::size_t steps, const double* p0,
                             double* g) {
  std::vector<double> p(k);
  std::vector<unsigned char> masks(steps * k);
  for (std::size_t j = 0; j < k; ++j) p[j] = p0[j * m];
  const double kd = static_cast<double>(k);
  for (std::size_t it = 0; it < steps; ++it) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      masks[it * k + j] = p[j] > 0.0 ? 1 : 0;
      p[j] = std::max(0.0, p[j]);
      s += p[j];
    }
    const double shift = (s - 1.0) / kd;
    for (std::size_t j = 0; j < k; ++j) p[j] -= shift;
  }
  for (std::size_t it = steps; it-- > 0;) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += g[j * m];
    const double mean = s / kd;
    for (std::size_t j = 0; j < k; ++j) g[j * m] = masks[it * k + j] ? g[j * m] - mean : 0.0;
  }
}

template <int V>
inline void nearest_block(std::size_t f, std::size_t k, std::size_t m, const double* z,
                          const double* codes, std::int32_t* index, double* dist) {
  __m256d best[V];
  __m256d bidx[V];
  for (int v = 0; v < V; ++v) {
    best[v] = _mm256_set1_pd(std::numeric_limits<double>::infinity());
    bidx[v] = _mm256_setzero_pd();
  }
  for (std::size_t j = 0; j < k; ++j) {
    __m256d d[V];
    for (int v = 0; v < V; ++v) d[v] = _mm256_setzero_pd();
    for (std::size_t e = 0; e < f; ++e) {
      const __m256d c = _mm256_broadcast_sd(codes + e * k + j);
      for (int v = 0; v < V; ++v) {
        const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(z + e * m + v * kLanes), c);
        d[v] = _mm256_add_pd(d[v], _mm256_mul_pd(diff, diff));
      }
    }
    const __m256d jv = _mm256_set1_pd(static_cast<double>(j));
    for (int v = 0; v < V; ++v) {
      const __m256d lt = _mm256_cmp_pd(d[v], best[v], _CMP_LT_OQ);
      best[v] = _mm256_blendv_pd(best[v], d[v], lt);
      bidx[v] = _mm256_blendv_pd(bidx[v], jv, lt);
    }
  }
  for (int v = 0; v < V; ++v) {
    alignas(32) double bi[4];
    alignas(32) double bd[4];
    _mm256_store_pd(bi, bidx[v]);
    _mm256_store_pd(bd, best[v]);
    for (std::size_t l = 0; l < kLanes; ++l) {
      index[v * kLanes + l] = static_cast<std::int32_t>(bi[l]);
      if (dist) dist[v * kLanes + l] = bd[l];
    }
  }
}

}  // namespace

void gemm(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b, double* c,
          bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= p; i += 4) gemm_rows<4>(q, r, a + i * q, b, c + i * r, accumulate);
  for (; i + 2 <= p; i += 2) gemm_rows<2>(q, r, a + i * q, b, c + i * r, accumulate);
  for (; i < p; ++i) gemm_rows<1>(q, r, a + i * q, b, c + i * r, accumulate);
}

void nearest_code(std::size_t f, std::size_t k, std::size_t m, const double* z, const double* codes,
                  std::int32_t* index, double* dist) {
  std::size_t col = 0;
  for (; col + 2 * kLanes <= m; col += 2 * kLanes)
    nearest_block<2>(f, k, m, z + col, codes, index + col, dist ? dist + col : nullptr);
  for (; col + kLanes <= m; col += kLanes)
    nearest_block<1>(f, k, m, z + col, codes, index + col, dist ? dist + col : nullptr);
  for (; col < m; ++col) {
    double best = std::numeric_limits<double>::infinity();
    std::int32_t best_idx = 0;
    for (std::size_t j = 0; j < k; ++j) {
      double d = 0.0;
      for (std::size_t e = 0; e < f; ++e) {
        const double diff = z[e * m + col] - codes[e * k + j];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_idx = static_cast<std::int32_t>(j);
      }
    }
    index[col] = best_idx;
    if (dist) dist[col] = best;
  }
}

void sq_distances(std::size_t f, std::size_t k, std::size_t m, const double* z, const double* codes,
                  double* d) {
  for (std::size_t j = 0; j < k; ++j) {
    double* drow = d + j * m;
    std::fill(drow, drow + m, 0.0);
    for (std::size_t e = 0; e < f; ++e) {
      const double* zrow = z + e * m;
      const __m256d c = _mm256_broadcast_sd(codes + e * k + j);
      std::size_t col = 0;
      for (; col + kLanes <= m; col += kLanes) {
        const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(zrow + col), c);
        _mm256_storeu_pd(drow + col,
                         _mm256_add_pd(_mm256_loadu_pd(drow + col), _mm256_mul_pd(diff, diff)));
      }
      const double cs = codes[e * k + j];
      for (; col < m; ++col) {
        const double diff = zrow[col] - cs;
        drow[col] += diff * diff;
      }
    }
  }
}

void simplex_forward(std::size_t k, std::size_t m, std::size_t steps, double* p) {
  std::vector<double> buf;
  std::size_t col = 0;
  for (; col + 2 * kLanes <= m; col += 2 * kLanes) {
    gather_block(k, m, 2 * kLanes, p + col, buf);
    simplex_block_forward<2>(k, 2 * kLanes, steps, buf.data(), nullptr);
    scatter_block(k, m, 2 * kLanes, buf, p + col);
  }
  for (; col + kLanes <= m; col += kLanes) {
    gather_block(k, m, kLanes, p + col, buf);
    simplex_block_forward<1>(k, kLanes, steps, buf.data(), nullptr);
    scatter_block(k, m, kLanes, buf, p + col);
  }
  for (; col < m; ++col) simplex_column_forward(k, m, steps, p + col);
}

void simplex_backward(std::size_t k, std::size_t m, std::size_t steps, const double* p0,
                      double* g) {
  if (steps == 0) return;
  std::vector<double> scratch;
  std::vector<unsigned char> masks;
  std::size_t col = 0;
  std::vector<double> gbuf;
  for (; col + 2 * kLanes <= m; col += 2 * kLanes) {
    gather_block(k, m, 2 * kLanes, g + col, gbuf);
    simplex_block_backward<2>(k, m, steps, p0 + col, gbuf.data(), scratch, masks);
    scatter_block(k, m, 2 * kLanes, gbuf, g + col);
  }
  for (; col + kLanes <= m; col += kLanes) {
    gather_block(k, m, kLanes, g + col, gbuf);
    simplex_block_backward<1>(k, m, steps, p0 + col, gbuf.data(), scratch, masks);
    scatter_block(k, m, kLanes, gbuf, g + col);
  }
  for (; col < m; ++col) simplex_column_backward(k, m, steps, p0 + col, g + col);
}

}  // namespace scq::simd::avx2
