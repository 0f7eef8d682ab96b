#include <algorithm>
#include <limits>
#include <vector>

#include "kernels_impl.hpp"

namespace scq::simd::scalar {

void gemm(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b, double* c,
          bool accumulate) {
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    if (!accumulate) std::fill(crow, crow + r, 0.0);
    const double* arow = a + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = arow[k];
      const double* brow = b + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

void nearest_code(std::size_t f, std::size_t k, std::size_t m, const double* z, const double* codes,
                  std::int32_t* index, double* dist) {
  for (std::size_t col = 0; col < m; ++col) {
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
      const double c = codes[e * k + j];
      const double* zrow = z + e * m;
      for (std::size_t col = 0; col < m; ++col) {
        const double diff = zrow[col] - c;
        drow[col] += diff * diff;
      }
    }
  }
}

void simplex_forward(std::size_t k, std::size_t m, std::size_t steps, double* p) {
  std::vector<double> colsum(m);
  const double kd = static_cast<double>(k);
  for (std::size_t it = 0; it < steps; ++it) {
    std::fill(colsum.begin(), colsum.end(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      double* row = p + j * m;
      for (std::size_t col = 0; col < m; ++col) {
        row[col] = std::max(0.0, row[col]);
        colsum[col] += row[col];
      }
    }
    for (double& s : colsum) s = (s - 1.0) / kd;
    for (std::size_t j = 0; j < k; ++j) {
      double* row = p + j * m;
      for (std::size_t col = 0; col < m; ++col) row[col] -= colsum[col];
    }
  }
}

void simplex_backward(std::size_t k, std::size_t m, std::size_t steps, const double* p0,
                      double* g) {
  if (steps == 0) return;
  // Replay the forward pass and keep every clamp mask.
  std::vector<unsigned char> masks(steps * k * m);
  std::vector<double> p(p0, p0 + k * m);
  std::vector<double> colsum(m);
  const double kd = static_cast<double>(k);
  for (std::size_t it = 0; it < steps; ++it) {
    unsigned char* mask = masks.data() + it * k * m;
    std::fill(colsum.begin(), colsum.end(), 0.0);
    for (std::size_t idx = 0; idx < k * m; ++idx) {
      mask[idx] = p[idx] > 0.0 ? 1 : 0;
      p[idx] = std::max(0.0, p[idx]);
      colsum[idx % m] += p[idx];
    }
    for (double& s : colsum) s = (s - 1.0) / kd;
    for (std::size_t idx = 0; idx < k * m; ++idx) p[idx] -= colsum[idx % m];
  }
  for (std::size_t it = steps; it-- > 0;) {
    const unsigned char* mask = masks.data() + it * k * m;
    std::fill(colsum.begin(), colsum.end(), 0.0);
    for (std::size_t idx = 0; idx < k * m; ++idx) colsum[idx % m] += g[idx];
    for (double& s : colsum) s /= kd;
    for (std::size_t idx = 0; idx < k * m; ++idx)
      g[idx] = mask[idx] ? g[idx] - colsum[idx % m] : 0.0;
  }
}

}  // namespace scq::simd::scalar
