#include "scq/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "scq/kernels.hpp"

namespace scq {

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows())
    throw ContractViolation("matmul: inner dimensions differ (" + a.shape_str() + " * " +
                            b.shape_str() + ")");
  Mat c(a.rows(), b.cols());
  if (c.empty()) return c;
  simd::kernels().gemm(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data(), false);
  return c;
}

void matmul_acc(const Mat& a, const Mat& b, Mat& c) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
    throw ContractViolation("matmul_acc: shape mismatch");
  if (c.empty()) return;
  simd::kernels().gemm(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data(), true);
}

Mat matmul_tn(const Mat& a, const Mat& b) { return matmul(a.transposed(), b); }

Mat matmul_nt(const Mat& a, const Mat& b) { return matmul(a, b.transposed()); }

Mat cholesky_spd(const Mat& a) {
  const std::size_t n = a.rows();
  SCQ_EXPECT(a.cols() == n, "cholesky_spd: matrix is not square");
  const double tol = 1e-12 * std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol)
        throw ContractViolation("cholesky_spd: matrix is not symmetric");

  Mat l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0))
      throw NotPositiveDefinite("cholesky_spd: non-positive pivot " + std::to_string(d) +
                                " at index " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Mat cholesky_solve(const Mat& l, const Mat& b) {
  const std::size_t n = l.rows();
  SCQ_EXPECT(b.rows() == n, "cholesky_solve: right-hand side has wrong row count");
  const std::size_t m = b.cols();
  Mat x = b;
  // forward: L Y = B, row-oriented so the inner loop runs over contiguous columns
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      const auto xk = x.row(k);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lik * xk[c];
    }
    const double d = l(i, i);
    for (std::size_t c = 0; c < m; ++c) xi[c] /= d;
  }
  // backward: L^T X = Y
  for (std::size_t i = n; i-- > 0;) {
    auto xi = x.row(i);
    for (std::size_t k = i + 1; k < n; ++k) {
      const double lki = l(k, i);
      const auto xk = x.row(k);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lki * xk[c];
    }
    const double d = l(i, i);
    for (std::size_t c = 0; c < m; ++c) xi[c] /= d;
  }
  return x;
}

Mat solve_spd(const Mat& a, const Mat& b) { return cholesky_solve(cholesky_spd(a), b); }

Mat inverse_spd(const Mat& a) {
  Mat inv = solve_spd(a, Mat::identity(a.rows()));
  for (std::size_t i = 0; i < inv.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double s = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = s;
      inv(j, i) = s;
    }
  return inv;
}

Mat solve_lu(Mat a, Mat b, double rel_tol) {
  const std::size_t n = a.rows();
  SCQ_EXPECT(a.cols() == n && b.rows() == n, "solve_lu: shape mismatch");
  const std::size_t m = b.cols();
  const double scale = std::max(max_abs(a), 1e-300);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) <= rel_tol * scale)
      throw DegenerateActiveSet("solve_lu: singular system at column " + std::to_string(col));
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      for (std::size_t c = 0; c < m; ++c) std::swap(b(col, c), b(piv, c));
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < m; ++c) b(r, c) -= f * b(col, c);
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t c = 0; c < m; ++c) {
      double s = b(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= a(i, k) * b(k, c);
      b(i, c) = s / a(i, i);
    }
  }
  return b;
}

}  // namespace scq
