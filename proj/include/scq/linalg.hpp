#pragma once

#include "scq/mat.hpp"

namespace scq {

/// A * B with a fixed ascending inner-index summation order.
Mat matmul(const Mat& a, const Mat& b);
/// A^T * B.
Mat matmul_tn(const Mat& a, const Mat& b);
/// A * B^T.
Mat matmul_nt(const Mat& a, const Mat& b);
/// c += a * b
void matmul_acc(const Mat& a, const Mat& b, Mat& c);

/// Lower-triangular L with L L^T = A. Throws NotPositiveDefinite on a
/// non-positive pivot and ContractViolation if A is not square/symmetric.
Mat cholesky_spd(const Mat& a);

/// X with L L^T X = B for a Cholesky factor L.
Mat cholesky_solve(const Mat& l, const Mat& b);

/// X with A X = B for symmetric positive definite A.
Mat solve_spd(const Mat& a, const Mat& b);

/// A^{-1} for symmetric positive definite A (symmetrized).
Mat inverse_spd(const Mat& a);

/// Gaussian elimination with partial pivoting for small general systems.
/// Throws DegenerateActiveSet if a pivot falls below `rel_tol * max|A|`.
Mat solve_lu(Mat a, Mat b, double rel_tol = 1e-13);

}  // namespace scq
