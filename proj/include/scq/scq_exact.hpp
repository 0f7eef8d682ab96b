#pragma once

// Exact soft convex quantization. Each column z of Z_e is quantized by
//
//   p* = argmin_p ||z - C p||^2 + lambda ||p - e_t||^2   s.t.  p >= 0, 1^T p = 1,
//
// where e_t is the one-hot nearest-code assignment. Columns are independent
// K-dimensional QPs, solved here with a primal active-set method; gradients
// come from differentiating the KKT system restricted to the free set.

#include <cstdint>
#include <span>
#include <vector>

#include "scq/autodiff.hpp"
#include "scq/mat.hpp"

namespace scq::quant {

struct ColumnSolution {
  std::vector<double> p;        // K primal weights
  double mu = 0.0;              // multiplier of 1^T p = 1
  std::vector<double> nu;       // K multipliers of p >= 0 (zero on the free set)
  std::vector<std::size_t> free_set;  // {j : p_j > 0}, ascending
  std::size_t changes = 0;      // active-set additions + removals
  bool degenerate = false;      // strict complementarity fails (within tolerance)
};

struct KktResiduals {
  double stationarity = 0.0;    // ||grad f + mu 1 - nu||_inf
  double primal = 0.0;          // max(|1^T p - 1|, max(0, -min p))
  double dual = 0.0;            // max(0, -min nu)
  double complementarity = 0.0; // |nu^T p|

  double worst() const;
};

struct ExactSolution {
  Mat p;                               // K x M
  std::vector<std::int32_t> tilde;     // one-hot VQ index per column
  std::vector<ColumnSolution> columns;
};

/// Objective value for one column.
double scq_objective(std::span<const double> z, const Mat& codes, double lambda,
                     std::span<const double> p, std::size_t tilde);

/// Solves one column. `gram` is C^T C (pass an empty Mat to have it computed).
/// Throws SolverStall after 10*K active-set changes.
ColumnSolution scq_exact_column(std::span<const double> z, const Mat& codes, double lambda,
                                std::size_t tilde, const Mat& gram = Mat());

/// Solves every column of z (F x M); the one-hot anchors come from vq_assign.
ExactSolution scq_exact(const Mat& z, const Mat& codes, double lambda);

KktResiduals kkt_residuals(std::span<const double> z, const Mat& codes, double lambda,
                           std::size_t tilde, const ColumnSolution& sol);

struct ExactVjp {
  Mat grad_codes;              // F x K
  std::vector<double> grad_z;  // F
};

/// Implicit-function gradient of p*(z, C) contracted with `upstream` = dL/dp*.
/// Throws DegenerateActiveSet if the reduced KKT system is singular.
ExactVjp scq_exact_vjp(std::span<const double> z, const Mat& codes, double lambda,
                       const ColumnSolution& sol, std::span<const double> upstream);

/// Tape node producing P* (K x M) from z (F x M) and codes (F x K).
ad::NodeId scq_exact_node(ad::Tape& t, ad::NodeId z, ad::NodeId codes, double lambda);

}  // namespace scq::quant
