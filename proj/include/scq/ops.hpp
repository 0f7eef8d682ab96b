#pragma once

// Differentiable primitives recorded on an ad::Tape.

#include <cstdint>
#include <vector>

#include "scq/autodiff.hpp"

namespace scq::ad {

NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId transpose(Tape& t, NodeId a);
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId hadamard(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, double s);
NodeId add_const(Tape& t, NodeId a, const Mat& c);
/// a + s * I for square a.
NodeId add_scaled_identity(Tape& t, NodeId a, double s);
/// x (c x n) + b (c x 1) broadcast across columns.
NodeId add_row_bias(Tape& t, NodeId x, NodeId b);

/// max(lo, a) elementwise; the subgradient at the kink is 0.
NodeId clamp_min(Tape& t, NodeId a, double lo);
inline NodeId relu(Tape& t, NodeId a) { return clamp_min(t, a, 0.0); }

/// Stop-gradient: forwards the value, passes no gradient back.
NodeId detach(Tape& t, NodeId a);

NodeId sum(Tape& t, NodeId a);
/// sum(w .* a) for a constant weight matrix; handy for scalarizing checks.
NodeId weighted_sum(Tape& t, NodeId a, const Mat& w);
/// Mean of squared differences over all entries.
NodeId mse(Tape& t, NodeId a, NodeId b);

/// X = A^{-1} B for SPD A. With `symmetric_a`, dL/dA is symmetrized, which is
/// the right gradient when A itself is built symmetrically.
NodeId solve_spd(Tape& t, NodeId a, NodeId b, bool symmetric_a);

struct SolveSpdGrads {
  Mat grad_a;
  Mat grad_b;
};

/// Backward of X = A^{-1} B: grad_B = A^{-1} U, grad_A = -grad_B X^T
/// (symmetrized when requested).
SolveSpdGrads solve_spd_vjp(const Mat& a, const Mat& b, const Mat& x, const Mat& upstream,
                            bool symmetrize = true);

/// Per-column shift onto the hyperplane {sum = 1}: p - ((1^T p - 1)/K) 1.
NodeId column_shift(Tape& t, NodeId p);

/// Columns of c (f x k) selected by index, giving f x indices.size().
NodeId gather_columns(Tape& t, NodeId c, const std::vector<std::int32_t>& indices);

/// Straight-through: value of `quantized`, gradient routed unchanged to `input`.
NodeId straight_through(Tape& t, NodeId input, NodeId quantized);

/// Column-wise softmax.
NodeId softmax_columns(Tape& t, NodeId logits);

/// -||z_m - c_k||^2 / tau for every code k and column m (k x m).
NodeId neg_sq_dist_logits(Tape& t, NodeId z, NodeId c, double tau);

}  // namespace scq::ad
