#pragma once

// Quantization bottlenecks: nearest-code VQ with the straight-through
// estimator, Gumbel-softmax, residual VQ, dead-code replacement, and soft
// convex quantization (fast relaxation here; the exact QP in scq_exact.hpp).
//
// Latents are flattened F x M matrices (one column per spatial position);
// codebooks are F x K.

#include <cstdint>
#include <vector>

#include "scq/autodiff.hpp"
#include "scq/mat.hpp"
#include "scq/rng.hpp"

namespace scq::quant {

enum class AssignmentKind { one_hot, soft };

/// K x M weights; one-hot columns for hard quantizers, convex weights otherwise.
struct Assignment {
  Mat p;
  AssignmentKind kind = AssignmentKind::soft;
};

/// Codebook vectors plus the number of consecutive steps each code went unused.
struct Codebook {
  Mat vectors;  // F x K
  std::vector<std::uint32_t> idle_steps;

  Codebook() = default;
  explicit Codebook(Mat v) : vectors(std::move(v)), idle_steps(vectors.cols(), 0) {}
  std::size_t dim() const { return vectors.rows(); }
  std::size_t size() const { return vectors.cols(); }
};

struct ScqConfig {
  double lambda = 0.1;
  std::size_t steps = 20;
  /// Clamp negatives and renormalize after the last projection round.
  bool final_clamp = false;
};

struct VqAssignment {
  std::vector<std::int32_t> indices;
  Assignment p_tilde;
};

/// Nearest code per column, lowest index on ties.
VqAssignment vq_assign(const Mat& z, const Mat& codes);

Mat one_hot(const std::vector<std::int32_t>& indices, std::size_t k);

/// Everything a training step needs from a bottleneck.
struct BottleneckOutput {
  ad::NodeId z_q = 0;          // what the decoder consumes
  ad::NodeId commit_loss = 0;  // scalar
  Assignment weights;          // for perplexity
  std::vector<std::vector<std::int32_t>> codes;  // hard indices per depth (empty for SCQ)
  double quant_error = 0.0;    // mean squared (Z_e - Z_q) over latent entries
  double min_entry = 0.0;      // most negative weight (0 for hard quantizers)
};

/// (1-beta) mse(sg[z_e], z_q) + beta mse(z_e, sg[z_q]).
ad::NodeId commitment_loss(ad::Tape& t, ad::NodeId z_e, ad::NodeId z_q, double beta);

BottleneckOutput vq_quantize_ste(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, double beta);

/// Training: Z_q = C softmax(-||z-c||^2/tau + G) with Gumbel noise G.
/// Evaluation: Z_q is the nearest code.
BottleneckOutput gumbel_quantize(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, double tau,
                                 Rng& rng, bool training, double beta);

/// Residual VQ with one shared codebook over `depth` stages.
BottleneckOutput rq_quantize(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, std::size_t depth,
                             double beta);

/// Scalable SCQ: one-hot anchor, regularized least squares, `steps` rounds of
/// alternating projection, Z_q = C P. Fully differentiable in z_e and codes.
BottleneckOutput scq_fast(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, const ScqConfig& cfg,
                          double beta);

/// Exact SCQ bottleneck (active-set QP forward, KKT backward).
BottleneckOutput scq_exact_bottleneck(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes,
                                      double lambda, double beta);

/// P0 = (C^T C + lambda I)^{-1} (C^T Z + lambda P~) as one node; its backward
/// costs O(K F M) instead of the O(K^2 M) of a generic solve.
ad::NodeId ridge_solve(ad::Tape& t, ad::NodeId z, ad::NodeId codes, double lambda,
                       const std::vector<std::int32_t>& tilde);

/// Alternating projection node (clamp, then column shift, `steps` times).
ad::NodeId simplex_project_steps(ad::Tape& t, ad::NodeId p, std::size_t steps);
Mat simplex_project_steps(Mat p, std::size_t steps);

/// Value-level SCQ forward used by analyses and tests.
struct QuantizeResult {
  Mat z_q;
  Assignment p;
  double quant_error = 0.0;
  double min_entry = 0.0;
  double perplexity = 1.0;
};
QuantizeResult scq_fast_forward(const Mat& z, const Mat& codes, const ScqConfig& cfg);

/// exp(entropy) of mean code usage; negative weights are clamped and
/// columns renormalized first.
double perplexity(const Assignment& a);
/// Adds the normalized columns of `a` into `mass` (length K).
void accumulate_usage(const Assignment& a, std::vector<double>& mass);
double perplexity_from_mass(const std::vector<double>& mass);

/// Keep the S largest weights per column (lowest index on ties), renormalize.
Assignment top_s_restrict(const Assignment& a, std::size_t s);

/// Updates idle counters: codes in `used` reset to 0, all others increment.
void record_usage(Codebook& cb, const std::vector<std::int32_t>& used);

/// Overwrites every code idle for >= threshold steps with a uniformly drawn
/// column of z_e and resets its counter. Returns the replaced code indices.
std::vector<std::size_t> codebook_replacement(Codebook& cb, const Mat& z_e, std::size_t threshold,
                                              Rng& rng);

double mean_squared_diff(const Mat& a, const Mat& b);

}  // namespace scq::quant
