#include "scq/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <functional>

#include "scq/conv.hpp"
#include "scq/ops.hpp"
#include "scq/quantizers.hpp"
#include "scq/scq_exact.hpp"
#include "scq/trainer.hpp"

namespace scq::gc {
namespace {

using ad::NodeId;
using ad::Tape;

struct Instance {
  ad::ScalarFn f;
  std::vector<Mat> params;
};

constexpr double kWideEps = 1e-3;

struct Check {
  const char* name;
  const char* suite;
  double tolerance;
  std::size_t trials;
  std::function<Instance(Rng&)> make;
  double eps = 1e-5;
};

Mat randn(Rng& r, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (double& v : m.values()) v = scale * r.normal();
  return m;
}

// Scalarizes a node with fixed random weights.
NodeId probe(Tape& t, NodeId a, const Mat& w) { return ad::weighted_sum(t, a, w); }

Instance unary(Rng& r, std::size_t rows, std::size_t cols, std::function<NodeId(Tape&, NodeId)> op,
               std::size_t out_rows, std::size_t out_cols) {
  Mat w = randn(r, out_rows, out_cols);
  return {[op, w](Tape& t, std::span<const NodeId> p) { return probe(t, op(t, p[0]), w); },
          {randn(r, rows, cols)}};
}

Instance binary(Rng& r, Mat a, Mat b, std::function<NodeId(Tape&, NodeId, NodeId)> op, std::size_t out_rows,
                std::size_t out_cols) {
  Mat w = randn(r, out_rows, out_cols);
  return {[op, w](Tape& t, std::span<const NodeId> p) { return probe(t, op(t, p[0], p[1]), w); },
          {std::move(a), std::move(b)}};
}

std::vector<std::int32_t> random_indices(Rng& r, std::size_t m, std::size_t k) {
  std::vector<std::int32_t> idx(m);
  for (auto& i : idx) i = static_cast<std::int32_t>(r.below(k));
  return idx;
}

Instance pipeline_instance(Rng& r) {
  train::TrainConfig cfg;
  cfg.quantizer = train::QuantizerKind::scq_fast;
  cfg.latent_dim = 4;
  cfg.codebook_size = 8;
  cfg.channels = 4;
  cfg.res_channels = 2;
  cfg.res_blocks = 1;
  cfg.codebook_init = 0.5;
  cfg.commit_weight = 0.0;  // the stop-gradient terms are not a derivative of their value
  model::AutoencoderParams p = model::init_autoencoder(cfg.model(3), r);
  Mat x(3, 64);
  for (double& v : x.values()) v = r.uniform();
  Instance inst;
  for (const auto& prm : p.params) inst.params.push_back(prm.value);
  inst.f = [p, cfg, x](Tape& t, std::span<const NodeId> ids_in) {
    std::vector<NodeId> ids(ids_in.begin(), ids_in.end());
    model::ImageBatch b{1, 8, 8, x};
    Rng unused(0);
    const NodeId xn = t.leaf(x);
    return train::forward_pipeline(t, p, ids, xn, b, cfg, unused, true).loss;
  };
  return inst;
}

std::vector<Check> registry() {
  std::vector<Check> c;
  // quantizer-level operations
  c.push_back({"solve_spd_vjp", "quantizers", 1e-6, 20, [](Rng& r) {
                 Mat w = randn(r, 4, 3);
                 return Instance{[w](Tape& t, std::span<const NodeId> p) {
                                   const NodeId a = ad::add_scaled_identity(
                                       t, ad::matmul(t, ad::transpose(t, p[0]), p[0]), 1.0);
                                   return probe(t, ad::solve_spd(t, a, p[1], true), w);
                                 },
                                 {randn(r, 4, 4), randn(r, 4, 3)}};
               }});
  c.push_back({"column_shift", "quantizers", 1e-6, 20,
               [](Rng& r) { return unary(r, 5, 4, [](Tape& t, NodeId a) { return ad::column_shift(t, a); }, 5, 4); }});
  c.push_back({"simplex_project_steps", "quantizers", 1e-6, 20, [](Rng& r) {
                 return unary(r, 5, 4, [](Tape& t, NodeId a) { return quant::simplex_project_steps(t, a, 6); }, 5, 4);
               }});
  c.push_back({"ridge_solve", "quantizers", 1e-6, 20, [](Rng& r) {
                 const auto tilde = random_indices(r, 6, 5);
                 Mat w = randn(r, 5, 6);
                 return Instance{[tilde, w](Tape& t, std::span<const NodeId> p) {
                                   return probe(t, quant::ridge_solve(t, p[0], p[1], 0.1, tilde), w);
                                 },
                                 {randn(r, 3, 6), randn(r, 3, 5)}};
               }});
  c.push_back({"softmax_columns", "quantizers", 1e-6, 20, [](Rng& r) {
                 return unary(r, 5, 4, [](Tape& t, NodeId a) { return ad::softmax_columns(t, a); }, 5, 4);
               }});
  c.push_back({"neg_sq_dist_logits", "quantizers", 1e-6, 20, [](Rng& r) {
                 return binary(r, randn(r, 3, 4), randn(r, 3, 5),
                               [](Tape& t, NodeId z, NodeId cb) { return ad::neg_sq_dist_logits(t, z, cb, 0.7); }, 5, 4);
               }});
  c.push_back({"gumbel_relaxed", "quantizers", 1e-5, 20, [](Rng& r) {
                 const std::uint64_t noise_seed = r.next_u64();
                 Mat w = randn(r, 3, 6);
                 return Instance{[noise_seed, w](Tape& t, std::span<const NodeId> p) {
                                   Rng noise(noise_seed);
                                   auto q = quant::gumbel_quantize(t, p[0], p[1], 1.0, noise, true, 0.25);
                                   return probe(t, q.z_q, w);
                                 },
                                 {randn(r, 3, 6), randn(r, 3, 5)}};
               }});
  c.push_back({"scq_fast", "quantizers", 1e-5, 20, [](Rng& r) {
                 Mat target = randn(r, 3, 8);
                 return Instance{[target](Tape& t, std::span<const NodeId> p) {
                                   auto q = quant::scq_fast(t, p[0], p[1], {0.1, 20, false}, 0.25);
                                   return ad::mse(t, q.z_q, t.leaf(target));
                                 },
                                 {randn(r, 3, 8), randn(r, 3, 6)}};
               }});
  c.push_back({"scq_exact_vjp", "quantizers", 1e-5, 20, [](Rng& r) {
                 const double lambda = std::array{0.05, 0.1, 0.5, 1.0}[r.below(4)];
                 Mat w = randn(r, 5, 6);
                 return Instance{[lambda, w](Tape& t, std::span<const NodeId> p) {
                                   return probe(t, quant::scq_exact_node(t, p[0], p[1], lambda), w);
                                 },
                                 {randn(r, 3, 6), randn(r, 3, 5)}};
               }});

  // model primitives; the kWideEps ones are affine in each entry (mse is
  // quadratic), so central differences are exact up to roundoff at any step
  c.push_back({"matmul", "models", 1e-6, 20, [](Rng& r) {
                 return binary(r, randn(r, 3, 4), randn(r, 4, 2), [](Tape& t, NodeId a, NodeId b) { return ad::matmul(t, a, b); }, 3, 2);
               }, kWideEps});
  c.push_back({"add", "models", 1e-6, 20, [](Rng& r) {
                 return binary(r, randn(r, 3, 4), randn(r, 3, 4), [](Tape& t, NodeId a, NodeId b) { return ad::add(t, a, b); }, 3, 4);
               }, kWideEps});
  c.push_back({"sub", "models", 1e-6, 20, [](Rng& r) {
                 return binary(r, randn(r, 3, 4), randn(r, 3, 4), [](Tape& t, NodeId a, NodeId b) { return ad::sub(t, a, b); }, 3, 4);
               }, kWideEps});
  c.push_back({"hadamard", "models", 1e-6, 20, [](Rng& r) {
                 return binary(r, randn(r, 3, 4), randn(r, 3, 4), [](Tape& t, NodeId a, NodeId b) { return ad::hadamard(t, a, b); }, 3, 4);
               }, kWideEps});
  c.push_back({"transpose", "models", 1e-6, 20,
               [](Rng& r) { return unary(r, 3, 4, [](Tape& t, NodeId a) { return ad::transpose(t, a); }, 4, 3); }, kWideEps});
  c.push_back({"scale", "models", 1e-6, 20,
               [](Rng& r) { return unary(r, 3, 4, [](Tape& t, NodeId a) { return ad::scale(t, a, -1.7); }, 3, 4); }, kWideEps});
  c.push_back({"relu", "models", 1e-6, 20,
               [](Rng& r) { return unary(r, 4, 5, [](Tape& t, NodeId a) { return ad::relu(t, a); }, 4, 5); }});
  c.push_back({"clamp_min", "models", 1e-6, 20,
               [](Rng& r) { return unary(r, 4, 5, [](Tape& t, NodeId a) { return ad::clamp_min(t, a, 0.3); }, 4, 5); }});
  c.push_back({"mse", "models", 1e-6, 20, [](Rng& r) {
                 return Instance{[](Tape& t, std::span<const NodeId> p) { return ad::mse(t, p[0], p[1]); },
                                 {randn(r, 3, 4), randn(r, 3, 4)}};
               }, kWideEps});
  c.push_back({"add_row_bias", "models", 1e-6, 20, [](Rng& r) {
                 return binary(r, randn(r, 3, 4), randn(r, 3, 1), [](Tape& t, NodeId a, NodeId b) { return ad::add_row_bias(t, a, b); }, 3, 4);
               }, kWideEps});
  c.push_back({"conv2d_3x3", "models", 1e-6, 20, [](Rng& r) {
                 const ad::ConvGeom g{2, 5, 5, 3, 1, 1};
                 Mat w = randn(r, 3, 2 * 25);
                 return Instance{[g, w](Tape& t, std::span<const NodeId> p) {
                                   return probe(t, ad::conv2d(t, p[0], p[1], p[2], g), w);
                                 },
                                 {randn(r, 2, 50), randn(r, 3, 18), randn(r, 3, 1)}};
               }, kWideEps});
  c.push_back({"conv2d_4x4_s2", "models", 1e-6, 20, [](Rng& r) {
                 const ad::ConvGeom g{2, 6, 6, 4, 2, 1};
                 Mat w = randn(r, 3, 2 * 9);
                 return Instance{[g, w](Tape& t, std::span<const NodeId> p) {
                                   return probe(t, ad::conv2d(t, p[0], p[1], p[2], g), w);
                                 },
                                 {randn(r, 2, 72), randn(r, 3, 32), randn(r, 3, 1)}};
               }, kWideEps});
  c.push_back({"conv_transpose2d", "models", 1e-6, 20, [](Rng& r) {
                 const ad::ConvGeom g{2, 3, 3, 4, 2, 1};
                 Mat w = randn(r, 3, 2 * 36);
                 return Instance{[g, w](Tape& t, std::span<const NodeId> p) {
                                   return probe(t, ad::conv_transpose2d(t, p[0], p[1], p[2], g), w);
                                 },
                                 {randn(r, 2, 18), randn(r, 2, 48), randn(r, 3, 1)}};
               }, kWideEps});
  c.push_back({"autoencoder_scq_fast", "models", 1e-5, 3, pipeline_instance, 1e-4});
  return c;
}

}  // namespace

std::vector<CheckResult> run_suite(const std::string& suite, std::uint64_t seed) {
  if (suite != "quantizers" && suite != "models" && suite != "all")
    throw ContractViolation("unknown gradcheck suite '" + suite + "' (quantizers, models, all)");
  std::vector<CheckResult> out;
  const Rng root(seed);
  std::uint64_t check_id = 0;
  for (const Check& chk : registry()) {
    ++check_id;
    if (suite != "all" && suite != chk.suite) continue;
    CheckResult res{chk.name, chk.suite, 0.0, chk.tolerance, 0, 0, false, false, ""};
    const Rng stream = root.substream(check_id);
    for (std::uint64_t attempt = 0; res.trials < chk.trials && attempt < 10 * chk.trials; ++attempt) {
      Rng r = stream.substream(attempt);
      const Instance inst = chk.make(r);
      const ad::GradCheckReport rep = ad::grad_check_report(inst.f, inst.params, chk.eps);
      if (!rep.pattern_stable) {
        ++res.discarded;
        continue;
      }
      res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
      ++res.trials;
    }
    res.pass = res.trials == chk.trials && res.max_rel_err <= chk.tolerance;
    if (res.trials < chk.trials) res.note = "too few branch-stable instances";
    out.push_back(std::move(res));
  }
  if (suite != "models") {
    CheckResult ste{"vq_ste", "quantizers", 0.0, 0.0, 0, 0, true, true,
                    "straight-through estimator is biased by design; not compared"};
    out.push_back(std::move(ste));
  }
  return out;
}

}  // namespace scq::gc
