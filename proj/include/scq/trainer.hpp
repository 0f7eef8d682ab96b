#pragma once

// Training loop, evaluation and metrics logging for the autoencoder.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "scq/checkpoint.hpp"
#include "scq/config.hpp"
#include "scq/dataset.hpp"
#include "scq/models.hpp"
#include "scq/quantizers.hpp"

namespace scq::train {

/// Raised when the loss stops being finite; the message carries batch statistics.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double mse = 0.0;
  double quant_error = 0.0;
  double perplexity = 1.0;
  double loss_total = 0.0;
  double loss_commit = 0.0;
  double min_entry = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,split,mse,quant_error,perplexity,loss_total,loss_commit,min_entry,wall_ms";
std::string format_row(const MetricsRow& r);

struct AdamState {
  std::vector<Mat> m, v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
void adam_step(std::vector<Mat*> params, const std::vector<Mat>& grads, AdamState& state, double lr);

struct PipelineOut {
  model::EncodeOut enc;
  quant::BottleneckOutput q;
  ad::NodeId x_hat = 0;
  ad::NodeId recon = 0;
  ad::NodeId loss = 0;
};

/// encoder -> bottleneck -> decoder -> recon mse + commit_weight * commitment.
PipelineOut forward_pipeline(ad::Tape& t, const model::AutoencoderParams& p,
                             const std::vector<ad::NodeId>& ids, ad::NodeId x, const model::ImageBatch& batch,
                             const TrainConfig& cfg, Rng& rng, bool training);

struct Split {
  data::Dataset train, test;
};
Split load_split(const TrainConfig& cfg);

/// No-gradient pass over `test` in fixed batch order.
MetricsRow evaluate(const TrainConfig& cfg, const model::AutoencoderParams& p, const data::Dataset& test);

struct TrainResult {
  std::vector<MetricsRow> rows;
  model::AutoencoderParams params;
  MetricsRow final_test;
};

/// Writes metrics.csv, config.json, final.scqc and best.scqc into out_dir.
/// `log` (optional) receives one line per metrics row.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log);

/// Rebuilds config and parameters from a checkpoint; shape or name
/// mismatches raise SchemaError.
struct LoadedModel {
  TrainConfig cfg;
  model::AutoencoderParams params;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

}  // namespace scq::train
