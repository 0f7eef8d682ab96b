#pragma once

// Training configuration and its JSON schema.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "scq/errors.hpp"
#include "scq/models.hpp"

namespace scq::train {

enum class QuantizerKind { vq, vq_replace, gumbel, rq, scq_fast, scq_exact, identity };

std::string_view quantizer_name(QuantizerKind k);
std::optional<QuantizerKind> parse_quantizer(std::string_view name);
/// Quantizers whose evaluation-time weights are convex combinations.
bool is_soft(QuantizerKind k);

struct TrainConfig {
  QuantizerKind quantizer = QuantizerKind::vq;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string test_dataset;  // empty: hold out the tail of `dataset`
  double test_fraction = 0.125;
  std::string out_dir;

  std::size_t codebook_size = 64;
  std::size_t latent_dim = 8;
  double lambda = 0.1;
  std::size_t steps = 20;
  bool final_clamp = false;
  double beta = 0.25;
  double commit_weight = 1.0;
  std::size_t depth = 2;
  double tau = 1.0;
  std::size_t replace_threshold = 100;

  double learning_rate = 2e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::size_t max_steps = 0;  // 0: no cap
  std::size_t log_interval = 50;
  bool log_wall_time = false;

  std::size_t channels = 32;
  std::size_t res_channels = 16;
  std::size_t res_blocks = 2;
  std::size_t downsample = 2;
  double codebook_init = 0.0;

  model::ModelConfig model(std::size_t in_channels) const;
};

struct SchemaIssue {
  std::string pointer;  // JSON pointer, e.g. "/quantizer"
  std::string message;
};

/// Every schema violation found in one pass.
class ConfigError : public SchemaError {
 public:
  explicit ConfigError(std::vector<SchemaIssue> issues);
  const std::vector<SchemaIssue>& issues() const { return issues_; }

 private:
  std::vector<SchemaIssue> issues_;
};

TrainConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
/// Reads a JSON file; parse errors become ConfigError at pointer "".
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace scq::train
