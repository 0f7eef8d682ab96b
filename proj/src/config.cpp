#include "scq/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace scq::train {
namespace {

constexpr std::pair<QuantizerKind, std::string_view> kNames[] = {
    {QuantizerKind::vq, "vq"},
    {QuantizerKind::vq_replace, "vq+replacement"},
    {QuantizerKind::gumbel, "gumbel"},
    {QuantizerKind::rq, "rq"},
    {QuantizerKind::scq_fast, "scq_fast"},
    {QuantizerKind::scq_exact, "scq_exact"},
    {QuantizerKind::identity, "identity"},
};

std::string join_issues(const std::vector<SchemaIssue>& issues) {
  std::string s = "config schema violation";
  for (const auto& i : issues) s += "\n  " + (i.pointer.empty() ? "/" : i.pointer) + ": " + i.message;
  return s;
}

class Reader {
 public:
  explicit Reader(const nlohmann::json& j) : j_(j) {}

  std::vector<SchemaIssue> issues;

  template <class T>
  void field(const std::string& key, T& out, bool required, std::function<bool(const T&)> ok = {},
             const char* range = "") {
    seen_[key] = true;
    const std::string ptr = "/" + key;
    if (!j_.contains(key)) {
      if (required) issues.push_back({ptr, "required field is missing"});
      return;
    }
    const auto& v = j_.at(key);
    T tmp{};
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return bad(ptr, "expected a boolean");
      tmp = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return bad(ptr, "expected a string");
      tmp = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        return bad(ptr, "expected a nonnegative integer");
      tmp = v.get<T>();
    } else {
      if (!v.is_number()) return bad(ptr, "expected a number");
      tmp = v.get<T>();
    }
    if (ok && !ok(tmp)) return bad(ptr, std::string("out of range, expected ") + range);
    out = tmp;
  }

  void unknown_keys() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) issues.push_back({"/" + it.key(), "unknown field"});
  }

 private:
  void bad(const std::string& ptr, std::string msg) { issues.push_back({ptr, std::move(msg)}); }

  const nlohmann::json& j_;
  std::map<std::string, bool> seen_;
};

}  // namespace

std::string_view quantizer_name(QuantizerKind k) {
  for (const auto& [kind, name] : kNames)
    if (kind == k) return name;
  return "?";
}

std::optional<QuantizerKind> parse_quantizer(std::string_view name) {
  for (const auto& [kind, n] : kNames)
    if (n == name) return kind;
  return std::nullopt;
}

bool is_soft(QuantizerKind k) { return k == QuantizerKind::scq_fast || k == QuantizerKind::scq_exact; }

model::ModelConfig TrainConfig::model(std::size_t in_channels) const {
  model::ModelConfig m;
  m.in_channels = in_channels;
  m.channels = channels;
  m.res_channels = res_channels;
  m.res_blocks = res_blocks;
  m.latent_dim = latent_dim;
  m.codebook_size = codebook_size;
  m.downsample = downsample;
  m.codebook_init = codebook_init;
  return m;
}

ConfigError::ConfigError(std::vector<SchemaIssue> issues)
    : SchemaError(join_issues(issues)), issues_(std::move(issues)) {}

TrainConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError(std::vector<SchemaIssue>{{"", "config must be a JSON object"}});
  TrainConfig c;
  Reader r(j);
  std::string quantizer;
  r.field<std::string>("quantizer", quantizer, true);
  if (j.contains("quantizer") && j["quantizer"].is_string()) {
    if (auto k = parse_quantizer(quantizer))
      c.quantizer = *k;
    else
      r.issues.push_back({"/quantizer", "unknown quantizer '" + quantizer +
                                            "' (vq, vq+replacement, gumbel, rq, scq_fast, scq_exact, identity)"});
  }
  auto pos = [](const auto& v) { return v > 0; };
  using Size = std::size_t;
  r.field<std::uint64_t>("seed", c.seed, true);
  r.field<std::string>("dataset", c.dataset, true);
  r.field<std::string>("test_dataset", c.test_dataset, false);
  r.field<double>("test_fraction", c.test_fraction, false, [](double v) { return v > 0.0 && v < 1.0; }, "(0, 1)");
  r.field<std::string>("out_dir", c.out_dir, false);
  r.field<Size>("codebook_size", c.codebook_size, false, pos, ">= 1");
  r.field<Size>("latent_dim", c.latent_dim, false, pos, ">= 1");
  r.field<double>("lambda", c.lambda, false, [](double v) { return v >= 0.0; }, ">= 0");
  r.field<Size>("steps", c.steps, false, pos, ">= 1");
  r.field<bool>("final_clamp", c.final_clamp, false);
  r.field<double>("beta", c.beta, false, [](double v) { return v > 0.0 && v < 1.0; }, "(0, 1)");
  r.field<double>("commit_weight", c.commit_weight, false, [](double v) { return v >= 0.0; }, ">= 0");
  r.field<Size>("depth", c.depth, false, pos, ">= 1");
  r.field<double>("tau", c.tau, false, [](double v) { return v > 0.0; }, "> 0");
  r.field<Size>("replace_threshold", c.replace_threshold, false, pos, ">= 1");
  r.field<double>("learning_rate", c.learning_rate, false, [](double v) { return v > 0.0; }, "> 0");
  r.field<Size>("batch_size", c.batch_size, false, pos, ">= 1");
  r.field<Size>("epochs", c.epochs, false);
  r.field<Size>("max_steps", c.max_steps, false);
  r.field<Size>("log_interval", c.log_interval, false, pos, ">= 1");
  r.field<bool>("log_wall_time", c.log_wall_time, false);
  r.field<Size>("channels", c.channels, false, pos, ">= 1");
  r.field<Size>("res_channels", c.res_channels, false, pos, ">= 1");
  r.field<Size>("res_blocks", c.res_blocks, false);
  r.field<Size>("downsample", c.downsample, false, [](Size v) { return v == 1 || v == 2; }, "1 or 2");
  r.field<double>("codebook_init", c.codebook_init, false, [](double v) { return v >= 0.0; }, ">= 0");
  r.unknown_keys();
  if (c.quantizer != QuantizerKind::scq_exact && j.contains("lambda") && j["lambda"].is_number() &&
      !(j["lambda"].get<double>() > 0.0))
    r.issues.push_back({"/lambda", "must be > 0 unless quantizer is scq_exact"});
  if (!r.issues.empty()) throw ConfigError(std::move(r.issues));
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"quantizer", quantizer_name(c.quantizer)},
      {"seed", c.seed},
      {"dataset", c.dataset},
      {"test_dataset", c.test_dataset},
      {"test_fraction", c.test_fraction},
      {"out_dir", c.out_dir},
      {"codebook_size", c.codebook_size},
      {"latent_dim", c.latent_dim},
      {"lambda", c.lambda},
      {"steps", c.steps},
      {"final_clamp", c.final_clamp},
      {"beta", c.beta},
      {"commit_weight", c.commit_weight},
      {"depth", c.depth},
      {"tau", c.tau},
      {"replace_threshold", c.replace_threshold},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"max_steps", c.max_steps},
      {"log_interval", c.log_interval},
      {"log_wall_time", c.log_wall_time},
      {"channels", c.channels},
      {"res_channels", c.res_channels},
      {"res_blocks", c.res_blocks},
      {"downsample", c.downsample},
      {"codebook_init", c.codebook_init},
  };
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::vector<SchemaIssue>{{"", std::string("invalid JSON: ") + e.what()}});
  }
}

}  // namespace scq::train
