// scq: dataset generation and ingestion, training, evaluation, analyses and
// the gradient-check suite.
//
// Exit codes: 0 success, 1 check or run failure, 2 usage or schema error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scq/analysis.hpp"
#include "scq/autodiff.hpp"
#include "scq/dataset.hpp"
#include "scq/gradcheck.hpp"
#include "scq/trainer.hpp"

namespace {

using namespace scq;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  std::string out_dir;
  bool quiet = false;
};

struct UsageError : Error {
  using Error::Error;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

train::TrainConfig build_config(const Globals& g, const std::vector<std::string>& overrides) {
  if (g.config.empty()) throw UsageError("--config is required");
  nlohmann::json j = train::read_json_file(g.config);
  if (!j.is_object()) throw train::ConfigError(std::vector<train::SchemaIssue>{{"", "config must be a JSON object"}});
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + o + "'");
    j[o.substr(0, eq)] = parse_override_value(o.substr(eq + 1));
  }
  if (g.seed_given) j["seed"] = g.seed;
  if (!g.out_dir.empty()) j["out_dir"] = g.out_dir;
  return train::parse_config(j);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--seed-list entries must be nonnegative integers, got '" + item + "'");
    }
  }
  if (seeds.empty()) throw UsageError("--seed-list is empty");
  return seeds;
}

int cmd_gen_synth(const std::string& out, std::size_t n, std::size_t size, const Globals& g) {
  data::write_dataset(out, data::generate_synthetic(n, size, g.seed));
  if (!g.quiet) std::cout << "wrote " << n << " images of " << size << "x" << size << " to " << out << "\n";
  return 0;
}

int cmd_ingest(const std::string& in, const std::string& out, const std::string& split, const Globals& g) {
  const auto files = data::cifar_split_files(in, split);
  const data::Dataset d = data::read_cifar_batches(files);
  data::write_dataset(out, d);
  if (!g.quiet) std::cout << "wrote " << d.count << " images to " << out << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::vector<std::string>& overrides, const std::string& seed_list) {
  train::TrainConfig cfg = build_config(g, overrides);
  if (cfg.out_dir.empty())
    throw train::ConfigError(std::vector<train::SchemaIssue>{{"/out_dir", "required (in the config or via --out-dir)"}});
  std::ostream* log = g.quiet ? nullptr : &std::cout;
  if (seed_list.empty()) {
    if (log) *log << train::kMetricsHeader << "\n";
    train::train(cfg, cfg.out_dir, log);
    return 0;
  }

  const std::vector<std::uint64_t> seeds = parse_seed_list(seed_list);
  std::vector<train::MetricsRow> finals;
  for (std::uint64_t s : seeds) {
    train::TrainConfig c = cfg;
    c.seed = s;
    const std::filesystem::path dir = std::filesystem::path(cfg.out_dir) / ("seed_" + std::to_string(s));
    if (log) *log << "# seed " << s << "\n" << train::kMetricsHeader << "\n";
    finals.push_back(train::train(c, dir, log).final_test);
  }
  using Field = double train::MetricsRow::*;
  const std::pair<const char*, Field> fields[] = {
      {"mse", &train::MetricsRow::mse},
      {"quant_error", &train::MetricsRow::quant_error},
      {"perplexity", &train::MetricsRow::perplexity},
      {"loss_total", &train::MetricsRow::loss_total},
      {"loss_commit", &train::MetricsRow::loss_commit},
      {"min_entry", &train::MetricsRow::min_entry},
  };
  std::string csv = "metric,mean,stddev\n";
  const double n = static_cast<double>(finals.size());
  for (const auto& [name, field] : fields) {
    double mean = 0.0;
    for (const auto& r : finals) mean += r.*field;
    mean /= n;
    double var = 0.0;
    for (const auto& r : finals) var += (r.*field - mean) * (r.*field - mean);
    const double sd = finals.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    csv += std::string(name) + "," + num(mean) + "," + num(sd) + "\n";
  }
  write_text(std::filesystem::path(cfg.out_dir) / "aggregate.csv", csv);
  if (log) *log << csv;
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& out,
             const Globals& g) {
  const train::LoadedModel m = train::load_model(checkpoint);
  const data::Dataset test = data_path.empty() ? train::load_split(m.cfg).test : data::read_dataset(data_path);
  const train::MetricsRow row = train::evaluate(m.cfg, m.params, test);
  const std::string text = std::string(train::kMetricsHeader) + "\n" + train::format_row(row) + "\n";
  std::filesystem::path dest = out;
  if (dest.empty() && !g.out_dir.empty()) dest = std::filesystem::path(g.out_dir) / "eval.csv";
  if (!dest.empty()) write_text(dest, text);
  if (!g.quiet) std::cout << text;
  return 0;
}

int cmd_tops(const std::string& checkpoint, const std::string& data_path, std::size_t max_s, std::size_t limit,
             const std::string& out, const Globals& g) {
  const train::LoadedModel m = train::load_model(checkpoint);
  const data::Dataset images = data::read_dataset(data_path);
  const train::TopSReport rep = train::analyze_tops(m, images, max_s, limit);
  std::string csv = "s,mse,latent_mse\n";
  for (const auto& r : rep.rows) csv += std::to_string(r.s) + "," + num(r.mse) + "," + num(r.latent_mse) + "\n";
  std::filesystem::path dest = out;
  if (dest.empty() && !g.out_dir.empty()) dest = std::filesystem::path(g.out_dir) / "tops.csv";
  if (!dest.empty()) write_text(dest, csv);
  if (!g.quiet) {
    std::cout << csv;
    std::cout << "# unrestricted mse " << num(rep.unrestricted_mse) << " latent_mse "
              << num(rep.unrestricted_latent_mse) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& suite, const std::string& corrupt, const Globals& g) {
  if (!corrupt.empty()) ad::set_vjp_corruption(corrupt);
  const auto results = gc::run_suite(suite, g.seed_given ? g.seed : 20240607);
  std::vector<std::string> failing;
  for (const auto& r : results) {
    char line[256];
    if (r.excluded)
      std::snprintf(line, sizeof line, "%-24s %-10s excluded  (%s)", r.name.c_str(), r.suite.c_str(), r.note.c_str());
    else
      std::snprintf(line, sizeof line, "%-24s %-10s max_rel_err %.3e  tol %.0e  trials %zu  discarded %zu  %s%s%s",
                    r.name.c_str(), r.suite.c_str(), r.max_rel_err, r.tolerance, r.trials, r.discarded,
                    r.pass ? "ok" : "FAIL", r.note.empty() ? "" : "  ", r.note.c_str());
    if (!g.quiet || !r.pass) std::cout << line << "\n";
    if (!r.pass) failing.push_back(r.name);
  }
  if (failing.empty()) {
    if (!g.quiet) std::cout << "all gradient checks passed\n";
    return 0;
  }
  std::cout << "failing primitives:";
  for (const auto& f : failing) std::cout << " " << f;
  std::cout << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft convex quantization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--config", g.config, "Training config (JSON)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_flag("--quiet", g.quiet, "Only print errors and failures");

  std::string out, in, split = "train", checkpoint, data_path, seed_list, suite = "all", corrupt;
  std::size_t n = 0, size = 32, max_s = 0, limit = 128;
  std::vector<std::string> overrides;

  auto* gen = app.add_subcommand("gen-synth", "Write a seeded synthetic SCQD dataset");
  gen->add_option("--out", out, "Output file")->required();
  gen->add_option("--n", n, "Number of images")->required();
  gen->add_option("--size", size, "Image side length (multiple of 4)");

  auto* ingest = app.add_subcommand("ingest-cifar", "Convert CIFAR-10 binary batches to SCQD");
  ingest->add_option("--in", in, "Directory with the binary batches")->required();
  ingest->add_option("--out", out, "Output file")->required();
  ingest->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* tr = app.add_subcommand("train", "Train an autoencoder");
  tr->add_option("--set", overrides, "Config override key=value (repeatable)");
  tr->add_option("--seed-list", seed_list, "Comma-separated seeds; one run per seed plus aggregate.csv");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data_path, "Dataset (default: the checkpoint config's test split)");
  ev->add_option("--out", out, "Write the metrics row here");

  auto* tops = app.add_subcommand("analyze-tops", "Reconstruction error versus top-S restriction");
  tops->add_option("--checkpoint", checkpoint, "Soft-quantizer checkpoint")->required();
  tops->add_option("--data", data_path, "Dataset")->required();
  tops->add_option("--max-s", max_s, "Largest S")->required();
  tops->add_option("--limit", limit, "Number of images (0: all)");
  tops->add_option("--out", out, "Write the CSV here");

  auto* gcmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gcmd->add_option("--suite", suite, "quantizers, models or all")
      ->check(CLI::IsMember({"quantizers", "models", "all"}));
  gcmd->add_option("--corrupt-vjp", corrupt, "Scale one op's upstream gradient (test hook)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_synth(out, n, size, g);
    if (*ingest) return cmd_ingest(in, out, split, g);
    if (*tr) return cmd_train(g, overrides, seed_list);
    if (*ev) return cmd_eval(checkpoint, data_path, out, g);
    if (*tops) return cmd_tops(checkpoint, data_path, max_s, limit, out, g);
    if (*gcmd) return cmd_gradcheck(suite, corrupt, g);
  } catch (const train::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const train::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
