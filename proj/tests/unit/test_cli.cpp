#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "scq/dataset.hpp"
#include "scq/errors.hpp"

using namespace scq;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(SCQ_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), p)) > 0;) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scq_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Writes a 40-image 16x16 dataset and a small config pointing at it.
fs::path tiny_setup(const fs::path& dir, const std::string& quantizer) {
  REQUIRE(cli("--quiet --seed 9 gen-synth --out " + q(dir / "d.scqd") + " --n 40 --size 16").code == 0);
  const nlohmann::json cfg = {{"quantizer", quantizer}, {"seed", 1},          {"dataset", (dir / "d.scqd").string()},
                              {"codebook_size", 8},     {"latent_dim", 4},    {"channels", 8},
                              {"res_channels", 4},      {"res_blocks", 1},    {"batch_size", 8},
                              {"epochs", 1},            {"log_interval", 2},  {"steps", 5},
                              {"test_fraction", 0.2}};
  spit(dir / "cfg.json", cfg.dump());
  return dir / "cfg.json";
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("gen-synth --n 3").code == 2);
  CHECK(cli("--help").code == 0);
  const fs::path dir = scratch("usage");
  CHECK(cli("gen-synth --out " + q(dir / "x.scqd") + " --n 2 --size 30").code == 2);
  CHECK(cli("train").code == 2);
}

TEST_CASE("schema violations exit with 2 and name the field") {
  const fs::path dir = scratch("schema");
  spit(dir / "c.json", R"({"seed": 1, "dataset": "x.scqd", "out_dir": "o"})");
  const Run r = cli("--config " + q(dir / "c.json") + " train");
  CHECK(r.code == 2);
  CHECK(r.out.find("/quantizer") != std::string::npos);

  spit(dir / "c2.json", R"({"quantizer": "vq", "seed": 1, "dataset": "x.scqd", "out_dir": "o", "lamda": 1})");
  const Run r2 = cli("--config " + q(dir / "c2.json") + " train");
  CHECK(r2.code == 2);
  CHECK(r2.out.find("/lamda") != std::string::npos);

  spit(dir / "c3.json", "{ not json");
  CHECK(cli("--config " + q(dir / "c3.json") + " train").code == 2);

  const fs::path cfg = tiny_setup(dir, "vq");
  CHECK(cli("--config " + q(cfg) + " train --set nope").code == 2);
  const Run r4 = cli("--config " + q(cfg) + " --out-dir " + q(dir / "o") + " train --set lambda=-1 --set quantizer=scq_fast");
  CHECK(r4.code == 2);
  CHECK(r4.out.find("/lambda") != std::string::npos);
}

TEST_CASE("gen-synth sizes and determinism") {
  const fs::path dir = scratch("gen");
  REQUIRE(cli("--seed 4 gen-synth --out " + q(dir / "empty.scqd") + " --n 0 --size 32").code == 0);
  CHECK(fs::file_size(dir / "empty.scqd") == 24);
  CHECK(data::read_dataset(dir / "empty.scqd").count == 0);

  REQUIRE(cli("--seed 4 gen-synth --out " + q(dir / "a.scqd") + " --n 5 --size 32").code == 0);
  REQUIRE(cli("--seed 4 gen-synth --out " + q(dir / "b.scqd") + " --n 5 --size 32").code == 0);
  REQUIRE(cli("--seed 5 gen-synth --out " + q(dir / "c.scqd") + " --n 5 --size 32").code == 0);
  CHECK(fs::file_size(dir / "a.scqd") == 24 + 5 * 3 * 32 * 32 * 4);
  CHECK(slurp(dir / "a.scqd") == slurp(dir / "b.scqd"));
  CHECK(slurp(dir / "a.scqd") != slurp(dir / "c.scqd"));

  CHECK(data::encode_dataset(data::generate_synthetic(2048, 32, 0)).size() == 24u + 2048u * 3 * 32 * 32 * 4);

  const Run bad = cli("gen-synth --out /proc/nope/x.scqd --n 1 --size 8");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("/proc/nope") != std::string::npos);
}

TEST_CASE("SCQD round trip is byte-identical") {
  const fs::path dir = scratch("roundtrip");
  REQUIRE(cli("--seed 2 gen-synth --out " + q(dir / "a.scqd") + " --n 7 --size 8").code == 0);
  const data::Dataset d = data::read_dataset(dir / "a.scqd");
  CHECK(d.count == 7);
  CHECK(d.height == 8);
  for (float v : d.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  data::write_dataset(dir / "b.scqd", d);
  CHECK(slurp(dir / "a.scqd") == slurp(dir / "b.scqd"));

  const std::string bytes = slurp(dir / "a.scqd");
  spit(dir / "short.scqd", bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(data::read_dataset(dir / "short.scqd"), FormatError);
  spit(dir / "long.scqd", bytes + "x");
  CHECK_THROWS_AS(data::read_dataset(dir / "long.scqd"), FormatError);
}

TEST_CASE("CIFAR ingestion") {
  const fs::path dir = scratch("cifar");
  std::string batch(2 * 3073, '\0');
  batch[0] = 3;
  batch[3073] = 7;
  for (std::size_t i = 0; i < 3072; ++i) batch[3073 + 1 + i] = static_cast<char>(255);
  batch[3073 + 1 + 1024] = static_cast<char>(51);  // first green byte of the second record
  spit(dir / "test_batch.bin", batch);
  REQUIRE(cli("--quiet ingest-cifar --in " + q(dir) + " --out " + q(dir / "t.scqd") + " --split test").code == 0);
  const data::Dataset d = data::read_dataset(dir / "t.scqd");
  REQUIRE(d.count == 2);
  CHECK(d.channels == 3);
  CHECK(d.height == 32);
  CHECK(d.width == 32);
  for (std::size_t i = 0; i < 3072; ++i) CHECK(d.pixels[i] == 0.0f);
  CHECK(d.pixels[3072] == 1.0f);
  CHECK(d.pixels[3072 + 1024] == 0.2f);
  CHECK(d.pixels.back() == 1.0f);

  for (int b = 1; b <= 5; ++b) spit(dir / ("data_batch_" + std::to_string(b) + ".bin"), batch);
  REQUIRE(cli("--quiet ingest-cifar --in " + q(dir) + " --out " + q(dir / "tr.scqd") + " --split train").code == 0);
  CHECK(data::read_dataset(dir / "tr.scqd").count == 10);

  spit(dir / "data_batch_3.bin", batch + "xyz");
  const Run bad = cli("ingest-cifar --in " + q(dir) + " --out " + q(dir / "bad.scqd") + " --split train");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("data_batch_3.bin") != std::string::npos);

  fs::remove(dir / "data_batch_5.bin");
  CHECK(cli("ingest-cifar --in " + q(dir) + " --out " + q(dir / "bad.scqd") + " --split train").code == 1);
  CHECK(cli("ingest-cifar --in " + q(dir) + " --out " + q(dir / "bad.scqd") + " --split dev").code == 2);
}

TEST_CASE("train, eval and analyze-tops") {
  const fs::path dir = scratch("train");
  const fs::path cfg = tiny_setup(dir, "scq_fast");
  const std::string base = "--quiet --config " + q(cfg) + " ";

  // identical arguments, so the same out dir; the config echo records it
  const char* files[] = {"metrics.csv", "final.scqc", "best.scqc", "config.json"};
  REQUIRE(cli(base + "--out-dir " + q(dir / "a") + " train").code == 0);
  std::vector<std::string> first;
  for (const char* f : files) first.push_back(slurp(dir / "a" / f));
  REQUIRE(cli(base + "--out-dir " + q(dir / "a") + " train").code == 0);
  for (std::size_t i = 0; i < 4; ++i) {
    INFO(files[i]);
    CHECK(!first[i].empty());
    CHECK(slurp(dir / "a" / files[i]) == first[i]);
  }

  const fs::path ck = dir / "a" / "final.scqc";
  REQUIRE(cli("--quiet eval --checkpoint " + q(ck) + " --out " + q(dir / "e1.csv")).code == 0);
  REQUIRE(cli("--quiet eval --checkpoint " + q(ck) + " --out " + q(dir / "e2.csv")).code == 0);
  CHECK(slurp(dir / "e1.csv") == slurp(dir / "e2.csv"));
  // eval defaults to the held-out split, matching the last test row of training
  const auto metrics = read_csv(dir / "a" / "metrics.csv");
  const auto eval = read_csv(dir / "e1.csv");
  REQUIRE(eval.size() == 2);
  CHECK(eval[1][3] == metrics.back()[3]);
  CHECK(eval[1][4] == metrics.back()[4]);
  CHECK(eval[1][5] == metrics.back()[5]);

  const Run t = cli("analyze-tops --checkpoint " + q(ck) + " --data " + q(dir / "d.scqd") +
                    " --max-s 8 --limit 4 --out " + q(dir / "tops.csv"));
  REQUIRE(t.code == 0);
  const auto rows = read_csv(dir / "tops.csv");
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == std::vector<std::string>{"s", "mse", "latent_mse"});
  const std::string marker = "# unrestricted mse ";
  const auto pos = t.out.find(marker);
  REQUIRE(pos != std::string::npos);
  const double unrestricted = std::stod(t.out.substr(pos + marker.size()));
  CHECK(std::abs(std::stod(rows[8][1]) - unrestricted) <= 1e-12);
  for (std::size_t s = 2; s <= 8; ++s) CHECK(std::stod(rows[s][2]) <= std::stod(rows[s - 1][2]) + 1e-6);

  const Run one = cli("--quiet analyze-tops --checkpoint " + q(ck) + " --data " + q(dir / "d.scqd") +
                      " --max-s 1 --limit 2 --out " + q(dir / "one.csv"));
  CHECK(one.code == 0);
  CHECK(read_csv(dir / "one.csv").size() == 2);
  CHECK(cli("--quiet analyze-tops --checkpoint " + q(ck) + " --data " + q(dir / "d.scqd") + " --max-s 9").code == 2);
  CHECK(cli("--quiet eval --checkpoint " + q(dir / "missing.scqc")).code == 1);

  const fs::path vq_dir = scratch("train_vq");
  const fs::path vq_cfg = tiny_setup(vq_dir, "vq");
  REQUIRE(cli("--quiet --config " + q(vq_cfg) + " --out-dir " + q(vq_dir / "o") + " train --set epochs=0").code == 0);
  const Run hard = cli("analyze-tops --checkpoint " + q(vq_dir / "o" / "final.scqc") + " --data " +
                       q(vq_dir / "d.scqd") + " --max-s 2");
  CHECK(hard.code == 2);
  CHECK(hard.out.find("soft quantizer") != std::string::npos);
}

TEST_CASE("seed list fans out and aggregates") {
  const fs::path dir = scratch("seeds");
  const fs::path cfg = tiny_setup(dir, "vq");
  REQUIRE(cli("--quiet --config " + q(cfg) + " --out-dir " + q(dir / "o") + " train --seed-list 1,2,3").code == 0);
  double sum = 0.0;
  std::vector<double> mses;
  for (int s = 1; s <= 3; ++s) {
    const fs::path m = dir / "o" / ("seed_" + std::to_string(s)) / "metrics.csv";
    REQUIRE(fs::exists(m));
    const double v = std::stod(read_csv(m).back()[3]);
    mses.push_back(v);
    sum += v;
  }
  CHECK(mses[0] != mses[1]);
  const auto agg = read_csv(dir / "o" / "aggregate.csv");
  REQUIRE(agg.size() == 7);
  CHECK(agg[0] == std::vector<std::string>{"metric", "mean", "stddev"});
  CHECK(agg[1][0] == "mse");
  CHECK(std::stod(agg[1][1]) == doctest::Approx(sum / 3.0).epsilon(1e-14));
  const double mean = sum / 3.0;
  double var = 0.0;
  for (double v : mses) var += (v - mean) * (v - mean);
  CHECK(std::stod(agg[1][2]) == doctest::Approx(std::sqrt(var / 2.0)).epsilon(1e-12));

  CHECK(cli("--quiet --config " + q(cfg) + " --out-dir " + q(dir / "p") + " train --seed-list 1,x").code == 2);
}

TEST_CASE("gradcheck exit codes") {
  const Run ok = cli("gradcheck --suite quantizers");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("all gradient checks passed") != std::string::npos);

  const Run bad = cli("--quiet gradcheck --suite quantizers --corrupt-vjp simplex_project_steps");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("failing primitives:") != std::string::npos);
  CHECK(bad.out.find("simplex_project_steps") != std::string::npos);

  CHECK(cli("gradcheck --suite everything").code == 2);
}
