// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   scq_acceptance --cli build/scq --work build/acceptance_work

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oracle.hpp"
#include "scq/linalg.hpp"
#include "scq/ops.hpp"
#include "scq/quantizers.hpp"
#include "scq/rng.hpp"
#include "scq/scq_exact.hpp"

using namespace scq;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli;
fs::path g_work;
int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << detail << std::endl;
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Mat randn(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
  Mat m(r, c);
  for (double& v : m.values()) v = s * rng.normal();
  return m;
}

std::vector<double> column(const Mat& m, std::size_t c) {
  std::vector<double> v(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) v[i] = m(i, c);
  return v;
}

int run_cli(const std::string& args, std::string* out = nullptr) {
  const std::string cmd = "'" + g_cli + "' " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return -1;
  std::string text;
  std::array<char, 4096> buf{};
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), p)) > 0;) text.append(buf.data(), n);
  const int status = pclose(p);
  if (out) *out = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
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

void criterion_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const double lambdas[] = {0.01, 0.1, 1.0};
  double worst_obj = 0.0, worst_kkt = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t f = 1 + rng.below(8), k = 2 + rng.below(15), m = 4;
    const double lambda = lambdas[inst % 3];
    const Mat codes = randn(rng, f, k), z = randn(rng, f, m);
    const quant::ExactSolution sol = quant::scq_exact(z, codes, lambda);
    for (std::size_t c = 0; c < m; ++c) {
      const std::vector<double> zc = column(z, c);
      std::vector<double> anchor(k, 0.0);
      anchor[static_cast<std::size_t>(sol.tilde[c])] = 1.0;
      const std::vector<double> po = oracle::qp_oracle_column(zc, codes, lambda, anchor);
      const double fe = oracle::qp_objective(zc, codes, lambda, anchor, sol.columns[c].p);
      const double fo = oracle::qp_objective(zc, codes, lambda, anchor, po);
      worst_obj = std::max(worst_obj, std::abs(fe - fo));
      worst_kkt = std::max(worst_kkt, quant::kkt_residuals(zc, codes, lambda, static_cast<std::size_t>(sol.tilde[c]),
                                                           sol.columns[c]).worst());
    }
  }
  const double secs = seconds_since(t0);
  report(1, "oracle equivalence", worst_obj <= 1e-8 && worst_kkt <= 1e-10 && secs < 30.0,
         "max |objective gap| " + fmt("%.2e", worst_obj) + " (tol 1e-8), max KKT residual " + fmt("%.2e", worst_kkt) +
             " (tol 1e-10), " + fmt("%.1f", secs) + " s (limit 30)");
}

void criterion_gradcheck() {
  const auto t0 = Clock::now();
  std::string out;
  const int code = run_cli("--quiet gradcheck --suite all", &out);
  const double secs = seconds_since(t0);
  std::string detail = "exit " + std::to_string(code) + ", " + fmt("%.1f", secs) + " s (limit 120)";
  if (code != 0) {
    const auto pos = out.find("failing primitives:");
    if (pos != std::string::npos) detail += "; " + out.substr(pos, out.find('\n', pos) - pos);
  }
  report(2, "gradient suite", code == 0 && secs < 120.0, detail);
}

void criterion_one_hot() {
  Rng rng(103);
  double worst_fast = 0.0, worst_exact = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t f = 1 + rng.below(8), k = 2 + rng.below(15), m = 16;
    const Mat codes = randn(rng, f, k), z = randn(rng, f, m);
    const Mat anchor = quant::vq_assign(z, codes).p_tilde.p;
    const Mat pf = quant::scq_fast_forward(z, codes, {1e8, 20, false}).p.p;
    const Mat pe = quant::scq_exact(z, codes, 1e8).p;
    worst_fast = std::max(worst_fast, frobenius_norm(pf - anchor));
    worst_exact = std::max(worst_exact, frobenius_norm(pe - anchor));
  }
  report(3, "one-hot limit", worst_fast <= 1e-3 && worst_exact <= 1e-3,
         "max ||P - P~||_F fast " + fmt("%.2e", worst_fast) + ", exact " + fmt("%.2e", worst_exact) + " (tol 1e-3)");
}

void criterion_hull() {
  Rng rng(104);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t f = 1 + rng.below(8), k = 2 + rng.below(15), m = 8;
    const Mat codes = randn(rng, f, k);
    Mat w(k, m);
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += (w(j, c) = -std::log(rng.uniform()));
      for (std::size_t j = 0; j < k; ++j) w(j, c) /= s;
    }
    const Mat z = matmul(codes, w);
    const Mat p = quant::scq_exact(z, codes, 0.0).p;
    worst = std::max(worst, frobenius_norm(z - matmul(codes, p)));
  }
  report(4, "convex-hull exactness", worst <= 1e-8, "max ||Z - C P*||_F " + fmt("%.2e", worst) + " (tol 1e-8)");
}

void criterion_hand() {
  const Mat codes = Mat::from_rows({{0.0, 1.0}});
  const Mat z = Mat::from_rows({{0.6}});
  const Mat pe = quant::scq_exact(z, codes, 0.1).p;
  const Mat pf = quant::scq_fast_forward(z, codes, {0.1, 20, false}).p.p;
  const double de = std::max(std::abs(pe(0, 0) - 1.0 / 3.0), std::abs(pe(1, 0) - 2.0 / 3.0));
  const double df = std::max(std::abs(pf(0, 0) - 2.0 / 11.0), std::abs(pf(1, 0) - 9.0 / 11.0));
  report(5, "hand-traced vectors", de <= 1e-9 && df <= 1e-9,
         "exact off [1/3, 2/3] by " + fmt("%.1e", de) + ", fast off [2/11, 9/11] by " + fmt("%.1e", df) + " (tol 1e-9)");
}

struct Aggregate {
  std::map<std::string, double> mean;
  bool ok = false;
};

Aggregate train_seeds(const fs::path& cfg, const fs::path& out) {
  Aggregate a;
  if (run_cli("--quiet --config " + q(cfg) + " --out-dir " + q(out) + " train --seed-list 0,1,2") != 0) return a;
  for (const auto& row : read_csv(out / "aggregate.csv"))
    if (row.size() == 3 && row[0] != "metric") a.mean[row[0]] = std::stod(row[1]);
  a.ok = a.mean.count("quant_error") && a.mean.count("perplexity");
  return a;
}

// Criterion 6 leaves an SCQ checkpoint behind for criterion 7.
fs::path criterion_table1() {
  const auto t0 = Clock::now();
  const fs::path dir = g_work / "table1";
  fs::create_directories(dir);
  const fs::path data = dir / "synthetic.scqd";
  if (run_cli("--quiet --seed 0 gen-synth --out " + q(data) + " --n 2048 --size 32") != 0) {
    report(6, "directional table reproduction", false, "gen-synth failed");
    return {};
  }
  nlohmann::json cfg = {{"quantizer", "vq"}, {"seed", 0},      {"dataset", data.string()},
                        {"codebook_size", 64}, {"latent_dim", 8}, {"lambda", 0.1},
                        {"steps", 20},       {"epochs", 5}};
  std::ofstream(dir / "vq.json") << cfg.dump(2);
  cfg["quantizer"] = "scq_fast";
  std::ofstream(dir / "scq.json") << cfg.dump(2);

  const Aggregate vq = train_seeds(dir / "vq.json", dir / "vq");
  const Aggregate sc = train_seeds(dir / "scq.json", dir / "scq");
  const double secs = seconds_since(t0);
  if (!vq.ok || !sc.ok) {
    report(6, "directional table reproduction", false, "training failed");
    return {};
  }
  const double qe_ratio = vq.mean.at("quant_error") / sc.mean.at("quant_error");
  const double pp_ratio = sc.mean.at("perplexity") / vq.mean.at("perplexity");
  report(6, "directional table reproduction", qe_ratio >= 5.0 && pp_ratio >= 2.0 && secs < 1200.0,
         "quant error vq " + fmt("%.4g", vq.mean.at("quant_error")) + " / scq " + fmt("%.4g", sc.mean.at("quant_error")) +
             " = " + fmt("%.1f", qe_ratio) + "x (need 5x), perplexity scq " + fmt("%.2f", sc.mean.at("perplexity")) +
             " / vq " + fmt("%.2f", vq.mean.at("perplexity")) + " = " + fmt("%.2f", pp_ratio) + "x (need 2x), " +
             fmt("%.0f", secs) + " s (limit 1200)");
  return dir / "scq" / "seed_0" / "final.scqc";
}

void criterion_tops(const fs::path& checkpoint) {
  if (checkpoint.empty()) {
    report(7, "top-S curve", false, "no SCQ checkpoint from criterion 6");
    return;
  }
  const fs::path dir = g_work / "table1";
  std::string out;
  const int code = run_cli("analyze-tops --checkpoint " + q(checkpoint) + " --data " + q(dir / "synthetic.scqd") +
                               " --max-s 64 --out " + q(dir / "tops.csv"),
                           &out);
  const std::string marker = "# unrestricted mse ";
  const auto pos = out.find(marker);
  if (code != 0 || pos == std::string::npos) {
    report(7, "top-S curve", false, "analyze-tops exit " + std::to_string(code));
    return;
  }
  const double unrestricted = std::stod(out.substr(pos + marker.size()));
  const auto rows = read_csv(dir / "tops.csv");
  double worst_rise = 0.0;
  for (std::size_t s = 2; s < rows.size(); ++s)
    worst_rise = std::max(worst_rise, std::stod(rows[s][1]) - std::stod(rows[s - 1][1]));
  const double gap = std::abs(std::stod(rows.back()[1]) - unrestricted);
  report(7, "top-S curve", rows.size() == 65 && worst_rise <= 1e-6 && gap <= 1e-12,
         "max rise " + fmt("%.2e", worst_rise) + " (tol 1e-6), |mse(S=K) - unrestricted| " + fmt("%.1e", gap) +
             " (tol 1e-12), mse(1) " + rows[1][1] + ", mse(64) " + rows.back()[1]);
}

void criterion_simplex() {
  Rng rng(108);
  double worst_sum = 0.0;
  std::size_t columns = 0;
  while (columns < 10000) {
    const std::size_t f = 1 + rng.below(16), k = 1 + rng.below(64), m = 1 + rng.below(100);
    const double lambda = std::pow(10.0, rng.uniform(-3.0, 2.0));
    const Mat codes = randn(rng, f, k), z = randn(rng, f, m, std::pow(10.0, rng.uniform(-2.0, 2.0)));
    const Mat p = quant::scq_fast_forward(z, codes, {lambda, 1 + rng.below(30), false}).p.p;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += p(j, c);
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    columns += m;
  }
  double min_entry = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const Mat codes = randn(rng, 8, 64), z = randn(rng, 8, 512);
    min_entry = std::min(min_entry, quant::scq_fast_forward(z, codes, {0.1, 20, false}).min_entry);
  }
  report(8, "simplex contract", worst_sum <= 1e-9 && min_entry >= -1e-2,
         "max |column sum - 1| " + fmt("%.1e", worst_sum) + " over " + std::to_string(columns) +
             " columns (tol 1e-9), min_entry " + fmt("%.2e", min_entry) + " (bound -1e-2)");
}

template <class F>
double median_seconds(F&& step, int reps) {
  std::vector<double> t;
  step();
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    step();
    t.push_back(seconds_since(t0));
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

void criterion_runtime() {
  Rng rng(109);
  const std::size_t f = 16, k = 128, m = 4096;
  const Mat codes = randn(rng, f, k), z = randn(rng, f, m), target = randn(rng, f, m);
  auto step = [&](bool soft) {
    ad::Tape t;
    const ad::NodeId zn = t.leaf(z), cn = t.leaf(codes);
    const quant::BottleneckOutput o =
        soft ? quant::scq_fast(t, zn, cn, {0.1, 20, false}, 0.25) : quant::vq_quantize_ste(t, zn, cn, 0.25);
    const ad::NodeId loss = add(t, mse(t, o.z_q, t.leaf(target)), o.commit_loss);
    t.backward(loss);
    return t.grad(cn)(0, 0);
  };
  const double tv = median_seconds([&] { step(false); }, 9);
  const double ts = median_seconds([&] { step(true); }, 9);
  report(9, "runtime parity", ts <= 3.0 * tv,
         "median step scq_fast " + fmt("%.1f", ts * 1e3) + " ms, vq " + fmt("%.1f", tv * 1e3) + " ms, ratio " +
             fmt("%.2f", ts / tv) + " (limit 3)");
}

void criterion_determinism() {
  const fs::path dir = g_work / "determinism";
  fs::create_directories(dir);
  std::vector<std::string> differing;
  bool ran = true;
  auto twice = [&](const std::string& args, const std::vector<fs::path>& artifacts) {
    std::vector<std::string> first;
    ran &= run_cli(args) == 0;
    for (const auto& a : artifacts) first.push_back(slurp(a));
    ran &= run_cli(args) == 0;
    for (std::size_t i = 0; i < artifacts.size(); ++i)
      if (first[i].empty() || slurp(artifacts[i]) != first[i]) differing.push_back(artifacts[i].filename().string());
  };

  const fs::path data = dir / "d.scqd";
  twice("--quiet --seed 5 gen-synth --out " + q(data) + " --n 64 --size 16", {data});
  const nlohmann::json base = {{"seed", 3},          {"dataset", data.string()}, {"codebook_size", 16},
                               {"latent_dim", 4},    {"channels", 16},          {"res_channels", 8},
                               {"res_blocks", 1},    {"batch_size", 16},        {"epochs", 2},
                               {"log_interval", 2}};
  for (const char* quantizer : {"vq", "gumbel", "scq_fast", "scq_exact"}) {
    nlohmann::json cfg = base;
    cfg["quantizer"] = quantizer;
    const fs::path c = dir / (std::string(quantizer) + ".json");
    std::ofstream(c) << cfg.dump();
    const fs::path out = dir / quantizer;
    twice("--quiet --config " + q(c) + " --out-dir " + q(out) + " train",
          {out / "metrics.csv", out / "final.scqc", out / "best.scqc", out / "config.json"});
    twice("--quiet eval --checkpoint " + q(out / "final.scqc") + " --out " + q(out / "eval.csv"), {out / "eval.csv"});
  }
  report(10, "determinism", ran && differing.empty(),
         ran ? (differing.empty() ? "gen, train (vq, gumbel, scq_fast, scq_exact) and eval artifacts byte-identical"
                                  : "differing: " + [&] {
                                      std::string s;
                                      for (const auto& d : differing) s += d + " ";
                                      return s;
                                    }())
             : "a command failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work;
  app.add_option("--cli", g_cli, "Path to the scq binary")->required();
  app.add_option("--work", work, "Scratch directory")->required();
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  criterion_oracle();
  criterion_gradcheck();
  criterion_one_hot();
  criterion_hull();
  criterion_hand();
  const fs::path checkpoint = criterion_table1();
  criterion_tops(checkpoint);
  criterion_simplex();
  criterion_runtime();
  criterion_determinism();

  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << "\n";
  return g_failures == 0 ? 0 : 1;
}
