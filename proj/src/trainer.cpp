#include "scq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "scq/ops.hpp"

namespace scq::train {
namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kStepStream = 3;
constexpr std::uint64_t kReplaceStream = 4;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

quant::BottleneckOutput identity_bottleneck(ad::Tape& t, ad::NodeId z_e, std::size_t k) {
  quant::BottleneckOutput out;
  out.z_q = z_e;
  out.commit_loss = t.leaf(Mat(1, 1));
  Mat w(k, t.value(z_e).cols());
  for (std::size_t c = 0; c < w.cols(); ++c) w(0, c) = 1.0;
  out.weights = {std::move(w), quant::AssignmentKind::one_hot};
  return out;
}

// Running sums for one metrics row.
struct Accum {
  double mse = 0.0, quant = 0.0, commit = 0.0;
  double pixels = 0.0, latents = 0.0;
  double min_entry = 0.0;
  std::vector<double> mass;

  void add(double batch_mse, double batch_quant, double batch_commit, double px, double lat,
           double min_e, const quant::Assignment& w) {
    mse += batch_mse * px;
    quant += batch_quant * lat;
    commit += batch_commit * lat;
    pixels += px;
    latents += lat;
    min_entry = std::min(min_entry, min_e);
    quant::accumulate_usage(w, mass);
  }

  MetricsRow row(std::size_t step, std::size_t epoch, const char* split, double commit_weight) const {
    MetricsRow r;
    r.step = step;
    r.epoch = epoch;
    r.split = split;
    r.mse = pixels > 0 ? mse / pixels : 0.0;
    r.quant_error = latents > 0 ? quant / latents : 0.0;
    r.loss_commit = latents > 0 ? commit / latents : 0.0;
    r.loss_total = r.mse + commit_weight * r.loss_commit;
    r.perplexity = quant::perplexity_from_mass(mass);
    r.min_entry = min_entry;
    return r;
  }
};

std::string batch_diagnostics(const ad::Tape& t, const PipelineOut& out) {
  auto stats = [](const Mat& m) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, s = 0.0;
    std::size_t bad = 0;
    for (double v : m.values()) {
      if (!std::isfinite(v)) {
        ++bad;
        continue;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      s += v;
    }
    std::ostringstream o;
    o << "min " << lo << " max " << hi << " mean " << s / static_cast<double>(std::max<std::size_t>(1, m.size()))
      << " non-finite " << bad;
    return o.str();
  };
  std::ostringstream o;
  o << "\n  z_e: " << stats(t.value(out.enc.z_e)) << "\n  z_q: " << stats(t.value(out.q.z_q))
    << "\n  x_hat: " << stats(t.value(out.x_hat)) << "\n  recon " << t.value(out.recon)[0] << " commit "
    << t.value(out.q.commit_loss)[0];
  return o.str();
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + r.split + "," + num(r.mse) + "," +
         num(r.quant_error) + "," + num(r.perplexity) + "," + num(r.loss_total) + "," + num(r.loss_commit) +
         "," + num(r.min_entry) + "," + num(r.wall_ms);
}

void adam_step(std::vector<Mat*> params, const std::vector<Mat>& grads, AdamState& state, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  SCQ_EXPECT(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Mat* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  SCQ_EXPECT(state.m.size() == params.size(), "adam_step: state does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    require_same_shape(p, grads[i], "adam_step");
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    for (std::size_t e = 0; e < p.size(); ++e) {
      const double g = grads[i][e];
      m[e] = b1 * m[e] + (1.0 - b1) * g;
      v[e] = b2 * v[e] + (1.0 - b2) * g * g;
      p[e] -= lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + eps);
    }
  }
}

PipelineOut forward_pipeline(ad::Tape& t, const model::AutoencoderParams& p,
                             const std::vector<ad::NodeId>& ids, ad::NodeId x, const model::ImageBatch& batch,
                             const TrainConfig& cfg, Rng& rng, bool training) {
  PipelineOut out;
  out.enc = model::encoder_forward(t, p, ids, x, batch.n, batch.h, batch.w);
  const ad::NodeId codes = ids[p.codebook_index()];
  const ad::NodeId z_e = out.enc.z_e;
  switch (cfg.quantizer) {
    case QuantizerKind::vq:
    case QuantizerKind::vq_replace:
      out.q = quant::vq_quantize_ste(t, z_e, codes, cfg.beta);
      break;
    case QuantizerKind::gumbel:
      out.q = quant::gumbel_quantize(t, z_e, codes, cfg.tau, rng, training, cfg.beta);
      break;
    case QuantizerKind::rq:
      out.q = quant::rq_quantize(t, z_e, codes, cfg.depth, cfg.beta);
      break;
    case QuantizerKind::scq_fast:
      out.q = quant::scq_fast(t, z_e, codes, {cfg.lambda, cfg.steps, cfg.final_clamp}, cfg.beta);
      break;
    case QuantizerKind::scq_exact:
      out.q = quant::scq_exact_bottleneck(t, z_e, codes, cfg.lambda, cfg.beta);
      break;
    case QuantizerKind::identity:
      out.q = identity_bottleneck(t, z_e, p.cfg.codebook_size);
      break;
  }
  out.x_hat = model::decoder_forward(t, p, ids, out.q.z_q, batch.n, out.enc.h, out.enc.w);
  out.recon = ad::mse(t, x, out.x_hat);
  out.loss = ad::add(t, out.recon, ad::scale(t, out.q.commit_loss, cfg.commit_weight));
  return out;
}

Split load_split(const TrainConfig& cfg) {
  Split s;
  data::Dataset all = data::read_dataset(cfg.dataset);
  if (!cfg.test_dataset.empty()) {
    s.train = std::move(all);
    s.test = data::read_dataset(cfg.test_dataset);
    if (s.test.channels != s.train.channels || s.test.height != s.train.height ||
        s.test.width != s.train.width)
      throw SchemaError("test dataset image shape differs from the training dataset");
  } else {
    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * all.count));
    SCQ_EXPECT(all.count >= 2 && n_test >= 1 && n_test < all.count,
               "dataset too small to hold out a test split");
    s.train = all.slice(0, all.count - n_test);
    s.test = all.slice(all.count - n_test, n_test);
  }
  return s;
}

MetricsRow evaluate(const TrainConfig& cfg, const model::AutoencoderParams& p, const data::Dataset& test) {
  if (test.channels != p.cfg.in_channels)
    throw SchemaError("dataset has " + std::to_string(test.channels) + " channels but the model expects " +
                      std::to_string(p.cfg.in_channels));
  SCQ_EXPECT(test.count >= 1, "evaluate: empty dataset");
  Accum acc;
  Rng unused(cfg.seed);
  for (std::size_t first = 0; first < test.count; first += cfg.batch_size) {
    const std::size_t n = std::min<std::size_t>(cfg.batch_size, test.count - first);
    const model::ImageBatch b = model::images_from_nchw(test.images(first, n), n, test.channels, test.height, test.width);
    ad::Tape t;
    const auto ids = model::bind_params(t, p);
    const ad::NodeId x = t.leaf(b.x);
    const PipelineOut out = forward_pipeline(t, p, ids, x, b, cfg, unused, false);
    acc.add(t.value(out.recon)[0], out.q.quant_error, t.value(out.q.commit_loss)[0],
            static_cast<double>(b.x.size()), static_cast<double>(t.value(out.enc.z_e).size()), out.q.min_entry,
            out.q.weights);
  }
  return acc.row(0, 0, "test", cfg.commit_weight);
}

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto wall = [&] {
    return cfg.log_wall_time ? std::chrono::duration<double, std::milli>(Clock::now() - t0).count() : 0.0;
  };

  const Split split = load_split(cfg);
  const data::Dataset& tr = split.train;
  const Rng root(cfg.seed);
  Rng init = root.substream(kInitStream);
  TrainResult res;
  res.params = model::init_autoencoder(cfg.model(tr.channels), init);
  model::AutoencoderParams& p = res.params;

  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  if (!metrics) throw IoError("cannot write '" + (out_dir / "metrics.csv").string() + "'");
  metrics << kMetricsHeader << "\n";
  {
    std::ofstream cj(out_dir / "config.json", std::ios::trunc);
    cj << to_json(cfg).dump(2) << "\n";
  }
  const nlohmann::json cfg_json = to_json(cfg);
  double best_mse = std::numeric_limits<double>::infinity();

  auto emit = [&](MetricsRow r) {
    r.wall_ms = wall();
    metrics << format_row(r) << "\n";
    if (log) *log << format_row(r) << "\n";
    res.rows.push_back(r);
  };
  auto test_row = [&](std::size_t step, std::size_t epoch) {
    MetricsRow r = evaluate(cfg, p, split.test);
    r.step = step;
    r.epoch = epoch;
    emit(r);
    res.final_test = res.rows.back();
    if (r.mse < best_mse) {
      best_mse = r.mse;
      ckpt::save_checkpoint(out_dir / "best.scqc", cfg_json, p.params);
    }
  };

  test_row(0, 0);

  AdamState adam;
  quant::Codebook usage(p.params[p.codebook_index()].value);
  std::vector<std::size_t> order(tr.count);
  std::vector<float> batch_pixels;
  std::size_t step = 0;
  bool done = cfg.max_steps > 0 && step >= cfg.max_steps;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = root.substream(hash_combine(kShuffleStream, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    Accum acc;
    for (std::size_t first = 0; first < tr.count && !done; first += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, tr.count - first);
      batch_pixels.clear();
      for (std::size_t i = 0; i < n; ++i) {
        auto img = tr.image(order[first + i]);
        batch_pixels.insert(batch_pixels.end(), img.begin(), img.end());
      }
      const model::ImageBatch b = model::images_from_nchw(batch_pixels, n, tr.channels, tr.height, tr.width);

      ad::Tape t;
      const auto ids = model::bind_params(t, p);
      const ad::NodeId x = t.leaf(b.x);
      Rng step_rng = root.substream(hash_combine(kStepStream, step));
      const PipelineOut out = forward_pipeline(t, p, ids, x, b, cfg, step_rng, true);
      const double loss = t.value(out.loss)[0];
      if (!std::isfinite(loss))
        throw TrainingAborted("non-finite loss at step " + std::to_string(step) + " (epoch " +
                              std::to_string(epoch) + ")" + batch_diagnostics(t, out));
      t.backward(out.loss);

      std::vector<Mat*> targets;
      std::vector<Mat> grads;
      for (std::size_t i = 0; i < p.params.size(); ++i) {
        targets.push_back(&p.params[i].value);
        grads.push_back(t.grad(ids[i]));
      }
      adam_step(targets, grads, adam, cfg.learning_rate);

      if (cfg.quantizer == QuantizerKind::vq_replace) {
        usage.vectors = p.params[p.codebook_index()].value;
        quant::record_usage(usage, out.q.codes.at(0));
        Rng rr = root.substream(hash_combine(kReplaceStream, step));
        if (!quant::codebook_replacement(usage, t.value(out.enc.z_e), cfg.replace_threshold, rr).empty())
          p.params[p.codebook_index()].value = usage.vectors;
      }

      acc.add(t.value(out.recon)[0], out.q.quant_error, t.value(out.q.commit_loss)[0],
              static_cast<double>(b.x.size()), static_cast<double>(t.value(out.enc.z_e).size()), out.q.min_entry,
              out.q.weights);
      ++step;
      if (step % cfg.log_interval == 0) {
        emit(acc.row(step, epoch, "train", cfg.commit_weight));
        acc = Accum{};
      }
      if (cfg.max_steps > 0 && step >= cfg.max_steps) done = true;
    }
    test_row(step, epoch);
  }

  ckpt::save_checkpoint(out_dir / "final.scqc", cfg_json, p.params);
  if (!metrics) throw IoError("write failed for '" + (out_dir / "metrics.csv").string() + "'");
  return res;
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  ckpt::Checkpoint ck = ckpt::load_checkpoint(checkpoint);
  LoadedModel lm;
  lm.cfg = parse_config(ck.config);
  if (ck.params.empty()) throw SchemaError("checkpoint has no parameters");
  const Mat& first = ck.params.front().value;
  if (ck.params.front().name != "enc.down1.w" || first.cols() % 16 != 0)
    throw SchemaError("checkpoint does not start with the encoder input convolution");
  Rng dummy(0);
  lm.params = model::init_autoencoder(lm.cfg.model(first.cols() / 16), dummy);
  if (lm.params.params.size() != ck.params.size())
    throw SchemaError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, config implies " +
                      std::to_string(lm.params.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& want = lm.params.params[i];
    const auto& got = ck.params[i];
    if (want.name != got.name || !want.value.same_shape(got.value))
      throw SchemaError("checkpoint parameter '" + got.name + "' " + got.value.shape_str() +
                        " does not match config (expected '" + want.name + "' " + want.value.shape_str() + ")");
    lm.params.params[i].value = got.value;
  }
  return lm;
}

}  // namespace scq::train
