#include "scq/analysis.hpp"

#include <algorithm>

#include "scq/linalg.hpp"
#include "scq/ops.hpp"
#include "scq/scq_exact.hpp"

namespace scq::train {
namespace {

// Decodes z_q and returns (sum of squared pixel errors, pixel count).
double decode_sq_error(const model::AutoencoderParams& p, const Mat& z_q, const model::ImageBatch& b,
                       std::size_t lh, std::size_t lw) {
  ad::Tape t;
  const auto ids = model::bind_params(t, p);
  const ad::NodeId x_hat = model::decoder_forward(t, p, ids, t.leaf(z_q), b.n, lh, lw);
  const Mat& xv = t.value(x_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - b.x[i];
    s += d * d;
  }
  return s;
}

double latent_sq_error(const Mat& z, const Mat& zq) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - zq[i];
    s += d * d;
  }
  return s;
}

}  // namespace

TopSReport analyze_tops(const LoadedModel& m, const data::Dataset& images, std::size_t max_s,
                        std::size_t limit) {
  const TrainConfig& cfg = m.cfg;
  const model::AutoencoderParams& p = m.params;
  if (!is_soft(cfg.quantizer))
    throw ContractViolation("analyze-tops needs a soft quantizer checkpoint (scq_fast or scq_exact), got " +
                            std::string(quantizer_name(cfg.quantizer)));
  const std::size_t k = p.cfg.codebook_size;
  if (max_s < 1 || max_s > k)
    throw ContractViolation("--max-s must lie in [1, " + std::to_string(k) + "]");
  if (images.channels != p.cfg.in_channels)
    throw SchemaError("dataset channel count does not match the checkpoint");
  const std::size_t count = limit == 0 ? images.count : std::min<std::size_t>(limit, images.count);
  SCQ_EXPECT(count >= 1, "analyze-tops: no images");

  const Mat& codes = p.params[p.codebook_index()].value;
  std::vector<double> img_err(max_s, 0.0), lat_err(max_s, 0.0);
  double full_img = 0.0, full_lat = 0.0, pixels = 0.0, latents = 0.0;
  for (std::size_t first = 0; first < count; first += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, count - first);
    const model::ImageBatch b =
        model::images_from_nchw(images.images(first, n), n, images.channels, images.height, images.width);
    ad::Tape t;
    const auto ids = model::bind_params(t, p);
    const model::EncodeOut enc = model::encoder_forward(t, p, ids, t.leaf(b.x), b.n, b.h, b.w);
    const Mat& z = t.value(enc.z_e);

    quant::Assignment w;
    if (cfg.quantizer == QuantizerKind::scq_fast)
      w = quant::scq_fast_forward(z, codes, {cfg.lambda, cfg.steps, cfg.final_clamp}).p;
    else
      w = {quant::scq_exact(z, codes, cfg.lambda).p, quant::AssignmentKind::soft};

    const Mat zq = matmul(codes, w.p);
    full_img += decode_sq_error(p, zq, b, enc.h, enc.w);
    full_lat += latent_sq_error(z, zq);
    for (std::size_t s = 1; s <= max_s; ++s) {
      const Mat zs = matmul(codes, quant::top_s_restrict(w, s).p);
      img_err[s - 1] += decode_sq_error(p, zs, b, enc.h, enc.w);
      lat_err[s - 1] += latent_sq_error(z, zs);
    }
    pixels += static_cast<double>(b.x.size());
    latents += static_cast<double>(z.size());
  }

  TopSReport r;
  r.unrestricted_mse = full_img / pixels;
  r.unrestricted_latent_mse = full_lat / latents;
  for (std::size_t s = 1; s <= max_s; ++s) r.rows.push_back({s, img_err[s - 1] / pixels, lat_err[s - 1] / latents});
  return r;
}

}  // namespace scq::train
