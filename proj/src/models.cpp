#include "scq/models.hpp"

#include <cmath>

#include "scq/conv.hpp"
#include "scq/ops.hpp"
#include "scq/quantizers.hpp"

namespace scq::model {
namespace {

struct Builder {
  AutoencoderParams& out;
  Rng& rng;

  // Kaiming-uniform weights, zero bias.
  void layer(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Mat w(rows, cols);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    out.params.push_back({name + ".w", std::move(w)});
  }
  void bias(const std::string& name, std::size_t n) { out.params.push_back({name + ".b", Mat(n, 1)}); }

  void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    layer(name, cout, cin * k * k, cin * k * k);
    bias(name, cout);
  }
  // Each output pixel of a stride-2 transpose sees cin*(k/2)^2 taps.
  void conv_t(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    layer(name, cin, cout * k * k, cin * (k / 2) * (k / 2));
    bias(name, cout);
  }
  void res_blocks(const std::string& prefix, const ModelConfig& c) {
    for (std::size_t i = 0; i < c.res_blocks; ++i) {
      const std::string b = prefix + ".res" + std::to_string(i);
      conv(b + ".conv3", c.channels, c.res_channels, 3);
      conv(b + ".conv1", c.res_channels, c.channels, 1);
    }
  }
};

struct Net {
  ad::Tape& t;
  const AutoencoderParams& p;
  const std::vector<ad::NodeId>& ids;
  std::size_t n;

  ad::NodeId id(const std::string& name) const { return ids[p.index(name)]; }

  ad::NodeId conv(ad::NodeId x, const std::string& name, std::size_t h, std::size_t w, std::size_t k,
                  std::size_t stride, std::size_t pad) const {
    return ad::conv2d(t, x, id(name + ".w"), id(name + ".b"), ad::ConvGeom{n, h, w, k, stride, pad});
  }
  ad::NodeId conv_t(ad::NodeId x, const std::string& name, std::size_t h, std::size_t w) const {
    return ad::conv_transpose2d(t, x, id(name + ".w"), id(name + ".b"), ad::ConvGeom{n, h, w, 4, 2, 1});
  }
  ad::NodeId res_blocks(ad::NodeId x, const std::string& prefix, std::size_t h, std::size_t w) const {
    for (std::size_t i = 0; i < p.cfg.res_blocks; ++i) {
      const std::string b = prefix + ".res" + std::to_string(i);
      ad::NodeId y = conv(ad::relu(t, x), b + ".conv3", h, w, 3, 1, 1);
      y = conv(ad::relu(t, y), b + ".conv1", h, w, 1, 1, 0);
      x = ad::add(t, x, y);
    }
    return x;
  }
};

}  // namespace

std::size_t AutoencoderParams::index(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return i;
  throw ContractViolation("unknown parameter '" + name + "'");
}

AutoencoderParams init_autoencoder(const ModelConfig& cfg, Rng& rng) {
  SCQ_EXPECT(cfg.downsample == 1 || cfg.downsample == 2, "init_autoencoder: downsample must be 1 or 2");
  SCQ_EXPECT(cfg.in_channels >= 1 && cfg.channels >= 1 && cfg.res_channels >= 1 &&
                 cfg.latent_dim >= 1 && cfg.codebook_size >= 1,
             "init_autoencoder: sizes must be positive");
  AutoencoderParams out;
  out.cfg = cfg;
  Builder b{out, rng};
  b.conv("enc.down1", cfg.in_channels, cfg.channels, 4);
  if (cfg.downsample == 2)
    b.conv("enc.down2", cfg.channels, cfg.channels, 4);
  else
    b.conv("enc.down2", cfg.channels, cfg.channels, 3);
  b.res_blocks("enc", cfg);
  b.conv("enc.proj", cfg.channels, cfg.latent_dim, 1);

  b.conv("dec.proj", cfg.latent_dim, cfg.channels, 1);
  b.res_blocks("dec", cfg);
  if (cfg.downsample == 2)
    b.conv_t("dec.up1", cfg.channels, cfg.channels, 4);
  else
    b.conv("dec.up1", cfg.channels, cfg.channels, 3);
  b.conv_t("dec.up2", cfg.channels, cfg.in_channels, 4);

  const double a = cfg.codebook_init > 0.0 ? cfg.codebook_init : 1.0 / static_cast<double>(cfg.codebook_size);
  Mat codes(cfg.latent_dim, cfg.codebook_size);
  for (double& v : codes.values()) v = rng.uniform(-a, a);
  out.params.push_back({"codebook", std::move(codes)});
  return out;
}

std::vector<ad::NodeId> bind_params(ad::Tape& t, const AutoencoderParams& p) {
  std::vector<ad::NodeId> ids;
  ids.reserve(p.params.size());
  for (const Param& prm : p.params) ids.push_back(t.leaf(prm.value));
  return ids;
}

ImageBatch images_from_nchw(std::span<const float> pixels, std::size_t n, std::size_t c,
                            std::size_t h, std::size_t w) {
  SCQ_EXPECT(pixels.size() == n * c * h * w, "images_from_nchw: pixel count mismatch");
  ImageBatch b{n, h, w, Mat(c, n * h * w)};
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < hw; ++q)
        b.x(ch, i * hw + q) = static_cast<double>(pixels[(i * c + ch) * hw + q]);
  return b;
}

std::vector<double> LatentBatch::to_nchw() const {
  std::vector<double> out(n * f * h * w);
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < f; ++e)
      for (std::size_t q = 0; q < hw; ++q) out[(i * f + e) * hw + q] = z(e, i * hw + q);
  return out;
}

LatentBatch flatten_latents(std::span<const double> nchw, std::size_t n, std::size_t f,
                            std::size_t h, std::size_t w) {
  SCQ_EXPECT(nchw.size() == n * f * h * w, "flatten_latents: element count mismatch");
  LatentBatch b{n, f, h, w, Mat(f, n * h * w)};
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < f; ++e)
      for (std::size_t q = 0; q < hw; ++q) b.z(e, i * hw + q) = nchw[(i * f + e) * hw + q];
  return b;
}

EncodeOut encoder_forward(ad::Tape& t, const AutoencoderParams& p, const std::vector<ad::NodeId>& ids,
                          ad::NodeId x, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t f = p.cfg.factor();
  if (h % f != 0 || w % f != 0)
    throw ContractViolation("encoder_forward: image size " + std::to_string(h) + "x" +
                            std::to_string(w) + " is not divisible by " + std::to_string(f));
  SCQ_EXPECT(ids.size() == p.params.size(), "encoder_forward: parameter binding mismatch");
  Net net{t, p, ids, n};
  ad::NodeId y = ad::relu(t, net.conv(x, "enc.down1", h, w, 4, 2, 1));
  h /= 2;
  w /= 2;
  if (p.cfg.downsample == 2) {
    y = net.conv(y, "enc.down2", h, w, 4, 2, 1);
    h /= 2;
    w /= 2;
  } else {
    y = net.conv(y, "enc.down2", h, w, 3, 1, 1);
  }
  y = ad::relu(t, net.res_blocks(y, "enc", h, w));
  y = net.conv(y, "enc.proj", h, w, 1, 1, 0);
  return {y, h, w};
}

ad::NodeId decoder_forward(ad::Tape& t, const AutoencoderParams& p, const std::vector<ad::NodeId>& ids,
                           ad::NodeId z_q, std::size_t n, std::size_t lh, std::size_t lw) {
  SCQ_EXPECT(ids.size() == p.params.size(), "decoder_forward: parameter binding mismatch");
  Net net{t, p, ids, n};
  ad::NodeId y = net.conv(z_q, "dec.proj", lh, lw, 1, 1, 0);
  y = ad::relu(t, net.res_blocks(y, "dec", lh, lw));
  if (p.cfg.downsample == 2) {
    y = ad::relu(t, net.conv_t(y, "dec.up1", lh, lw));
    lh *= 2;
    lw *= 2;
  } else {
    y = ad::relu(t, net.conv(y, "dec.up1", lh, lw, 3, 1, 1));
  }
  return net.conv_t(y, "dec.up2", lh, lw);
}

ad::NodeId vqvae_loss(ad::Tape& t, ad::NodeId x, ad::NodeId x_hat, ad::NodeId z_e, ad::NodeId z_q,
                      double beta) {
  return ad::add(t, ad::mse(t, x, x_hat), quant::commitment_loss(t, z_e, z_q, beta));
}

}  // namespace scq::model
