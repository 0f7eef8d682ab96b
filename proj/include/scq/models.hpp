#pragma once

// Convolutional autoencoder around a quantization bottleneck.
//
// Encoder: 4x4/2 conv in->c, relu, second downsampling conv c->c, residual
// blocks, relu, 1x1 projection c->F. The decoder mirrors it with transposed
// convolutions. Activations are channel-major (see conv.hpp), so the encoder
// output already is the F x M latent matrix.

#include <cstdint>
#include <string>
#include <vector>

#include "scq/autodiff.hpp"
#include "scq/mat.hpp"
#include "scq/rng.hpp"

namespace scq::model {

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t channels = 32;
  std::size_t res_channels = 16;
  std::size_t res_blocks = 2;
  std::size_t latent_dim = 8;  // F
  std::size_t codebook_size = 64;  // K
  /// Number of stride-2 stages: 2 gives a /4 latent grid, 1 gives /2 (the
  /// second encoder conv becomes 3x3 stride 1).
  std::size_t downsample = 2;
  double codebook_init = 0.0;  // U(-a, a); 0 means 1/K

  std::size_t factor() const { return downsample == 2 ? 4 : 2; }
};

struct Param {
  std::string name;
  Mat value;
};

/// All trainable tensors, codebook last.
struct AutoencoderParams {
  ModelConfig cfg;
  std::vector<Param> params;

  std::size_t index(const std::string& name) const;
  Mat& get(const std::string& name) { return params[index(name)].value; }
  const Mat& get(const std::string& name) const { return params[index(name)].value; }
  std::size_t codebook_index() const { return params.size() - 1; }
};

AutoencoderParams init_autoencoder(const ModelConfig& cfg, Rng& rng);

/// Leaves for every parameter, in parameter order.
std::vector<ad::NodeId> bind_params(ad::Tape& t, const AutoencoderParams& p);

/// N images of C x H x W held as C x (N*H*W).
struct ImageBatch {
  std::size_t n = 0, h = 0, w = 0;
  Mat x;
};

/// Converts image-major NCHW floats to the channel-major layout.
ImageBatch images_from_nchw(std::span<const float> pixels, std::size_t n, std::size_t c,
                            std::size_t h, std::size_t w);

/// (N, F, H, W) latents with their F x M view.
struct LatentBatch {
  std::size_t n = 0, f = 0, h = 0, w = 0;
  Mat z;  // F x (N*H*W)

  std::vector<double> to_nchw() const;
};

LatentBatch flatten_latents(std::span<const double> nchw, std::size_t n, std::size_t f,
                            std::size_t h, std::size_t w);

struct EncodeOut {
  ad::NodeId z_e;
  std::size_t h, w;  // latent grid
};

EncodeOut encoder_forward(ad::Tape& t, const AutoencoderParams& p, const std::vector<ad::NodeId>& ids,
                          ad::NodeId x, std::size_t n, std::size_t h, std::size_t w);

/// Latent grid lh x lw back to an image of in_channels x (lh*factor) x (lw*factor).
ad::NodeId decoder_forward(ad::Tape& t, const AutoencoderParams& p, const std::vector<ad::NodeId>& ids,
                           ad::NodeId z_q, std::size_t n, std::size_t lh, std::size_t lw);

/// mse(X, X_hat) + (1-beta) mse(sg[Z_e], Z_q) + beta mse(Z_e, sg[Z_q]).
ad::NodeId vqvae_loss(ad::Tape& t, ad::NodeId x, ad::NodeId x_hat, ad::NodeId z_e, ad::NodeId z_q,
                      double beta);

}  // namespace scq::model
