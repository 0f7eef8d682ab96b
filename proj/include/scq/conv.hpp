#pragma once

// 2-D convolutions on channel-major activations: a batch of N images with C
// channels of size H x W is a C x (N*H*W) matrix whose column index is
// (n*H + y)*W + x. Both ops lower to im2col + matmul.

#include <cstddef>

#include "scq/autodiff.hpp"

namespace scq::ad {

struct ConvGeom {
  std::size_t batch = 1;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t conv_out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t conv_out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t transpose_out_h() const { return (in_h - 1) * stride + kernel - 2 * pad; }
  std::size_t transpose_out_w() const { return (in_w - 1) * stride + kernel - 2 * pad; }
};

/// Gathers k x k patches: (C*k*k) x (N*out_h*out_w).
Mat im2col(const Mat& x, std::size_t channels, const ConvGeom& g);
/// Adjoint of im2col: scatters patch columns back onto a C x (N*H*W) image.
Mat col2im(const Mat& cols, std::size_t channels, const ConvGeom& g);

/// y = W * im2col(x) + b with W: c_out x (c_in*k*k), b: c_out x 1.
NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, const ConvGeom& g);

/// Transposed convolution (the adjoint of conv2d in x) with W: c_in x (c_out*k*k).
/// `g` describes the input grid; the output is transpose_out_h x transpose_out_w.
NodeId conv_transpose2d(Tape& t, NodeId x, NodeId w, NodeId b, const ConvGeom& g);

}  // namespace scq::ad
