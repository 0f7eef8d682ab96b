#include "scq/conv.hpp"

#include <memory>

#include "scq/linalg.hpp"
#include "scq/ops.hpp"

namespace scq::ad {
namespace {

void check_input(const Mat& x, std::size_t channels, const ConvGeom& g, const char* what) {
  if (x.rows() != channels || x.cols() != g.batch * g.in_h * g.in_w)
    throw ContractViolation(std::string(what) + ": input " + x.shape_str() + " does not match " +
                            std::to_string(channels) + " channels of " +
                            std::to_string(g.batch) + "x" + std::to_string(g.in_h) + "x" +
                            std::to_string(g.in_w));
}

Mat row_sums(const Mat& g) {
  Mat out(g.rows(), 1);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    double s = 0.0;
    for (double e : g.row(r)) s += e;
    out[r] = s;
  }
  return out;
}

}  // namespace

Mat im2col(const Mat& x, std::size_t channels, const ConvGeom& g) {
  check_input(x, channels, g, "im2col");
  const std::size_t k = g.kernel;
  const std::size_t oh = g.conv_out_h();
  const std::size_t ow = g.conv_out_w();
  const std::size_t hw = g.in_h * g.in_w;
  Mat cols(channels * k * k, g.batch * oh * ow);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x.data() + c * x.cols();
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = cols.data() + ((c * k + ky) * k + kx) * cols.cols();
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            double* out = dst + (n * oh + oy) * ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const double* src = xc + n * hw + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w))
                out[ox] = src[static_cast<std::size_t>(ix)];
            }
          }
      }
  }
  return cols;
}

Mat col2im(const Mat& cols, std::size_t channels, const ConvGeom& g) {
  const std::size_t k = g.kernel;
  const std::size_t oh = g.conv_out_h();
  const std::size_t ow = g.conv_out_w();
  SCQ_EXPECT(cols.rows() == channels * k * k && cols.cols() == g.batch * oh * ow,
             "col2im: column matrix shape does not match geometry");
  const std::size_t hw = g.in_h * g.in_w;
  Mat x(channels, g.batch * hw);
  for (std::size_t c = 0; c < channels; ++c) {
    double* xc = x.data() + c * x.cols();
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = cols.data() + ((c * k + ky) * k + kx) * cols.cols();
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const double* in = src + (n * oh + oy) * ow;
            double* dst = xc + n * hw + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w))
                dst[static_cast<std::size_t>(ix)] += in[ox];
            }
          }
      }
  }
  return x;
}

NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, const ConvGeom& g) {
  const Mat& wv = t.value(w);
  const std::size_t kk = g.kernel * g.kernel;
  SCQ_EXPECT(wv.cols() % kk == 0, "conv2d: weight columns must be c_in*k*k");
  const std::size_t cin = wv.cols() / kk;
  SCQ_EXPECT(t.value(b).rows() == wv.rows() && t.value(b).cols() == 1,
             "conv2d: bias must be c_out x 1");
  auto cols = std::make_shared<Mat>(im2col(t.value(x), cin, g));
  Mat y = scq::matmul(wv, *cols);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double br = t.value(b)[r];
    for (double& e : y.row(r)) e += br;
  }
  return t.record("conv2d", {x, w, b}, std::move(y), [x, w, b, cols, cin, g](Tape& tp, const Mat& gy) {
    tp.accumulate(b, row_sums(gy));
    tp.accumulate(w, matmul_nt(gy, *cols));
    tp.accumulate(x, col2im(matmul_tn(tp.value(w), gy), cin, g));
  });
}

NodeId conv_transpose2d(Tape& t, NodeId x, NodeId w, NodeId b, const ConvGeom& g) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(w);
  const std::size_t kk = g.kernel * g.kernel;
  SCQ_EXPECT(wv.cols() % kk == 0, "conv_transpose2d: weight columns must be c_out*k*k");
  const std::size_t cout = wv.cols() / kk;
  check_input(xv, wv.rows(), g, "conv_transpose2d");
  SCQ_EXPECT(t.value(b).rows() == cout && t.value(b).cols() == 1,
             "conv_transpose2d: bias must be c_out x 1");
  // The output grid plays the role of the conv input.
  ConvGeom out_geom = g;
  out_geom.in_h = g.transpose_out_h();
  out_geom.in_w = g.transpose_out_w();
  SCQ_EXPECT(out_geom.conv_out_h() == g.in_h && out_geom.conv_out_w() == g.in_w,
             "conv_transpose2d: geometry is not invertible");

  Mat y = col2im(matmul_tn(wv, xv), cout, out_geom);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double br = t.value(b)[r];
    for (double& e : y.row(r)) e += br;
  }
  return t.record("conv_transpose2d", {x, w, b}, std::move(y),
                  [x, w, b, cout, out_geom](Tape& tp, const Mat& gy) {
                    tp.accumulate(b, row_sums(gy));
                    const Mat dcols = im2col(gy, cout, out_geom);
                    tp.accumulate(x, scq::matmul(tp.value(w), dcols));
                    tp.accumulate(w, matmul_nt(tp.value(x), dcols));
                  });
}

}  // namespace scq::ad
