#include "scq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scq/kernels.hpp"
#include "scq/linalg.hpp"

namespace scq::ad {

NodeId matmul(Tape& t, NodeId a, NodeId b) {
  Mat v = scq::matmul(t.value(a), t.value(b));
  return t.record("matmul", {a, b}, std::move(v), [a, b](Tape& tp, const Mat& g) {
    const Mat& av = tp.value(a);
    const Mat& bv = tp.value(b);
    tp.accumulate(a, matmul_nt(g, bv));
    tp.accumulate(b, matmul_tn(av, g));
  });
}

NodeId transpose(Tape& t, NodeId a) {
  return t.record("transpose", {a}, t.value(a).transposed(),
                  [a](Tape& tp, const Mat& g) { tp.accumulate(a, g.transposed()); });
}

NodeId add(Tape& t, NodeId a, NodeId b) {
  Mat v = t.value(a);
  v += t.value(b);
  return t.record("add", {a, b}, std::move(v), [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
  Mat v = t.value(a);
  v -= t.value(b);
  return t.record("sub", {a, b}, std::move(v), [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g * -1.0);
  });
}

NodeId hadamard(Tape& t, NodeId a, NodeId b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_same_shape(av, bv, "hadamard");
  Mat v = av;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return t.record("hadamard", {a, b}, std::move(v), [a, b](Tape& tp, const Mat& g) {
    Mat ga = g;
    Mat gb = g;
    const Mat& av2 = tp.value(a);
    const Mat& bv2 = tp.value(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= bv2[i];
      gb[i] *= av2[i];
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

NodeId scale(Tape& t, NodeId a, double s) {
  return t.record("scale", {a}, t.value(a) * s,
                  [a, s](Tape& tp, const Mat& g) { tp.accumulate(a, g * s); });
}

NodeId add_const(Tape& t, NodeId a, const Mat& c) {
  Mat v = t.value(a);
  v += c;
  return t.record("add_const", {a}, std::move(v),
                  [a](Tape& tp, const Mat& g) { tp.accumulate(a, g); });
}

NodeId add_scaled_identity(Tape& t, NodeId a, double s) {
  Mat v = t.value(a);
  SCQ_EXPECT(v.rows() == v.cols(), "add_scaled_identity: matrix is not square");
  for (std::size_t i = 0; i < v.rows(); ++i) v(i, i) += s;
  return t.record("add_scaled_identity", {a}, std::move(v),
                  [a](Tape& tp, const Mat& g) { tp.accumulate(a, g); });
}

NodeId add_row_bias(Tape& t, NodeId x, NodeId b) {
  const Mat& xv = t.value(x);
  const Mat& bv = t.value(b);
  SCQ_EXPECT(bv.rows() == xv.rows() && bv.cols() == 1, "add_row_bias: bias must be rows x 1");
  Mat v = xv;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const double br = bv[r];
    for (double& e : v.row(r)) e += br;
  }
  return t.record("add_row_bias", {x, b}, std::move(v), [x, b](Tape& tp, const Mat& g) {
    tp.accumulate(x, g);
    Mat gb(g.rows(), 1);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double s = 0.0;
      for (double e : g.row(r)) s += e;
      gb[r] = s;
    }
    tp.accumulate(b, gb);
  });
}

NodeId clamp_min(Tape& t, NodeId a, double lo) {
  const Mat& av = t.value(a);
  Mat v = av;
  for (double& e : v.values()) e = std::max(lo, e);
  if (t.tracking_kinks()) {
    double margin = std::numeric_limits<double>::infinity();
    for (double e : av.values()) margin = std::min(margin, std::abs(e - lo));
    t.note_kink_margin(margin);
    t.note_sign_pattern(av.values(), lo);
  }
  return t.record("clamp_min", {a}, std::move(v), [a, lo](Tape& tp, const Mat& g) {
    const Mat& av2 = tp.value(a);
    Mat ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(av2[i] > lo)) ga[i] = 0.0;
    tp.accumulate(a, ga);
  });
}

NodeId detach(Tape& t, NodeId a) { return t.record("detach", {a}, t.value(a), {}); }

NodeId sum(Tape& t, NodeId a) {
  return t.record("sum", {a}, Mat(1, 1, scq::sum(t.value(a))), [a](Tape& tp, const Mat& g) {
    const Mat& av = tp.value(a);
    tp.accumulate(a, Mat(av.rows(), av.cols(), g[0]));
  });
}

NodeId weighted_sum(Tape& t, NodeId a, const Mat& w) {
  const Mat& av = t.value(a);
  require_same_shape(av, w, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += w[i] * av[i];
  return t.record("weighted_sum", {a}, Mat(1, 1, s),
                  [a, w](Tape& tp, const Mat& g) { tp.accumulate(a, w * g[0]); });
}

NodeId mse(Tape& t, NodeId a, NodeId b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_same_shape(av, bv, "mse");
  SCQ_EXPECT(!av.empty(), "mse: empty operands");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const double n = static_cast<double>(av.size());
  return t.record("mse", {a, b}, Mat(1, 1, s / n), [a, b, n](Tape& tp, const Mat& g) {
    const Mat& av2 = tp.value(a);
    const Mat& bv2 = tp.value(b);
    Mat ga(av2.rows(), av2.cols());
    const double f = 2.0 * g[0] / n;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = f * (av2[i] - bv2[i]);
    tp.accumulate(a, ga);
    tp.accumulate(b, ga * -1.0);
  });
}

SolveSpdGrads solve_spd_vjp(const Mat& a, const Mat& /*b*/, const Mat& x, const Mat& upstream,
                            bool symmetrize) {
  SolveSpdGrads out;
  out.grad_b = scq::solve_spd(a, upstream);
  out.grad_a = matmul_nt(out.grad_b, x) * -1.0;
  if (symmetrize) {
    Mat& ga = out.grad_a;
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const double s = 0.5 * (ga(i, j) + ga(j, i));
        ga(i, j) = s;
        ga(j, i) = s;
      }
  }
  return out;
}

NodeId solve_spd(Tape& t, NodeId a, NodeId b, bool symmetric_a) {
  Mat x = scq::solve_spd(t.value(a), t.value(b));
  return t.record("solve_spd", {a, b}, std::move(x),
                  [a, b, symmetric_a, self = t.size()](Tape& tp, const Mat& g) {
                    SolveSpdGrads grads = solve_spd_vjp(tp.value(a), tp.value(b),
                                                        tp.value(self), g, symmetric_a);
                    tp.accumulate(a, grads.grad_a);
                    tp.accumulate(b, grads.grad_b);
                  });
}

NodeId column_shift(Tape& t, NodeId p) {
  const Mat& pv = t.value(p);
  const std::size_t k = pv.rows();
  const std::size_t m = pv.cols();
  const double kd = static_cast<double>(k);
  std::vector<double> shift(m, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < m; ++c) shift[c] += pv(j, c);
  for (double& s : shift) s = (s - 1.0) / kd;
  Mat v = pv;
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < m; ++c) v(j, c) -= shift[c];
  return t.record("column_shift", {p}, std::move(v), [p, kd](Tape& tp, const Mat& g) {
    std::vector<double> mean(g.cols(), 0.0);
    for (std::size_t j = 0; j < g.rows(); ++j)
      for (std::size_t c = 0; c < g.cols(); ++c) mean[c] += g(j, c);
    for (double& s : mean) s /= kd;
    Mat gp = g;
    for (std::size_t j = 0; j < g.rows(); ++j)
      for (std::size_t c = 0; c < g.cols(); ++c) gp(j, c) -= mean[c];
    tp.accumulate(p, gp);
  });
}

NodeId gather_columns(Tape& t, NodeId c, const std::vector<std::int32_t>& indices) {
  const Mat& cv = t.value(c);
  const std::size_t f = cv.rows();
  const std::size_t m = indices.size();
  Mat v(f, m);
  for (std::size_t col = 0; col < m; ++col) {
    const auto k = static_cast<std::size_t>(indices[col]);
    SCQ_EXPECT(k < cv.cols(), "gather_columns: index out of range");
    for (std::size_t e = 0; e < f; ++e) v(e, col) = cv(e, k);
  }
  return t.record("gather_columns", {c}, std::move(v), [c, indices](Tape& tp, const Mat& g) {
    Mat& gc = tp.grad_buffer(c);
    for (std::size_t col = 0; col < indices.size(); ++col) {
      const auto k = static_cast<std::size_t>(indices[col]);
      for (std::size_t e = 0; e < g.rows(); ++e) gc(e, k) += g(e, col);
    }
  });
}

NodeId straight_through(Tape& t, NodeId input, NodeId quantized) {
  require_same_shape(t.value(input), t.value(quantized), "straight_through");
  return t.record("straight_through", {input, quantized}, t.value(quantized),
                  [input](Tape& tp, const Mat& g) { tp.accumulate(input, g); });
}

NodeId softmax_columns(Tape& t, NodeId logits) {
  const Mat& lv = t.value(logits);
  Mat y = lv;
  for (std::size_t c = 0; c < y.cols(); ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < y.rows(); ++j) mx = std::max(mx, y(j, c));
    double s = 0.0;
    for (std::size_t j = 0; j < y.rows(); ++j) {
      y(j, c) = std::exp(y(j, c) - mx);
      s += y(j, c);
    }
    for (std::size_t j = 0; j < y.rows(); ++j) y(j, c) /= s;
  }
  return t.record("softmax_columns", {logits}, std::move(y),
                  [logits, self = t.size()](Tape& tp, const Mat& g) {
                    const Mat& yv = tp.value(self);
                    Mat gx(yv.rows(), yv.cols());
                    for (std::size_t c = 0; c < yv.cols(); ++c) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < yv.rows(); ++j) dot += yv(j, c) * g(j, c);
                      for (std::size_t j = 0; j < yv.rows(); ++j)
                        gx(j, c) = yv(j, c) * (g(j, c) - dot);
                    }
                    tp.accumulate(logits, gx);
                  });
}

NodeId neg_sq_dist_logits(Tape& t, NodeId z, NodeId c, double tau) {
  const Mat& zv = t.value(z);
  const Mat& cv = t.value(c);
  SCQ_EXPECT(zv.rows() == cv.rows(), "neg_sq_dist_logits: embedding dimensions differ");
  SCQ_EXPECT(tau > 0.0, "neg_sq_dist_logits: tau must be positive");
  Mat d(cv.cols(), zv.cols());
  simd::kernels().sq_distances(zv.rows(), cv.cols(), zv.cols(), zv.data(), cv.data(), d.data());
  d *= -1.0 / tau;
  return t.record("neg_sq_dist_logits", {z, c}, std::move(d), [z, c, tau](Tape& tp, const Mat& g) {
    const Mat& zv2 = tp.value(z);
    const Mat& cv2 = tp.value(c);
    const double f = 2.0 / tau;
    // dz = -f (z .* colsum(G) - C G)
    Mat gz = scq::matmul(cv2, g);
    std::vector<double> colsum(g.cols(), 0.0);
    for (std::size_t k = 0; k < g.rows(); ++k)
      for (std::size_t m = 0; m < g.cols(); ++m) colsum[m] += g(k, m);
    for (std::size_t e = 0; e < gz.rows(); ++e)
      for (std::size_t m = 0; m < gz.cols(); ++m) gz(e, m) = -f * (zv2(e, m) * colsum[m] - gz(e, m));
    // dc = f (Z G^T - c .* rowsum(G))
    Mat gc = matmul_nt(zv2, g);
    std::vector<double> rowsum(g.rows(), 0.0);
    for (std::size_t k = 0; k < g.rows(); ++k)
      for (double e : g.row(k)) rowsum[k] += e;
    for (std::size_t e = 0; e < gc.rows(); ++e)
      for (std::size_t k = 0; k < gc.cols(); ++k) gc(e, k) = f * (gc(e, k) - cv2(e, k) * rowsum[k]);
    tp.accumulate(z, gz);
    tp.accumulate(c, gc);
  });
}

}  // namespace scq::ad
