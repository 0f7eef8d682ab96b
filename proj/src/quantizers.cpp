#include "scq/quantizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "scq/kernels.hpp"
#include "scq/linalg.hpp"
#include "scq/ops.hpp"
#include "scq/scq_exact.hpp"

namespace scq::quant {
namespace {

double min_entry_of(const Mat& p) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : p.values()) m = std::min(m, v);
  return p.empty() ? 0.0 : m;
}

// Records the clamp decisions of every projection round on the tape.
void note_simplex_kinks(ad::Tape& t, Mat p, std::size_t steps) {
  const std::size_t k = p.rows();
  const std::size_t m = p.cols();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < steps; ++it) {
    for (double v : p.values()) margin = std::min(margin, std::abs(v));
    t.note_sign_pattern(p.values(), 0.0);
    simd::scalar_kernels().simplex_forward(k, m, 1, p.data());
  }
  t.note_kink_margin(margin);
}

void note_indices(ad::Tape& t, const std::vector<std::int32_t>& idx) {
  if (!t.tracking_kinks()) return;
  for (std::int32_t i : idx) t.note_kink_pattern(static_cast<std::uint64_t>(i));
}

// y = p / colsum(p)
ad::NodeId normalize_columns(ad::Tape& t, ad::NodeId p) {
  const Mat& pv = t.value(p);
  std::vector<double> s(pv.cols(), 0.0);
  for (std::size_t j = 0; j < pv.rows(); ++j)
    for (std::size_t c = 0; c < pv.cols(); ++c) s[c] += pv(j, c);
  Mat y = pv;
  for (std::size_t j = 0; j < y.rows(); ++j)
    for (std::size_t c = 0; c < y.cols(); ++c) y(j, c) /= s[c];
  return t.record("normalize_columns", {p}, std::move(y), [p, s, self = t.size()](ad::Tape& tp, const Mat& g) {
    const Mat& yv = tp.value(self);
    Mat gp(g.rows(), g.cols());
    for (std::size_t c = 0; c < g.cols(); ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.rows(); ++j) dot += g(j, c) * yv(j, c);
      for (std::size_t j = 0; j < g.rows(); ++j) gp(j, c) = (g(j, c) - dot) / s[c];
    }
    tp.accumulate(p, gp);
  });
}

std::vector<std::int32_t> column_argmax(const Mat& a) {
  std::vector<std::int32_t> idx(a.cols(), 0);
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double best = a(0, c);
    for (std::size_t j = 1; j < a.rows(); ++j)
      if (a(j, c) > best) {
        best = a(j, c);
        idx[c] = static_cast<std::int32_t>(j);
      }
  }
  return idx;
}

}  // namespace

double mean_squared_diff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "mean_squared_diff");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

Mat one_hot(const std::vector<std::int32_t>& indices, std::size_t k) {
  Mat p(k, indices.size());
  for (std::size_t c = 0; c < indices.size(); ++c) p(static_cast<std::size_t>(indices[c]), c) = 1.0;
  return p;
}

VqAssignment vq_assign(const Mat& z, const Mat& codes) {
  SCQ_EXPECT(z.rows() == codes.rows(), "vq_assign: embedding dimension mismatch");
  SCQ_EXPECT(codes.cols() >= 1, "vq_assign: empty codebook");
  VqAssignment out;
  out.indices.resize(z.cols());
  if (z.cols() > 0)
    simd::kernels().nearest_code(z.rows(), codes.cols(), z.cols(), z.data(), codes.data(),
                                 out.indices.data(), nullptr);
  out.p_tilde = Assignment{one_hot(out.indices, codes.cols()), AssignmentKind::one_hot};
  return out;
}

ad::NodeId commitment_loss(ad::Tape& t, ad::NodeId z_e, ad::NodeId z_q, double beta) {
  const ad::NodeId codebook_term = ad::mse(t, ad::detach(t, z_e), z_q);
  const ad::NodeId encoder_term = ad::mse(t, z_e, ad::detach(t, z_q));
  return ad::add(t, ad::scale(t, codebook_term, 1.0 - beta), ad::scale(t, encoder_term, beta));
}

BottleneckOutput vq_quantize_ste(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, double beta) {
  SCQ_EXPECT(beta > 0.0 && beta < 1.0, "vq_quantize_ste: beta must lie in (0, 1)");
  VqAssignment assign = vq_assign(t.value(z_e), t.value(codes));
  note_indices(t, assign.indices);
  const ad::NodeId hard = ad::gather_columns(t, codes, assign.indices);
  BottleneckOutput out;
  out.commit_loss = commitment_loss(t, z_e, hard, beta);
  out.z_q = ad::straight_through(t, z_e, hard);
  out.quant_error = mean_squared_diff(t.value(z_e), t.value(hard));
  out.weights = std::move(assign.p_tilde);
  out.codes.push_back(std::move(assign.indices));
  return out;
}

BottleneckOutput gumbel_quantize(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, double tau,
                                 Rng& rng, bool training, double beta) {
  SCQ_EXPECT(tau > 0.0, "gumbel_quantize: tau must be positive");
  BottleneckOutput out;
  if (!training) {
    VqAssignment assign = vq_assign(t.value(z_e), t.value(codes));
    const ad::NodeId hard = ad::gather_columns(t, codes, assign.indices);
    out.z_q = hard;
    out.commit_loss = commitment_loss(t, z_e, hard, beta);
    out.quant_error = mean_squared_diff(t.value(z_e), t.value(hard));
    out.weights = std::move(assign.p_tilde);
    out.codes.push_back(std::move(assign.indices));
    return out;
  }
  const ad::NodeId logits = ad::neg_sq_dist_logits(t, z_e, codes, tau);
  const Mat& lv = t.value(logits);
  Mat noise(lv.rows(), lv.cols());
  for (double& g : noise.values()) g = gumbel_from_uniform(rng.uniform());
  const ad::NodeId perturbed = ad::add_const(t, logits, noise);
  const ad::NodeId weights = ad::softmax_columns(t, perturbed);
  out.z_q = ad::matmul(t, codes, weights);
  out.commit_loss = commitment_loss(t, z_e, out.z_q, beta);
  out.quant_error = mean_squared_diff(t.value(z_e), t.value(out.z_q));
  out.weights = Assignment{t.value(weights), AssignmentKind::soft};
  out.codes.push_back(column_argmax(t.value(perturbed)));
  return out;
}

BottleneckOutput rq_quantize(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, std::size_t depth,
                             double beta) {
  SCQ_EXPECT(depth >= 1, "rq_quantize: depth must be at least 1");
  SCQ_EXPECT(beta > 0.0 && beta < 1.0, "rq_quantize: beta must lie in (0, 1)");
  const Mat ze = t.value(z_e);
  const std::size_t k = t.value(codes).cols();
  const std::size_t m = ze.cols();
  Mat residual = ze;
  Mat partial(ze.rows(), m);
  ad::NodeId commit = 0;
  BottleneckOutput out;
  Mat usage(k, m * depth);
  for (std::size_t d = 0; d < depth; ++d) {
    VqAssignment assign = vq_assign(residual, t.value(codes));
    note_indices(t, assign.indices);
    // residual entering this depth, live in z_e only
    const ad::NodeId resid_live = ad::sub(t, z_e, t.leaf(partial));
    const ad::NodeId picked = ad::gather_columns(t, codes, assign.indices);
    const ad::NodeId term = commitment_loss(t, resid_live, picked, beta);
    commit = d == 0 ? term : ad::add(t, commit, term);
    const Mat& pv = t.value(picked);
    partial += pv;
    residual -= pv;
    for (std::size_t c = 0; c < m; ++c)
      usage(static_cast<std::size_t>(assign.indices[c]), d * m + c) = 1.0;
    out.codes.push_back(std::move(assign.indices));
  }
  out.commit_loss = ad::scale(t, commit, 1.0 / static_cast<double>(depth));
  out.z_q = ad::straight_through(t, z_e, t.leaf(partial));
  out.quant_error = mean_squared_diff(ze, partial);
  out.weights = Assignment{std::move(usage), AssignmentKind::one_hot};
  return out;
}

ad::NodeId ridge_solve(ad::Tape& t, ad::NodeId z, ad::NodeId codes, double lambda,
                       const std::vector<std::int32_t>& tilde) {
  SCQ_EXPECT(lambda > 0.0, "ridge_solve: lambda must be positive");
  const Mat& zv = t.value(z);
  const Mat& cv = t.value(codes);
  SCQ_EXPECT(zv.rows() == cv.rows(), "ridge_solve: embedding dimension mismatch");
  SCQ_EXPECT(tilde.size() == zv.cols(), "ridge_solve: one anchor per column required");
  const std::size_t k = cv.cols();

  Mat a = matmul_tn(cv, cv);
  for (std::size_t i = 0; i < k; ++i) a(i, i) += lambda;
  auto w = std::make_shared<Mat>(inverse_spd(a));
  auto r = std::make_shared<Mat>(matmul_nt(*w, cv));  // W C^T, K x F
  Mat p0 = matmul(*r, zv);
  for (std::size_t c = 0; c < p0.cols(); ++c) {
    const auto kt = static_cast<std::size_t>(tilde[c]);
    for (std::size_t j = 0; j < k; ++j) p0(j, c) += lambda * (*w)(j, kt);
  }
  return t.record("ridge_solve", {z, codes}, std::move(p0),
                  [z, codes, lambda, tilde, w, r](ad::Tape& tp, const Mat& u) {
                    const Mat& zv2 = tp.value(z);
                    const Mat& cv2 = tp.value(codes);
                    const std::size_t kk = cv2.cols();
                    // B = C^T Z + lambda P~ contributes Z (W U)^T to C and C W U to Z.
                    const Mat t1 = matmul_nt(zv2, u);          // Z U^T, F x K
                    tp.accumulate(z, matmul_tn(*r, u));        // (W C^T)^T U
                    Mat s(kk, kk);                             // U P~^T
                    for (std::size_t c = 0; c < u.cols(); ++c) {
                      const auto kt = static_cast<std::size_t>(tilde[c]);
                      for (std::size_t j = 0; j < kk; ++j) s(j, kt) += u(j, c);
                    }
                    // dL/dA = -W U P0^T = -W (T1^T R^T + lambda S W)
                    Mat ga = matmul_nt(matmul_nt(*w, t1), *r);
                    const Mat sw = matmul(matmul(*w, s), *w);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = -(ga[i] + lambda * sw[i]);
                    for (std::size_t i = 0; i < kk; ++i)
                      for (std::size_t j = 0; j < i; ++j) {
                        const double v = 0.5 * (ga(i, j) + ga(j, i));
                        ga(i, j) = v;
                        ga(j, i) = v;
                      }
                    // A = C^T C + lambda I gives C (G + G^T) = 2 C G.
                    Mat gc = matmul(t1, *w);
                    Mat cg = matmul(cv2, ga);
                    for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += 2.0 * cg[i];
                    tp.accumulate(codes, gc);
                  });
}

Mat simplex_project_steps(Mat p, std::size_t steps) {
  SCQ_EXPECT(steps >= 1, "simplex_project_steps: at least one step required");
  if (!p.empty()) simd::kernels().simplex_forward(p.rows(), p.cols(), steps, p.data());
  return p;
}

ad::NodeId simplex_project_steps(ad::Tape& t, ad::NodeId p, std::size_t steps) {
  if (t.tracking_kinks()) note_simplex_kinks(t, t.value(p), steps);
  Mat out = simplex_project_steps(t.value(p), steps);
  return t.record("simplex_project_steps", {p}, std::move(out), [p, steps](ad::Tape& tp, const Mat& g) {
    Mat gp = g;
    const Mat& p0 = tp.value(p);
    if (!gp.empty()) simd::kernels().simplex_backward(p0.rows(), p0.cols(), steps, p0.data(), gp.data());
    tp.accumulate(p, gp);
  });
}

BottleneckOutput scq_fast(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes, const ScqConfig& cfg,
                          double beta) {
  SCQ_EXPECT(cfg.lambda > 0.0, "scq_fast: lambda must be positive");
  SCQ_EXPECT(cfg.steps >= 1, "scq_fast: at least one projection step required");
  // The anchor is computed from values only, i.e. detached.
  const VqAssignment anchor = vq_assign(t.value(z_e), t.value(codes));
  note_indices(t, anchor.indices);
  const ad::NodeId p0 = ridge_solve(t, z_e, codes, cfg.lambda, anchor.indices);
  ad::NodeId p = simplex_project_steps(t, p0, cfg.steps);
  if (cfg.final_clamp) p = normalize_columns(t, ad::clamp_min(t, p, 0.0));

  BottleneckOutput out;
  out.z_q = ad::matmul(t, codes, p);
  out.commit_loss = commitment_loss(t, z_e, out.z_q, beta);
  out.quant_error = mean_squared_diff(t.value(z_e), t.value(out.z_q));
  out.min_entry = min_entry_of(t.value(p));
  out.weights = Assignment{t.value(p), AssignmentKind::soft};
  return out;
}

BottleneckOutput scq_exact_bottleneck(ad::Tape& t, ad::NodeId z_e, ad::NodeId codes,
                                      double lambda, double beta) {
  const ad::NodeId p = scq_exact_node(t, z_e, codes, lambda);
  BottleneckOutput out;
  out.z_q = ad::matmul(t, codes, p);
  out.commit_loss = commitment_loss(t, z_e, out.z_q, beta);
  out.quant_error = mean_squared_diff(t.value(z_e), t.value(out.z_q));
  out.min_entry = min_entry_of(t.value(p));
  out.weights = Assignment{t.value(p), AssignmentKind::soft};
  return out;
}

QuantizeResult scq_fast_forward(const Mat& z, const Mat& codes, const ScqConfig& cfg) {
  ad::Tape t;
  const ad::NodeId zn = t.leaf(z);
  const ad::NodeId cn = t.leaf(codes);
  BottleneckOutput b = scq_fast(t, zn, cn, cfg, 0.25);
  QuantizeResult r;
  r.z_q = t.value(b.z_q);
  r.quant_error = b.quant_error;
  r.min_entry = b.min_entry;
  r.perplexity = perplexity(b.weights);
  r.p = std::move(b.weights);
  return r;
}

void accumulate_usage(const Assignment& a, std::vector<double>& mass) {
  const Mat& p = a.p;
  if (mass.size() != p.rows()) mass.assign(p.rows(), 0.0);
  for (std::size_t c = 0; c < p.cols(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.rows(); ++j) s += std::max(0.0, p(j, c));
    if (!(s > 0.0)) continue;
    for (std::size_t j = 0; j < p.rows(); ++j) mass[j] += std::max(0.0, p(j, c)) / s;
  }
}

double perplexity_from_mass(const std::vector<double>& mass) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) return 1.0;
  double entropy = 0.0;
  for (double v : mass) {
    const double q = v / total;
    if (q > 0.0) entropy -= q * std::log(q);
  }
  return std::exp(entropy);
}

double perplexity(const Assignment& a) {
  std::vector<double> mass(a.p.rows(), 0.0);
  accumulate_usage(a, mass);
  return perplexity_from_mass(mass);
}

Assignment top_s_restrict(const Assignment& a, std::size_t s) {
  const Mat& p = a.p;
  const std::size_t k = p.rows();
  SCQ_EXPECT(s >= 1 && s <= k, "top_s_restrict: S must lie in [1, K]");
  Assignment out{Mat(k, p.cols()), s == 1 ? AssignmentKind::one_hot : a.kind};
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < p.cols(); ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return p(x, c) > p(y, c); });
    double kept = 0.0;
    for (std::size_t i = 0; i < s; ++i) kept += p(order[i], c);
    if (kept > 0.0) {
      for (std::size_t i = 0; i < s; ++i) out.p(order[i], c) = p(order[i], c) / kept;
    } else {
      out.p(order[0], c) = 1.0;
    }
  }
  return out;
}

void record_usage(Codebook& cb, const std::vector<std::int32_t>& used) {
  std::vector<char> hit(cb.size(), 0);
  for (std::int32_t i : used) hit[static_cast<std::size_t>(i)] = 1;
  for (std::size_t j = 0; j < cb.size(); ++j) cb.idle_steps[j] = hit[j] ? 0 : cb.idle_steps[j] + 1;
}

std::vector<std::size_t> codebook_replacement(Codebook& cb, const Mat& z_e, std::size_t threshold,
                                              Rng& rng) {
  SCQ_EXPECT(z_e.rows() == cb.dim(), "codebook_replacement: embedding dimension mismatch");
  std::vector<std::size_t> replaced;
  if (z_e.cols() == 0) return replaced;
  for (std::size_t j = 0; j < cb.size(); ++j) {
    if (cb.idle_steps[j] < threshold) continue;
    const std::size_t src = rng.below(z_e.cols());
    for (std::size_t e = 0; e < cb.dim(); ++e) cb.vectors(e, j) = z_e(e, src);
    cb.idle_steps[j] = 0;
    replaced.push_back(j);
  }
  return replaced;
}

}  // namespace scq::quant
