#include "scq/scq_exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "scq/linalg.hpp"
#include "scq/quantizers.hpp"

namespace scq::quant {
namespace {

// Gradient of the column objective: 2 (G + lambda I) p - 2 C^T z - 2 lambda e_t.
std::vector<double> objective_gradient(const Mat& gram, std::span<const double> ctz, double lambda,
                                       std::span<const double> p, std::size_t tilde) {
  const std::size_t k = gram.rows();
  std::vector<double> g(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = lambda * p[i];
    for (std::size_t j = 0; j < k; ++j) s += gram(i, j) * p[j];
    g[i] = 2.0 * s - 2.0 * ctz[i] - (i == tilde ? 2.0 * lambda : 0.0);
  }
  return g;
}

// The bordered KKT matrix on a free set, [[2(G_S + lambda I), s 1], [s 1^T, 0]].
// s is the largest diagonal entry; the last unknown is then mu / s.
Mat bordered_matrix(const Mat& gram, double lambda, const std::vector<std::size_t>& free_set,
                    double& border) {
  const std::size_t n = free_set.size();
  Mat m(n + 1, n + 1);
  border = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b)
      m(a, b) = 2.0 * (gram(free_set[a], free_set[b]) + (a == b ? lambda : 0.0));
    border = std::max(border, m(a, a));
  }
  if (border <= 0.0) border = 1.0;
  for (std::size_t a = 0; a < n; ++a) {
    m(a, n) = border;
    m(n, a) = border;
  }
  return m;
}

std::vector<double> codes_t_z(const Mat& codes, std::span<const double> z) {
  std::vector<double> out(codes.cols(), 0.0);
  for (std::size_t e = 0; e < codes.rows(); ++e)
    for (std::size_t j = 0; j < codes.cols(); ++j) out[j] += codes(e, j) * z[e];
  return out;
}

}  // namespace

double KktResiduals::worst() const {
  return std::max({stationarity, primal, dual, complementarity});
}

double scq_objective(std::span<const double> z, const Mat& codes, double lambda,
                     std::span<const double> p, std::size_t tilde) {
  double obj = 0.0;
  for (std::size_t e = 0; e < codes.rows(); ++e) {
    double r = z[e];
    for (std::size_t j = 0; j < codes.cols(); ++j) r -= codes(e, j) * p[j];
    obj += r * r;
  }
  for (std::size_t j = 0; j < codes.cols(); ++j) {
    const double d = p[j] - (j == tilde ? 1.0 : 0.0);
    obj += lambda * d * d;
  }
  return obj;
}

ColumnSolution scq_exact_column(std::span<const double> z, const Mat& codes, double lambda,
                                std::size_t tilde, const Mat& gram_in) {
  const std::size_t k = codes.cols();
  SCQ_EXPECT(z.size() == codes.rows(), "scq_exact_column: embedding dimension mismatch");
  SCQ_EXPECT(tilde < k, "scq_exact_column: anchor index out of range");
  SCQ_EXPECT(lambda >= 0.0, "scq_exact_column: lambda must be nonnegative");
  const Mat gram = gram_in.empty() ? matmul_tn(codes, codes) : gram_in;
  const std::vector<double> ctz = codes_t_z(codes, z);

  ColumnSolution sol;
  sol.p.assign(k, 0.0);
  sol.nu.assign(k, 0.0);
  sol.p[tilde] = 1.0;
  std::vector<std::size_t> free_set{tilde};
  const std::size_t max_changes = 10 * k;

  while (true) {
    const std::size_t n = free_set.size();
    Mat rhs(n + 1, 1);
    for (std::size_t a = 0; a < n; ++a)
      rhs[a] = 2.0 * ctz[free_set[a]] + (free_set[a] == tilde ? 2.0 * lambda : 0.0);
    rhs[n] = 1.0;
    Mat x(n + 1, 1);
    if (n == 1) {
      // A vertex: p is exactly 1, only the multiplier needs computing.
      x[0] = 1.0;
      x[1] = rhs[0] - 2.0 * (gram(free_set[0], free_set[0]) + lambda);
    } else {
      double border = 1.0;
      const Mat m = bordered_matrix(gram, lambda, free_set, border);
      rhs[n] *= border;
      x = solve_lu(m, rhs, 1e-14);
      x[n] *= border;
    }

    // Ratio test towards the equality-constrained minimizer on the free set.
    double alpha = 1.0;
    std::size_t blocking = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (x[a] >= 0.0) continue;
      const double cur = sol.p[free_set[a]];
      const double d = x[a] - cur;
      const double ratio = d < 0.0 ? cur / -d : 0.0;
      if (blocking == n || ratio < alpha) {
        alpha = ratio;
        blocking = a;
      }
    }
    if (blocking != n) {
      for (std::size_t a = 0; a < n; ++a) {
        const std::size_t j = free_set[a];
        sol.p[j] += alpha * (x[a] - sol.p[j]);
      }
      sol.p[free_set[blocking]] = 0.0;
      free_set.erase(free_set.begin() + static_cast<std::ptrdiff_t>(blocking));
      if (++sol.changes > max_changes)
        throw SolverStall("scq_exact_column: active-set change budget exhausted");
      continue;
    }

    for (std::size_t a = 0; a < n; ++a) sol.p[free_set[a]] = x[a];
    sol.mu = x[n];
    const std::vector<double> grad = objective_gradient(gram, ctz, lambda, sol.p, tilde);
    double scale = 1.0;
    for (double g : grad) scale = std::max(scale, std::abs(g));
    const double tol = 1e-12 * scale;

    std::fill(sol.nu.begin(), sol.nu.end(), 0.0);
    std::size_t entering = k;
    double most_negative = -tol;
    std::size_t a = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (a < n && free_set[a] == j) {
        ++a;
        continue;
      }
      sol.nu[j] = grad[j] + sol.mu;
      if (sol.nu[j] < most_negative) {
        most_negative = sol.nu[j];
        entering = j;
      }
    }
    if (entering == k) {
      sol.free_set = free_set;
      for (std::size_t j = 0; j < k; ++j) {
        const bool in_free = std::binary_search(free_set.begin(), free_set.end(), j);
        if (!in_free && std::abs(sol.nu[j]) <= 1e-9 * scale) sol.degenerate = true;
        if (in_free && sol.p[j] <= 1e-12) sol.degenerate = true;
      }
      return sol;
    }
    free_set.insert(std::upper_bound(free_set.begin(), free_set.end(), entering), entering);
    if (++sol.changes > max_changes)
      throw SolverStall("scq_exact_column: active-set change budget exhausted");
  }
}

ExactSolution scq_exact(const Mat& z, const Mat& codes, double lambda) {
  SCQ_EXPECT(z.rows() == codes.rows(), "scq_exact: embedding dimension mismatch");
  ExactSolution out;
  out.tilde = vq_assign(z, codes).indices;
  const Mat gram = matmul_tn(codes, codes);
  const std::size_t m = z.cols();
  out.p = Mat(codes.cols(), m);
  out.columns.reserve(m);
  std::vector<double> col(z.rows());
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t e = 0; e < z.rows(); ++e) col[e] = z(e, c);
    out.columns.push_back(
        scq_exact_column(col, codes, lambda, static_cast<std::size_t>(out.tilde[c]), gram));
    for (std::size_t j = 0; j < codes.cols(); ++j) out.p(j, c) = out.columns.back().p[j];
  }
  return out;
}

KktResiduals kkt_residuals(std::span<const double> z, const Mat& codes, double lambda,
                           std::size_t tilde, const ColumnSolution& sol) {
  const Mat gram = matmul_tn(codes, codes);
  const std::vector<double> ctz = codes_t_z(codes, z);
  const std::vector<double> grad = objective_gradient(gram, ctz, lambda, sol.p, tilde);
  KktResiduals r;
  double psum = 0.0;
  double pmin = 0.0;
  double numin = 0.0;
  double comp = 0.0;
  for (std::size_t j = 0; j < sol.p.size(); ++j) {
    r.stationarity = std::max(r.stationarity, std::abs(grad[j] + sol.mu - sol.nu[j]));
    psum += sol.p[j];
    pmin = std::min(pmin, sol.p[j]);
    numin = std::min(numin, sol.nu[j]);
    comp += sol.nu[j] * sol.p[j];
  }
  r.primal = std::max(std::abs(psum - 1.0), -pmin);
  r.dual = -numin;
  r.complementarity = std::abs(comp);
  return r;
}

ExactVjp scq_exact_vjp(std::span<const double> z, const Mat& codes, double lambda,
                       const ColumnSolution& sol, std::span<const double> upstream) {
  const std::size_t f = codes.rows();
  const std::size_t k = codes.cols();
  SCQ_EXPECT(upstream.size() == k && z.size() == f, "scq_exact_vjp: shape mismatch");
  const auto& s = sol.free_set;
  const std::size_t n = s.size();
  const Mat gram = matmul_tn(codes, codes);

  Mat rhs(n + 1, 1);
  for (std::size_t a = 0; a < n; ++a) rhs[a] = upstream[s[a]];
  // The bordered matrix is symmetric, so the adjoint solve reuses it.
  double border = 1.0;
  const Mat adj = solve_lu(bordered_matrix(gram, lambda, s, border), rhs, 1e-14);

  ExactVjp out;
  out.grad_codes = Mat(f, k);
  out.grad_z.assign(f, 0.0);
  // w = C_S a_S
  std::vector<double> w(f, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t e = 0; e < f; ++e) w[e] += codes(e, s[a]) * adj[a];
  // u = C_S p_S
  std::vector<double> u(f, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t e = 0; e < f; ++e) u[e] += codes(e, s[a]) * sol.p[s[a]];
  for (std::size_t e = 0; e < f; ++e) out.grad_z[e] = 2.0 * w[e];
  // dC_S = 2 z a^T - 2 C_S (a p^T + p a^T) = 2 (z - u) a^T - 2 w p^T
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t j = s[a];
    for (std::size_t e = 0; e < f; ++e)
      out.grad_codes(e, j) = 2.0 * (z[e] - u[e]) * adj[a] - 2.0 * w[e] * sol.p[j];
  }
  return out;
}

ad::NodeId scq_exact_node(ad::Tape& t, ad::NodeId z, ad::NodeId codes, double lambda) {
  auto sol = std::make_shared<ExactSolution>(scq_exact(t.value(z), t.value(codes), lambda));
  if (t.tracking_kinks()) {
    for (const auto& col : sol->columns) {
      double margin = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < col.p.size(); ++j)
        margin = std::min(margin, col.p[j] > 0.0 ? col.p[j] : std::abs(col.nu[j]));
      t.note_kink_margin(margin);
      for (std::size_t j : col.free_set) t.note_kink_pattern(j);
      t.note_kink_pattern(~std::uint64_t{0});
    }
    for (std::int32_t i : sol->tilde) t.note_kink_pattern(static_cast<std::uint64_t>(i));
  }
  Mat p = sol->p;
  return t.record("scq_exact", {z, codes}, std::move(p), [z, codes, lambda, sol](ad::Tape& tp, const Mat& g) {
    const Mat& zv = tp.value(z);
    const Mat& cv = tp.value(codes);
    Mat gz(zv.rows(), zv.cols());
    Mat gc(cv.rows(), cv.cols());
    std::vector<double> zcol(zv.rows());
    std::vector<double> gcol(g.rows());
    for (std::size_t c = 0; c < zv.cols(); ++c) {
      for (std::size_t e = 0; e < zv.rows(); ++e) zcol[e] = zv(e, c);
      for (std::size_t j = 0; j < g.rows(); ++j) gcol[j] = g(j, c);
      const ExactVjp v = scq_exact_vjp(zcol, cv, lambda, sol->columns[c], gcol);
      for (std::size_t e = 0; e < zv.rows(); ++e) gz(e, c) = v.grad_z[e];
      gc += v.grad_codes;
    }
    tp.accumulate(z, gz);
    tp.accumulate(codes, gc);
  });
}

}  // namespace scq::quant
