#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracle.hpp"
#include "scq/linalg.hpp"
#include "scq/ops.hpp"
#include "scq/quantizers.hpp"
#include "scq/scq_exact.hpp"

using namespace scq;

namespace {

Mat randn(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

std::vector<double> col(const Mat& m, std::size_t c) {
  std::vector<double> v(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, c);
  return v;
}

std::vector<double> e(std::size_t k, std::size_t j) {
  std::vector<double> v(k, 0.0);
  v[j] = 1.0;
  return v;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("exact hand trace") {
  const Mat codes = Mat::from_rows({{0.0, 1.0}});
  const std::vector<double> z = {0.6};
  const quant::ColumnSolution s = quant::scq_exact_column(z, codes, 0.1, 1);
  CHECK(std::abs(s.p[0] - 1.0 / 3.0) <= 1e-9);
  CHECK(std::abs(s.p[1] - 2.0 / 3.0) <= 1e-9);
  CHECK(s.free_set == std::vector<std::size_t>{0, 1});
  CHECK(quant::kkt_residuals(z, codes, 0.1, 1, s).worst() <= 1e-12);

  const quant::ExactSolution all = quant::scq_exact(Mat::from_rows({{0.6}}), codes, 0.1);
  CHECK(all.tilde == std::vector<std::int32_t>{1});
  CHECK(std::abs(all.p(0, 0) - 1.0 / 3.0) <= 1e-9);
}

TEST_CASE("exact KKT residuals on random instances") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t f = 1 + rng.below(8), k = 1 + rng.below(16);
    const double lambda = std::pow(10.0, rng.uniform(-2.0, 1.0));
    const Mat codes = randn(rng, f, k), z = randn(rng, f, 3, 1.5);
    const quant::ExactSolution sol = quant::scq_exact(z, codes, lambda);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto zc = col(z, c);
      const auto tilde = static_cast<std::size_t>(sol.tilde[c]);
      const quant::KktResiduals r = quant::kkt_residuals(zc, codes, lambda, tilde, sol.columns[c]);
      CHECK(r.stationarity <= 1e-10);
      CHECK(r.primal <= 1e-10);
      CHECK(r.dual <= 1e-10);
      CHECK(r.complementarity <= 1e-10);
      CHECK(sol.columns[c].changes <= 10 * k);
    }
  }
}

TEST_CASE("exact reconstructs points inside the hull with lambda 0") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t f = 2 + rng.below(3), k = f + 1 + rng.below(6);
    const Mat codes = randn(rng, f, k);
    Mat w(k, 4);
    for (double& v : w.values()) v = rng.uniform(0.05, 1.0);
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += w(j, c);
      for (std::size_t j = 0; j < k; ++j) w(j, c) /= s;
    }
    const Mat z = matmul(codes, w);
    const quant::ExactSolution sol = quant::scq_exact(z, codes, 0.0);
    CHECK(frobenius_norm(z - matmul(codes, sol.p)) <= 1e-8);
  }
}

TEST_CASE("exact pins to the anchor for huge lambda") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat codes = randn(rng, 4, 8), z = randn(rng, 4, 5);
    const quant::ExactSolution sol = quant::scq_exact(z, codes, 1e8);
    CHECK(frobenius_norm(sol.p - quant::vq_assign(z, codes).p_tilde.p) <= 1e-3);
  }
}

TEST_CASE("distance to the anchor is non-increasing in lambda") {
  Rng rng(4);
  std::vector<double> grid;
  for (double l = -2.0; l <= 4.0 + 1e-9; l += 0.25) grid.push_back(std::pow(10.0, l));
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t f = 2 + rng.below(4), k = 3 + rng.below(8);
    const Mat codes = randn(rng, f, k), z = randn(rng, f, 1);
    const auto anchor = quant::vq_assign(z, codes);
    const auto tilde = static_cast<std::size_t>(anchor.indices[0]);
    double prev = INFINITY;
    for (double lambda : grid) {
      const quant::ColumnSolution s = quant::scq_exact_column(col(z, 0), codes, lambda, tilde);
      const double d = dist(s.p, e(k, tilde));
      CHECK(d <= prev + 1e-10);
      prev = d;
    }
  }
}

TEST_CASE("exact objective never exceeds the fast relaxation") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t f = 1 + rng.below(8), k = 2 + rng.below(14);
    const double lambda = std::pow(10.0, rng.uniform(-2.0, 1.0));
    const Mat codes = randn(rng, f, k), z = randn(rng, f, 4);
    const quant::ExactSolution ex = quant::scq_exact(z, codes, lambda);
    // the relaxation may leave small negatives; only compare feasible outputs
    const Mat pf = quant::scq_fast_forward(z, codes, {lambda, 20, true}).p.p;
    for (std::size_t c = 0; c < 4; ++c) {
      const auto zc = col(z, c);
      const auto t = static_cast<std::size_t>(ex.tilde[c]);
      const double oe = quant::scq_objective(zc, codes, lambda, col(ex.p, c), t);
      const double of = quant::scq_objective(zc, codes, lambda, col(pf, c), t);
      CHECK(oe <= of + 1e-12);
    }
  }
}

TEST_CASE("fast and exact agree when the ridge solution is already interior") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.below(5), f = k + 2;
    const double lambda = rng.uniform(0.1, 1.0);
    const std::size_t tilde = rng.below(k);
    const Mat codes = randn(rng, f, k);
    Mat target(k, 1);
    double s = 0.0;
    for (double& v : target.values()) s += (v = rng.uniform(0.2, 1.0));
    target *= 1.0 / s;
    // z with (C^T C + lambda I)^{-1} (C^T z + lambda e_t) = target
    const Mat gram = matmul_tn(codes, codes);
    Mat rhs = matmul(gram + Mat::identity(k) * lambda, target);
    rhs(tilde, 0) -= lambda;
    const Mat z = matmul(codes, solve_spd(gram, rhs));

    ad::Tape t;
    const ad::NodeId p0 = quant::ridge_solve(t, t.leaf(z), t.leaf(codes), lambda,
                                             {static_cast<std::int32_t>(tilde)});
    const Mat pf = t.value(quant::simplex_project_steps(t, p0, 50));
    const quant::ColumnSolution ex = quant::scq_exact_column(col(z, 0), codes, lambda, tilde);
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(std::abs(pf(j, 0) - ex.p[j]) <= 1e-6);
      CHECK(std::abs(ex.p[j] - target(j, 0)) <= 1e-8);
    }
  }
}

TEST_CASE("fast fixed point differs from the exact optimum in general") {
  // both solutions are interior, yet the Euclidean shift is not the
  // constrained minimizer of the ridge objective
  const Mat codes = Mat::from_rows({{0.0, 1.0}});
  const Mat z = Mat::from_rows({{0.6}});
  const Mat pf = quant::scq_fast_forward(z, codes, {0.1, 50, false}).p.p;
  const Mat pe = quant::scq_exact(z, codes, 0.1).p;
  CHECK(std::abs(pf(1, 0) - 9.0 / 11.0) <= 1e-12);
  CHECK(std::abs(pe(1, 0) - 2.0 / 3.0) <= 1e-12);
  const std::vector<double> zc = {0.6}, ve = {pe(0, 0), pe(1, 0)}, vf = {pf(0, 0), pf(1, 0)};
  CHECK(quant::scq_objective(zc, codes, 0.1, ve, 1) < quant::scq_objective(zc, codes, 0.1, vf, 1));
}

TEST_CASE("exact matches the projected-gradient oracle") {
  Rng rng(7);
  const double lambdas[] = {0.01, 0.1, 1.0};
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t f = 1 + rng.below(8), k = 1 + rng.below(16);
    const double lambda = lambdas[trial % 3];
    const Mat codes = randn(rng, f, k), z = randn(rng, f, 1);
    const auto anchor = quant::vq_assign(z, codes);
    const auto tilde = static_cast<std::size_t>(anchor.indices[0]);
    const auto zc = col(z, 0);
    const quant::ColumnSolution s = quant::scq_exact_column(zc, codes, lambda, tilde);
    const auto po = oracle::qp_oracle_column(zc, codes, lambda, e(k, tilde));
    CHECK(std::abs(oracle::qp_objective(zc, codes, lambda, e(k, tilde), po) -
                   quant::scq_objective(zc, codes, lambda, s.p, tilde)) <= 1e-8);
  }
}

TEST_CASE("duplicate codes at lambda 0 still give a feasible optimum") {
  const Mat codes = Mat::from_rows({{1.0, 1.0, -1.0}, {0.0, 0.0, 0.0}});
  const std::vector<double> z = {1.0, 0.0};
  const quant::ColumnSolution s = quant::scq_exact_column(z, codes, 0.0, 0);
  double sum = 0.0;
  for (double v : s.p) sum += v;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  CHECK(quant::scq_objective(z, codes, 0.0, s.p, 0) <= 1e-20);
}

TEST_CASE("exact vjp matches finite differences on the hand example") {
  const Mat codes = Mat::from_rows({{0.0, 1.0}});
  const std::vector<double> z = {0.6};
  const quant::ColumnSolution s = quant::scq_exact_column(z, codes, 0.1, 1);
  const std::vector<double> up = {0.3, -0.8};
  const quant::ExactVjp g = quant::scq_exact_vjp(z, codes, 0.1, s, up);

  auto loss = [&](const std::vector<double>& zz, const Mat& cc) {
    const quant::ColumnSolution r = quant::scq_exact_column(zz, cc, 0.1, 1);
    return up[0] * r.p[0] + up[1] * r.p[1];
  };
  const double eps = 1e-5;
  const double fdz = (loss({0.6 + eps}, codes) - loss({0.6 - eps}, codes)) / (2 * eps);
  // p2 = (z + 2 lambda) / (1 + 2 lambda) on this instance
  CHECK(g.grad_z[0] == doctest::Approx((up[1] - up[0]) / 1.2).epsilon(1e-12));
  CHECK(std::abs(g.grad_z[0] - fdz) / (1e-8 + std::abs(g.grad_z[0]) + std::abs(fdz)) <= 1e-6);

  const Mat fdc = oracle::fd_gradient([&](const Mat& cc) { return loss(z, cc); }, codes, eps);
  for (std::size_t j = 0; j < 2; ++j) {
    const double a = g.grad_codes(0, j), b = fdc(0, j);
    CHECK(std::abs(a - b) / (1e-8 + std::abs(a) + std::abs(b)) <= 1e-6);
  }
}

TEST_CASE("exact vjp vanishes as lambda grows") {
  Rng rng(8);
  const Mat codes = randn(rng, 3, 5);
  const Mat zm = randn(rng, 3, 1);
  const std::vector<double> z = col(zm, 0);
  const auto tilde = static_cast<std::size_t>(quant::vq_assign(zm, codes).indices[0]);
  const std::vector<double> up = {1, -1, 0.5, 2, -0.3};
  double prev = INFINITY;
  for (double lambda : {1.0, 1e2, 1e4, 1e6}) {
    const quant::ColumnSolution s = quant::scq_exact_column(z, codes, lambda, tilde);
    const quant::ExactVjp g = quant::scq_exact_vjp(z, codes, lambda, s, up);
    double n = 0.0;
    for (double v : g.grad_z) n = std::max(n, std::abs(v));
    CHECK(n <= prev + 1e-15);
    prev = n;
  }
  CHECK(prev <= 1e-5);
}

TEST_CASE("exact vjp on random active-set-stable instances") {
  Rng rng(9);
  std::size_t compared = 0;
  for (int trial = 0; trial < 200 && compared < 20; ++trial) {
    const Mat c0 = randn(rng, 3, 5), z0 = randn(rng, 3, 2, 0.5), w = randn(rng, 5, 2);
    const ad::ScalarFn f = [&](ad::Tape& t, std::span<const ad::NodeId> p) {
      return ad::weighted_sum(t, quant::scq_exact_node(t, p[0], p[1], 0.5), w);
    };
    const ad::GradCheckReport r = ad::grad_check_report(f, {z0, c0}, 1e-5);
    if (!r.pattern_stable) continue;
    ++compared;
    CHECK(r.max_rel_err <= 1e-5);
  }
  CHECK(compared == 20);
}
