#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oracle.hpp"
#include "scq/linalg.hpp"
#include "scq/rng.hpp"

using namespace scq;

namespace {

std::vector<double> random_simplex_point(Rng& rng, std::size_t k) {
  std::vector<double> q(k);
  double s = 0.0;
  for (double& v : q) s += (v = -std::log(rng.uniform()));
  for (double& v : q) v /= s;
  return q;
}

}  // namespace

TEST_CASE("simplex projection examples") {
  const std::vector<double> on = {0.1, 0.6, 0.3};
  const auto p0 = oracle::simplex_euclidean_project(on);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p0[i] == doctest::Approx(on[i]).epsilon(1e-15));

  const auto p1 = oracle::simplex_euclidean_project({2.0, 0.0});
  CHECK(p1[0] == doctest::Approx(1.0));
  CHECK(p1[1] == 0.0);

  const auto p2 = oracle::simplex_euclidean_project({0.7, 0.5});
  CHECK(p2[0] == doctest::Approx(0.6));
  CHECK(p2[1] == doctest::Approx(0.4));
}

TEST_CASE("simplex projection is feasible and optimal") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(20);
    std::vector<double> v(k);
    for (double& x : v) x = 3.0 * rng.normal();
    const auto p = oracle::simplex_euclidean_project(v);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
    for (double x : p) CHECK(x >= 0.0);
    for (int q_trial = 0; q_trial < 100; ++q_trial) {
      const auto q = random_simplex_point(rng, k);
      double inner = 0.0;
      for (std::size_t i = 0; i < k; ++i) inner += (v[i] - p[i]) * (q[i] - p[i]);
      REQUIRE(inner <= 1e-10);
    }
  }
}

TEST_CASE("qp oracle examples") {
  Rng rng(2);
  Mat codes(3, 4);
  for (double& v : codes.values()) v = rng.normal();
  std::vector<double> z(3);
  for (std::size_t e = 0; e < 3; ++e) z[e] = codes(e, 2);
  const auto p = oracle::qp_oracle_column(z, codes, 1.0, {0, 0, 1, 0});
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(p[j] - (j == 2 ? 1.0 : 0.0)) <= 1e-9);

  oracle::OracleReport rep;
  const auto h = oracle::qp_oracle_column({0.6}, Mat::from_rows({{0.0, 1.0}}), 0.1, {0, 1}, &rep);
  // the 1e-14 decrease stop pins the objective far tighter than the argmin
  CHECK(oracle::qp_objective({0.6}, Mat::from_rows({{0.0, 1.0}}), 0.1, {0, 1}, h) - 2.0 / 75.0 <= 1e-12);
  CHECK(std::abs(h[0] - 1.0 / 3.0) <= 1e-7);
  CHECK(std::abs(h[1] - 2.0 / 3.0) <= 1e-7);
  CHECK(rep.objective_gap >= -1e-12);
  CHECK(rep.iterations >= 1);
}

TEST_CASE("qp objective by hand") {
  const Mat codes = Mat::from_rows({{0.0, 1.0}});
  CHECK(oracle::qp_objective({0.6}, codes, 0.1, {0, 1}, {1.0 / 3.0, 2.0 / 3.0}) ==
        doctest::Approx(2.0 / 75.0).epsilon(1e-12));
}

TEST_CASE("jacobi eigenvalue matches a closed form") {
  CHECK(oracle::sym_max_eigenvalue(Mat::from_rows({{2, 1}, {1, 2}})) == doctest::Approx(3.0));
  CHECK(oracle::sym_max_eigenvalue(Mat::from_rows({{1, 2}, {2, 1}})) == doctest::Approx(3.0));
  CHECK(oracle::sym_max_eigenvalue(Mat::identity(5) * 7.0) == doctest::Approx(7.0));
}

TEST_CASE("finite-difference examples") {
  Rng rng(3);
  Mat x(3, 2);
  for (double& v : x.values()) v = rng.normal();
  const Mat ones = oracle::fd_gradient([](const Mat& m) { return sum(m); }, x, 1e-5);
  CHECK(max_abs_diff(ones, Mat(3, 2, 1.0)) <= 1e-9);

  const Mat g = oracle::fd_gradient(
      [](const Mat& m) {
        double s = 0.0;
        for (double v : m.values()) s += 0.5 * v * v;
        return s;
      },
      x, 1e-5);
  CHECK(max_abs_diff(g, x) <= 1e-8);

  // at the kink of |x| the central difference averages the two slopes
  const Mat k = oracle::fd_gradient([](const Mat& m) { return std::abs(m[0]); }, Mat(1, 1, 0.0), 1e-5);
  CHECK(k[0] == 0.0);
}

TEST_CASE("brute-force nearest ties go low") {
  const Mat codes = Mat::from_rows({{-1.0, 1.0, -1.0}});
  const auto idx = oracle::brute_force_nearest(Mat::from_rows({{0.0, -0.9, 1.2}}), codes);
  CHECK(idx == std::vector<int>{0, 0, 1});
}
