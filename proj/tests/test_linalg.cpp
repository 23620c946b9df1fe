#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "itss/errors.hpp"
#include "itss/linalg.hpp"
#include "itss/rng.hpp"
#include "support/eig_oracle.hpp"

using itss::linalg::compact_svd;
using itss::linalg::cosine;
using itss::linalg::Matrix;
using itss::linalg::orthonormal_random;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  itss::rng::Engine eng(seed);
  for (double& v : m.data) v = eng.next_gaussian();
  return m;
}

double max_abs_reconstruction_error(const Matrix& w, const itss::linalg::SvdResult& s) {
  double worst = 0.0;
  for (std::size_t i = 0; i < w.rows; ++i) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.rank(); ++k)
        acc += s.left.at(i, k) * s.singular_values[k] * s.right.at(j, k);
      worst = std::max(worst, std::fabs(acc - w.at(i, j)));
    }
  }
  return worst;
}

double max_gram_identity_error(const Matrix& right) {
  double worst = 0.0;
  for (std::size_t a = 0; a < right.cols; ++a) {
    for (std::size_t b = 0; b < right.cols; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < right.rows; ++i) acc += right.at(i, a) * right.at(i, b);
      worst = std::max(worst, std::fabs(acc - (a == b ? 1.0 : 0.0)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("compact_svd recovers a diagonal case") {
  Matrix w(2, 3);
  w.at(0, 0) = 3.0;
  w.at(1, 1) = 2.0;
  auto s = compact_svd(w);
  REQUIRE(s.rank() == 2);
  CHECK(s.singular_values[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.singular_values[1] == doctest::Approx(2.0).epsilon(1e-12));
  // right columns are e1, e2 up to sign
  CHECK(std::fabs(s.right.at(0, 0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(s.right.at(1, 1)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(s.right.at(2, 0)) < 1e-12);
  CHECK(std::fabs(s.right.at(2, 1)) < 1e-12);
}

TEST_CASE("compact_svd handles a single row") {
  Matrix w(1, 4);
  w.at(0, 0) = 1.0;
  w.at(0, 1) = 1.0;
  auto s = compact_svd(w);
  REQUIRE(s.rank() == 1);
  CHECK(s.singular_values[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  const double inv = 1.0 / std::sqrt(2.0);
  CHECK(std::fabs(std::fabs(s.right.at(0, 0)) - inv) < 1e-12);
  CHECK(std::fabs(std::fabs(s.right.at(1, 0)) - inv) < 1e-12);
  CHECK(std::fabs(s.right.at(2, 0)) < 1e-12);
}

TEST_CASE("compact_svd singular values match the tridiagonal-QL oracle") {
  const Matrix w = random_matrix(4, 50, 7);
  auto s = compact_svd(w);
  auto expect = oracle::gram_singular_values(w.data, 4, 50);
  REQUIRE(s.rank() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::fabs(s.singular_values[i] - expect[i]) <= 1e-9 * expect[0]);
}

TEST_CASE("compact_svd reconstruction and orthonormality over random shapes") {
  const std::size_t shapes[][2] = {{1, 50}, {3, 64}, {8, 100}, {16, 400}, {32, 1000}};
  for (auto [t, d] : shapes) {
    const Matrix w = random_matrix(t, d, 1000 + t);
    auto s = compact_svd(w);
    const double sigma1 = s.singular_values.empty() ? 0.0 : s.singular_values[0];
    CHECK(max_abs_reconstruction_error(w, s) <= 1e-8 * std::max(1.0, sigma1));
    CHECK(max_gram_identity_error(s.right) <= 1e-10);
    for (std::size_t i = 1; i < s.rank(); ++i)
      CHECK(s.singular_values[i] <= s.singular_values[i - 1]);
  }
}

TEST_CASE("compact_svd truncates duplicate-row trajectories") {
  Matrix w(4, 20);
  itss::rng::Engine eng(3);
  for (std::size_t j = 0; j < 20; ++j) w.at(0, j) = eng.next_gaussian();
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < 20; ++j) w.at(i, j) = w.at(0, j) * (i + 1.0);
  auto s = compact_svd(w);
  CHECK(s.rank() == 1);
}

TEST_CASE("compact_svd rejects bad input") {
  Matrix tall(5, 2);
  CHECK_THROWS_AS(compact_svd(tall), itss::ShapeError);
  Matrix bad(1, 2);
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(compact_svd(bad), itss::InvalidInputError);
}

TEST_CASE("compact_svd of the zero matrix has rank zero") {
  Matrix w(3, 10);
  auto s = compact_svd(w);
  CHECK(s.rank() == 0);
}

TEST_CASE("orthonormal_random produces orthonormal deterministic bases") {
  auto q = orthonormal_random(1000, 8, 1);
  CHECK(max_gram_identity_error(q) < 1e-10);

  auto q2 = orthonormal_random(1000, 8, 1);
  CHECK(q.data == q2.data);  // bit-identical

  auto square = orthonormal_random(3, 3, 42);
  CHECK(max_gram_identity_error(square) < 1e-10);

  CHECK_THROWS_AS(orthonormal_random(4, 5, 0), itss::ShapeError);
}

TEST_CASE("orthonormal_random differs across seeds") {
  auto a = orthonormal_random(20, 3, 1);
  auto b = orthonormal_random(20, 3, 2);
  // Largest principal angle between the column spaces must be nonzero:
  // project b's columns on span(a) and look at the residual.
  double residual = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> col(20);
    for (std::size_t i = 0; i < 20; ++i) col[i] = b.at(i, j);
    for (std::size_t k = 0; k < 3; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < 20; ++i) proj += a.at(i, k) * col[i];
      for (std::size_t i = 0; i < 20; ++i) col[i] -= proj * a.at(i, k);
    }
    residual += itss::linalg::dot(col, col);
  }
  CHECK(residual > 1e-3);
}

TEST_CASE("random subspace captures about d/D of a fixed direction") {
  // E[|Q^T e|^2] = d/D for a uniformly random d-dim subspace of R^D.
  const std::size_t rows = 200, cols = 10, trials = 100;
  std::vector<double> e(rows, 0.0);
  e[0] = 1.0;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < trials; ++s) {
    auto q = orthonormal_random(rows, cols, 900 + s);
    std::vector<double> proj(cols);
    itss::linalg::matvec_transposed(q, e, proj);
    const double captured = itss::linalg::dot(proj, proj);
    const double delta = captured - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (captured - mean);
  }
  const double expected = static_cast<double>(cols) / rows;
  const double stderr_est = std::sqrt(m2 / (trials - 1) / trials);
  CHECK(std::fabs(mean - expected) <= 3.0 * stderr_est + 1e-12);
}

TEST_CASE("cosine basics") {
  std::vector<double> a{1.0, 2.0};
  CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
  CHECK(cosine(e1, e2) == doctest::Approx(0.0));
  std::vector<double> p{1.0, 1.0}, q{1.0, -1.0};
  CHECK(cosine(p, q) == doctest::Approx(0.0));
  std::vector<double> z{0.0, 0.0};
  CHECK_THROWS_AS(cosine(z, a), itss::InvalidInputError);
}
