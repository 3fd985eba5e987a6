#include <algorithm>
#include <numeric>

#include <omp.h>

#include "doctest.h"

#include "cbr/errors.hpp"
#include "cbr/kernels.hpp"
#include "cbr/numerics.hpp"
#include "support.hpp"

using namespace cbr;
using cbr::test::random_matrix;
using cbr::test::random_params;

namespace {

// The container may expose a single core; force a real team so the
// parallel paths split work across threads.
struct ForceThreads {
  ForceThreads() { omp_set_num_threads(4); }
};
const ForceThreads force_threads;

Matrix random_labels(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.flat()) {
    v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return m;
}

// Brute force: full sort of (distance, index) pairs.
Matrix knn_by_sorting(const Matrix& stored, const Matrix& labels, const Matrix& queries,
                      std::size_t k) {
  Matrix out(queries.rows(), labels.cols());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t s = 0; s < stored.rows(); ++s) {
      double sum = 0.0;
      for (std::size_t j = 0; j < stored.cols(); ++j) {
        const double diff = stored(s, j) - queries(q, j);
        sum += diff * diff;
      }
      d.emplace_back(sum, s);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t m = 0; m < labels.cols(); ++m) {
        out(q, m) += labels(d[i].second, m);
      }
    }
    for (std::size_t m = 0; m < labels.cols(); ++m) {
      out(q, m) /= static_cast<double>(k);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("forward serial and parallel agree bit for bit") {
  int team = 0;
#pragma omp parallel
  {
#pragma omp single
    team = omp_get_num_threads();
  }
  CHECK(team == 4);
  for (std::size_t rows : {1u, 7u, 300u}) {
    const DenseParams p = random_params(24, 40, 9, 100 + rows);
    const Matrix x = random_matrix(rows, 24, 200 + rows);
    const Matrix a = kernels::forward_serial(p, x);
    const Matrix b = kernels::forward_parallel(p, x);
    REQUIRE(a.rows() == rows);
    REQUIRE(a.cols() == 9);
    CHECK(a == b);
  }
}

TEST_CASE("forward kernel matches the single-row engine") {
  const DenseParams p = random_params(6, 5, 3, 7);
  const Matrix x = random_matrix(10, 6, 8);
  const Matrix out = kernels::forward_serial(p, x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto [y, trace] = mlp_forward(p, x.row(r), 0.0, false, 0);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(out(r, c) == doctest::Approx(y[c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("forward kernel rejects a width mismatch") {
  const DenseParams p = random_params(4, 3, 2, 1);
  const Matrix x = random_matrix(2, 5, 2);
  CHECK_THROWS_AS(kernels::forward_serial(p, x), ShapeError);
  CHECK_THROWS_AS(kernels::forward_parallel(p, x), ShapeError);
}

TEST_CASE("sigmoid_inplace") {
  Matrix m(1, 3);
  m(0, 0) = 0.0;
  m(0, 1) = 2.0;
  m(0, 2) = -2.0;
  kernels::sigmoid_inplace(m);
  CHECK(m(0, 0) == 0.5);
  CHECK(m(0, 1) == doctest::Approx(0.8807970779778823));
  CHECK(m(0, 1) + m(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("knn serial and parallel agree with a sorting oracle") {
  const Matrix stored = random_matrix(120, 5, 11);
  const Matrix labels = random_labels(120, 4, 12);
  const Matrix queries = random_matrix(40, 5, 13);
  for (std::size_t k : {1u, 3u, 20u, 120u}) {
    const Matrix expected = knn_by_sorting(stored, labels, queries, k);
    const Matrix serial = kernels::knn_scores_serial(stored, labels, queries, k);
    const Matrix parallel = kernels::knn_scores_parallel(stored, labels, queries, k);
    CHECK(serial == parallel);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(serial.flat()[i] == doctest::Approx(expected.flat()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("knn with k = 1 returns the matching record's labels") {
  const Matrix stored = random_matrix(30, 4, 21);
  const Matrix labels = random_labels(30, 6, 22);
  Matrix queries(3, 4);
  for (std::size_t q = 0; q < 3; ++q) {
    std::copy_n(stored.row(q * 7).begin(), 4, queries.row(q).begin());
  }
  const Matrix scores = kernels::knn_scores_serial(stored, labels, queries, 1);
  for (std::size_t q = 0; q < 3; ++q) {
    for (std::size_t m = 0; m < 6; ++m) {
      CHECK(scores(q, m) == labels(q * 7, m));
    }
  }
}

TEST_CASE("knn with k = n returns training accuracy for every query") {
  const Matrix stored = random_matrix(25, 3, 31);
  const Matrix labels = random_labels(25, 5, 32);
  const Matrix queries = random_matrix(8, 3, 33, -5.0, 5.0);
  const Matrix scores = kernels::knn_scores_parallel(stored, labels, queries, 25);
  for (std::size_t m = 0; m < 5; ++m) {
    double acc = 0.0;
    for (std::size_t s = 0; s < 25; ++s) {
      acc += labels(s, m);
    }
    acc /= 25.0;
    for (std::size_t q = 0; q < 8; ++q) {
      CHECK(scores(q, m) == doctest::Approx(acc));
    }
  }
}

TEST_CASE("knn ties resolve to the lower stored index") {
  // Two stored points equidistant from the query with different labels.
  Matrix stored(2, 1);
  stored(0, 0) = -1.0;
  stored(1, 0) = 1.0;
  Matrix labels(2, 1);
  labels(0, 0) = 0.0;
  labels(1, 0) = 1.0;
  Matrix query(1, 1);
  CHECK(kernels::knn_scores_serial(stored, labels, query, 1)(0, 0) == 0.0);
  labels(0, 0) = 1.0;
  labels(1, 0) = 0.0;
  CHECK(kernels::knn_scores_parallel(stored, labels, query, 1)(0, 0) == 1.0);
}

TEST_CASE("knn with a duplicated store and doubled k is unchanged") {
  const Matrix stored = random_matrix(40, 4, 41);
  const Matrix labels = random_labels(40, 3, 42);
  const Matrix queries = random_matrix(15, 4, 43);
  Matrix stored2(80, 4);
  Matrix labels2(80, 3);
  for (std::size_t r = 0; r < 40; ++r) {
    for (std::size_t copy = 0; copy < 2; ++copy) {
      std::copy_n(stored.row(r).begin(), 4, stored2.row(2 * r + copy).begin());
      std::copy_n(labels.row(r).begin(), 3, labels2.row(2 * r + copy).begin());
    }
  }
  for (std::size_t k : {1u, 5u, 17u}) {
    const Matrix a = kernels::knn_scores_serial(stored, labels, queries, k);
    const Matrix b = kernels::knn_scores_serial(stored2, labels2, queries, 2 * k);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.flat()[i] == doctest::Approx(b.flat()[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("knn argument errors") {
  const Matrix stored = random_matrix(5, 2, 51);
  const Matrix labels = random_labels(5, 2, 52);
  const Matrix queries = random_matrix(2, 2, 53);
  CHECK_THROWS_AS(kernels::knn_scores_serial(Matrix(0, 2), Matrix(0, 2), queries, 1), StateError);
  CHECK_THROWS_AS(kernels::knn_scores_serial(stored, labels, queries, 0), ConfigError);
  CHECK_THROWS_AS(kernels::knn_scores_serial(stored, labels, queries, 6), ConfigError);
  CHECK_THROWS_AS(kernels::knn_scores_serial(stored, labels, random_matrix(2, 3, 54), 1),
                  ShapeError);
  CHECK_THROWS_AS(kernels::knn_scores_parallel(stored, random_labels(4, 2, 55), queries, 1),
                  ShapeError);
}
