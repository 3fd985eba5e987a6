#include "cbr/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "cbr/errors.hpp"

namespace cbr::kernels {

namespace {

void check_forward(const DenseParams& params, const Matrix& input) {
  if (input.cols() != params.in_dim()) {
    throw ShapeError("forward: input width " + std::to_string(input.cols()) +
                     " does not match in_dim " + std::to_string(params.in_dim()));
  }
}

void check_knn(const Matrix& stored, const Matrix& labels, const Matrix& queries,
               std::size_t k) {
  if (stored.rows() == 0) {
    throw StateError("knn: no stored training rows");
  }
  if (labels.rows() != stored.rows()) {
    throw ShapeError("knn: label rows do not match stored rows");
  }
  if (queries.cols() != stored.cols()) {
    throw ShapeError("knn: query width does not match stored width");
  }
  if (k == 0 || k > stored.rows()) {
    throw ConfigError("knn: neighbor count must lie in [1, training size]");
  }
}

void knn_row(const Matrix& stored, const Matrix& labels, std::span<const double> query,
             std::size_t k, std::span<double> out,
             std::vector<std::pair<double, std::size_t>>& scratch) {
  scratch.resize(stored.rows());
  for (std::size_t i = 0; i < stored.rows(); ++i) {
    auto s = stored.row(i);
    double d = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double diff = s[j] - query[j];
      d += diff * diff;
    }
    scratch[i] = {d, i};
  }
  // Pair ordering gives the index tie-break.
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                    scratch.end());
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t n = 0; n < k; ++n) {
    auto y = labels.row(scratch[n].second);
    for (std::size_t m = 0; m < out.size(); ++m) {
      out[m] += y[m];
    }
  }
  for (double& v : out) {
    v /= static_cast<double>(k);
  }
}

}  // namespace

Matrix forward_serial(const DenseParams& params, const Matrix& input) {
  check_forward(params, input);
  Matrix out(input.rows(), params.out_dim());
  forward_rows(params, input, 0, input.rows(), out);
  return out;
}

Matrix forward_parallel(const DenseParams& params, const Matrix& input) {
  check_forward(params, input);
  Matrix out(input.rows(), params.out_dim());
  const auto rows = static_cast<std::int64_t>(input.rows());
  constexpr std::int64_t kChunk = 64;
#pragma omp parallel for schedule(static)
  for (std::int64_t begin = 0; begin < rows; begin += kChunk) {
    const std::int64_t end = std::min(rows, begin + kChunk);
    forward_rows(params, input, static_cast<std::size_t>(begin), static_cast<std::size_t>(end),
                 out);
  }
  return out;
}

Matrix knn_scores_serial(const Matrix& stored, const Matrix& labels, const Matrix& queries,
                         std::size_t k) {
  check_knn(stored, labels, queries, k);
  Matrix out(queries.rows(), labels.cols());
  std::vector<std::pair<double, std::size_t>> scratch;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    knn_row(stored, labels, queries.row(q), k, out.row(q), scratch);
  }
  return out;
}

Matrix knn_scores_parallel(const Matrix& stored, const Matrix& labels, const Matrix& queries,
                           std::size_t k) {
  check_knn(stored, labels, queries, k);
  Matrix out(queries.rows(), labels.cols());
  const auto rows = static_cast<std::int64_t>(queries.rows());
#pragma omp parallel
  {
    std::vector<std::pair<double, std::size_t>> scratch;
#pragma omp for schedule(dynamic, 16)
    for (std::int64_t q = 0; q < rows; ++q) {
      const auto r = static_cast<std::size_t>(q);
      knn_row(stored, labels, queries.row(r), k, out.row(r), scratch);
    }
  }
  return out;
}

void sigmoid_inplace(Matrix& m) {
  for (double& v : m.flat()) {
    v = sigmoid(v);
  }
}

}  // namespace cbr::kernels
