#pragma once

// Data-parallel inference kernels. Each kernel has a serial reference and an
// OpenMP variant; the two must agree bit for bit because every output row is
// computed by the same sequence of operations.

#include <cstddef>

#include "cbr/numerics.hpp"

namespace cbr::kernels {

// Inference-mode forward pass (no dropout) over every row of input.
Matrix forward_serial(const DenseParams& params, const Matrix& input);
Matrix forward_parallel(const DenseParams& params, const Matrix& input);

// Per-model KNN scores: fraction of the k nearest stored rows (squared
// Euclidean, ties broken by lower stored index) whose label is 1.
Matrix knn_scores_serial(const Matrix& stored, const Matrix& labels, const Matrix& queries,
                         std::size_t k);
Matrix knn_scores_parallel(const Matrix& stored, const Matrix& labels, const Matrix& queries,
                           std::size_t k);

// Applies sigmoid elementwise in place.
void sigmoid_inplace(Matrix& m);

}  // namespace cbr::kernels
