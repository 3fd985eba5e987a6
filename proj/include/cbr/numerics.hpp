#pragma once

// Dense two-layer perceptron engine: GeLU hidden layer, inverted dropout,
// sigmoid/BCE heads, adaptive-moment optimizer and a finite-difference
// gradient checker.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbr/rng.hpp"

namespace cbr {

using Vector = std::vector<double>;

// Row-major dense matrix.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool operator==(const Matrix&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double std_normal_cdf(double x);
double gelu(double x);
double gelu_derivative(double x);
double sigmoid(double x);

inline constexpr double kProbabilityClamp = 1e-7;

struct DenseParams {
  Matrix weight1;  // in_dim x hidden_dim
  Vector bias1;    // hidden_dim
  Matrix weight2;  // hidden_dim x out_dim
  Vector bias2;    // out_dim

  static constexpr std::array<const char*, 4> kBlockNames{"weight1", "bias1", "weight2",
                                                          "bias2"};

  static DenseParams zeros(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim);
  // Glorot-uniform weights, zero biases. With zero_output_layer the second
  // weight matrix starts at zero so an untrained head emits zero logits.
  static DenseParams glorot(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                            Rng& rng, bool zero_output_layer = false);

  std::size_t in_dim() const { return weight1.rows(); }
  std::size_t hidden_dim() const { return weight1.cols(); }
  std::size_t out_dim() const { return weight2.cols(); }
  std::size_t param_count() const;

  std::array<std::span<double>, 4> blocks();
  std::array<std::span<const double>, 4> blocks() const;

  bool all_finite() const;
  // Rounds every entry to the nearest float32 so a float32 checkpoint
  // reproduces the parameters exactly.
  void round_to_float();

  bool operator==(const DenseParams&) const = default;
};

struct ForwardTrace {
  Vector input;
  Vector hidden_pre;        // x W1 + b1
  Vector hidden_post;       // gelu(hidden_pre)
  std::vector<bool> mask;   // kept hidden units; all true outside training
  double keep_scale = 1.0;  // 1 / (1 - p) when dropout is active
  Vector output;
};

// Batched counterpart of ForwardTrace used by the training loops.
struct BatchTrace {
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden_post;
  Matrix hidden_dropped;
  std::vector<std::uint8_t> mask;
  double keep_scale = 1.0;
  Matrix output;
};

std::pair<Vector, ForwardTrace> mlp_forward(const DenseParams& params,
                                            std::span<const double> input, double dropout_p,
                                            bool training, std::uint64_t rng_seed);

// Recomputes the output from a trace's stored input and dropout mask.
Vector replay_forward(const DenseParams& params, const ForwardTrace& trace);

DenseParams mlp_backward(const ForwardTrace& trace, const DenseParams& params,
                         std::span<const double> output_grad);

BatchTrace forward_batch(const DenseParams& params, const Matrix& input, double dropout_p,
                         bool training, Rng& rng);

// Gradients summed over the batch rows; the loss is expected to carry any
// averaging inside output_grad. When input_grad is non-null it receives
// dLoss/dInput.
DenseParams backward_batch(const BatchTrace& trace, const DenseParams& params,
                           const Matrix& output_grad, Matrix* input_grad = nullptr);

// Inference forward for rows [begin, end) of input into out (same rows).
void forward_rows(const DenseParams& params, const Matrix& input, std::size_t begin,
                  std::size_t end, Matrix& out);

double bce_loss(std::span<const double> pred_prob, std::span<const double> target);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct Moments {
  Vector first;
  Vector second;
};

// One bias-corrected adaptive-moment update of a flat parameter block.
// step is the 1-based update index.
void adam_update(std::span<double> params, std::span<const double> grads, Moments& moments,
                 const AdamConfig& config, std::uint64_t step);

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::array<Moments, 4> moments;

  static OptimizerState for_params(const DenseParams& params, AdamConfig config);
};

// Throws TrainingError naming the block and entry on a non-finite gradient.
void check_finite_gradient(std::span<const double> grads, const std::string& block_name);

void optimizer_step(OptimizerState& state, DenseParams& params, const DenseParams& grads);

// Loss callback for gradient checking. When grad is non-null the callback
// must fill it with the analytic gradient at params.
using LossFn = std::function<double(const DenseParams& params, DenseParams* grad)>;

struct BlockCheck {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::array<BlockCheck, 4> blocks;
  double max_rel_error = 0.0;
  bool passed = true;
};

GradCheckReport finite_diff_check(const DenseParams& params, const LossFn& loss_fn,
                                  double tolerance, double step = 1e-4);

}  // namespace cbr
