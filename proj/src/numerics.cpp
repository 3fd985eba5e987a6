#include "cbr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cbr/errors.hpp"

namespace cbr {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gelu(double x) { return x * std_normal_cdf(x); }

double gelu_derivative(double x) {
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return std_normal_cdf(x) + x * pdf;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

DenseParams DenseParams::zeros(std::size_t in_dim, std::size_t hidden_dim,
                               std::size_t out_dim) {
  DenseParams p;
  p.weight1 = Matrix(in_dim, hidden_dim);
  p.bias1.assign(hidden_dim, 0.0);
  p.weight2 = Matrix(hidden_dim, out_dim);
  p.bias2.assign(out_dim, 0.0);
  return p;
}

DenseParams DenseParams::glorot(std::size_t in_dim, std::size_t hidden_dim,
                                std::size_t out_dim, Rng& rng, bool zero_output_layer) {
  DenseParams p = zeros(in_dim, hidden_dim, out_dim);
  const double limit1 = std::sqrt(6.0 / static_cast<double>(in_dim + hidden_dim));
  for (double& w : p.weight1.flat()) {
    w = rng.uniform(-limit1, limit1);
  }
  if (!zero_output_layer) {
    const double limit2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + out_dim));
    for (double& w : p.weight2.flat()) {
      w = rng.uniform(-limit2, limit2);
    }
  }
  return p;
}

std::size_t DenseParams::param_count() const {
  return weight1.size() + bias1.size() + weight2.size() + bias2.size();
}

std::array<std::span<double>, 4> DenseParams::blocks() {
  return {weight1.flat(), std::span<double>(bias1), weight2.flat(), std::span<double>(bias2)};
}

std::array<std::span<const double>, 4> DenseParams::blocks() const {
  return {weight1.flat(), std::span<const double>(bias1), weight2.flat(),
          std::span<const double>(bias2)};
}

bool DenseParams::all_finite() const {
  for (auto block : blocks()) {
    for (double v : block) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
  }
  return true;
}

void DenseParams::round_to_float() {
  for (auto block : blocks()) {
    for (double& v : block) {
      v = static_cast<double>(static_cast<float>(v));
    }
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) {
    throw ShapeError(what);
  }
}

// out_row = bias + in_row * weight, with weight [in x out].
void affine_row(std::span<const double> in_row, const Matrix& weight, const Vector& bias,
                std::span<double> out_row) {
  std::copy(bias.begin(), bias.end(), out_row.begin());
  const std::size_t out_dim = weight.cols();
  for (std::size_t i = 0; i < in_row.size(); ++i) {
    const double x = in_row[i];
    if (x == 0.0) {
      continue;
    }
    const double* w = weight.row(i).data();
    for (std::size_t j = 0; j < out_dim; ++j) {
      out_row[j] += x * w[j];
    }
  }
}

}  // namespace

void forward_rows(const DenseParams& params, const Matrix& input, std::size_t begin,
                  std::size_t end, Matrix& out) {
  Vector hidden(params.hidden_dim());
  for (std::size_t r = begin; r < end; ++r) {
    affine_row(input.row(r), params.weight1, params.bias1, hidden);
    for (double& h : hidden) {
      h = gelu(h);
    }
    affine_row(hidden, params.weight2, params.bias2, out.row(r));
  }
}

BatchTrace forward_batch(const DenseParams& params, const Matrix& input, double dropout_p,
                         bool training, Rng& rng) {
  require(input.cols() == params.in_dim(), "forward: input width does not match in_dim");
  require(dropout_p >= 0.0 && dropout_p < 1.0, "forward: dropout must lie in [0, 1)");
  const std::size_t batch = input.rows();
  const std::size_t hidden = params.hidden_dim();

  BatchTrace t;
  t.input = input;
  t.hidden_pre = Matrix(batch, hidden);
  t.hidden_post = Matrix(batch, hidden);
  t.hidden_dropped = Matrix(batch, hidden);
  t.mask.assign(batch * hidden, 1);
  t.output = Matrix(batch, params.out_dim());

  const bool drop = training && dropout_p > 0.0;
  t.keep_scale = drop ? 1.0 / (1.0 - dropout_p) : 1.0;

  for (std::size_t b = 0; b < batch; ++b) {
    auto pre = t.hidden_pre.row(b);
    auto post = t.hidden_post.row(b);
    auto dropped = t.hidden_dropped.row(b);
    affine_row(input.row(b), params.weight1, params.bias1, pre);
    for (std::size_t j = 0; j < hidden; ++j) {
      post[j] = gelu(pre[j]);
      if (drop) {
        t.mask[b * hidden + j] = rng.uniform() >= dropout_p ? 1 : 0;
      }
      dropped[j] = t.mask[b * hidden + j] ? post[j] * t.keep_scale : 0.0;
    }
    affine_row(dropped, params.weight2, params.bias2, t.output.row(b));
  }
  return t;
}

DenseParams backward_batch(const BatchTrace& trace, const DenseParams& params,
                           const Matrix& output_grad, Matrix* input_grad) {
  const std::size_t batch = trace.input.rows();
  const std::size_t in_dim = params.in_dim();
  const std::size_t hidden = params.hidden_dim();
  const std::size_t out_dim = params.out_dim();
  require(output_grad.rows() == batch && output_grad.cols() == out_dim,
          "backward: output gradient shape mismatch");
  require(trace.hidden_pre.cols() == hidden && trace.input.cols() == in_dim,
          "backward: trace does not match parameters");

  DenseParams g = DenseParams::zeros(in_dim, hidden, out_dim);
  if (input_grad != nullptr) {
    *input_grad = Matrix(batch, in_dim);
  }
  Vector d_hidden(hidden);

  for (std::size_t b = 0; b < batch; ++b) {
    auto d_out = output_grad.row(b);
    auto dropped = trace.hidden_dropped.row(b);
    for (std::size_t o = 0; o < out_dim; ++o) {
      g.bias2[o] += d_out[o];
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      const double a = dropped[j];
      const double* w2 = params.weight2.row(j).data();
      double* gw2 = g.weight2.row(j).data();
      double acc = 0.0;
      for (std::size_t o = 0; o < out_dim; ++o) {
        gw2[o] += a * d_out[o];
        acc += d_out[o] * w2[o];
      }
      d_hidden[j] = trace.mask[b * hidden + j]
                        ? acc * trace.keep_scale * gelu_derivative(trace.hidden_pre(b, j))
                        : 0.0;
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      g.bias1[j] += d_hidden[j];
    }
    auto x = trace.input.row(b);
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double xi = x[i];
      double* gw1 = g.weight1.row(i).data();
      if (xi != 0.0) {
        for (std::size_t j = 0; j < hidden; ++j) {
          gw1[j] += xi * d_hidden[j];
        }
      }
      if (input_grad != nullptr) {
        const double* w1 = params.weight1.row(i).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < hidden; ++j) {
          acc += w1[j] * d_hidden[j];
        }
        (*input_grad)(b, i) = acc;
      }
    }
  }
  return g;
}

std::pair<Vector, ForwardTrace> mlp_forward(const DenseParams& params,
                                            std::span<const double> input, double dropout_p,
                                            bool training, std::uint64_t rng_seed) {
  Matrix x(1, input.size());
  std::copy(input.begin(), input.end(), x.row(0).begin());
  Rng rng(rng_seed);
  BatchTrace bt = forward_batch(params, x, dropout_p, training, rng);

  ForwardTrace t;
  t.input.assign(input.begin(), input.end());
  auto pre = bt.hidden_pre.row(0);
  auto post = bt.hidden_post.row(0);
  t.hidden_pre.assign(pre.begin(), pre.end());
  t.hidden_post.assign(post.begin(), post.end());
  t.mask.assign(bt.mask.begin(), bt.mask.end());
  t.keep_scale = bt.keep_scale;
  auto out = bt.output.row(0);
  t.output.assign(out.begin(), out.end());
  return {t.output, std::move(t)};
}

namespace {

BatchTrace to_batch(const ForwardTrace& t) {
  BatchTrace bt;
  const std::size_t hidden = t.hidden_pre.size();
  bt.input = Matrix(1, t.input.size());
  std::copy(t.input.begin(), t.input.end(), bt.input.row(0).begin());
  bt.hidden_pre = Matrix(1, hidden);
  bt.hidden_post = Matrix(1, hidden);
  bt.hidden_dropped = Matrix(1, hidden);
  bt.mask.resize(hidden);
  bt.keep_scale = t.keep_scale;
  for (std::size_t j = 0; j < hidden; ++j) {
    bt.hidden_pre(0, j) = t.hidden_pre[j];
    bt.hidden_post(0, j) = t.hidden_post[j];
    bt.mask[j] = t.mask[j] ? 1 : 0;
    bt.hidden_dropped(0, j) = t.mask[j] ? t.hidden_post[j] * t.keep_scale : 0.0;
  }
  return bt;
}

}  // namespace

Vector replay_forward(const DenseParams& params, const ForwardTrace& trace) {
  require(trace.input.size() == params.in_dim() && trace.mask.size() == params.hidden_dim(),
          "replay: trace does not match parameters");
  Vector hidden(params.hidden_dim());
  affine_row(trace.input, params.weight1, params.bias1, hidden);
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    hidden[j] = trace.mask[j] ? gelu(hidden[j]) * trace.keep_scale : 0.0;
  }
  Vector out(params.out_dim());
  affine_row(hidden, params.weight2, params.bias2, out);
  return out;
}

DenseParams mlp_backward(const ForwardTrace& trace, const DenseParams& params,
                         std::span<const double> output_grad) {
  require(output_grad.size() == params.out_dim(), "backward: output gradient width mismatch");
  require(trace.hidden_pre.size() == params.hidden_dim() && trace.input.size() == params.in_dim(),
          "backward: trace does not match parameters");
  Matrix d_out(1, output_grad.size());
  std::copy(output_grad.begin(), output_grad.end(), d_out.row(0).begin());
  return backward_batch(to_batch(trace), params, d_out);
}

double bce_loss(std::span<const double> pred_prob, std::span<const double> target) {
  require(pred_prob.size() == target.size(), "bce: prediction and target lengths differ");
  if (pred_prob.empty()) {
    return 0.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    const double p = std::clamp(pred_prob[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double t = target[i];
    total -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
  }
  return total / static_cast<double>(pred_prob.size());
}

void adam_update(std::span<double> params, std::span<const double> grads, Moments& moments,
                 const AdamConfig& config, std::uint64_t step) {
  if (moments.first.size() != params.size()) {
    moments.first.assign(params.size(), 0.0);
    moments.second.assign(params.size(), 0.0);
  }
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

OptimizerState OptimizerState::for_params(const DenseParams& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  const auto blocks = params.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    s.moments[b].first.assign(blocks[b].size(), 0.0);
    s.moments[b].second.assign(blocks[b].size(), 0.0);
  }
  return s;
}

void check_finite_gradient(std::span<const double> grads, const std::string& block_name) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw TrainingError("non-finite gradient in " + block_name + "[" + std::to_string(i) +
                          "]");
    }
  }
}

void optimizer_step(OptimizerState& state, DenseParams& params, const DenseParams& grads) {
  auto p_blocks = params.blocks();
  const auto g_blocks = grads.blocks();
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    if (p_blocks[b].size() != g_blocks[b].size()) {
      throw ShapeError(std::string("optimizer: gradient shape mismatch in ") +
                       DenseParams::kBlockNames[b]);
    }
    check_finite_gradient(g_blocks[b], DenseParams::kBlockNames[b]);
  }
  ++state.step;
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    adam_update(p_blocks[b], g_blocks[b], state.moments[b], state.config, state.step);
  }
}

GradCheckReport finite_diff_check(const DenseParams& params, const LossFn& loss_fn,
                                  double tolerance, double step) {
  DenseParams analytic = DenseParams::zeros(params.in_dim(), params.hidden_dim(),
                                            params.out_dim());
  loss_fn(params, &analytic);

  GradCheckReport report;
  DenseParams probe = params;
  auto probe_blocks = probe.blocks();
  const auto analytic_blocks = analytic.blocks();
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    BlockCheck& check = report.blocks[b];
    check.name = DenseParams::kBlockNames[b];
    for (std::size_t i = 0; i < probe_blocks[b].size(); ++i) {
      const double original = probe_blocks[b][i];
      probe_blocks[b][i] = original + step;
      const double plus = loss_fn(probe, nullptr);
      probe_blocks[b][i] = original - step;
      const double minus = loss_fn(probe, nullptr);
      probe_blocks[b][i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double exact = analytic_blocks[b][i];
      const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
      const double rel = std::abs(numeric - exact) / scale;
      check.max_rel_error = std::max(check.max_rel_error, rel);
    }
    check.passed = check.max_rel_error < tolerance;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.passed = report.passed && check.passed;
  }
  return report;
}

}  // namespace cbr
