#include "cbr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cbr/errors.hpp"
#include "cbr/evaluation.hpp"
#include "cbr/kernels.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using nlohmann::json;

namespace {

// Salts for the independent random streams of one run.
constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kShuffleSalt = 2;
constexpr std::uint64_t kDropoutSalt = 3;
constexpr std::uint64_t kConceptHeadSalt = 11;
constexpr std::uint64_t kSuitabilityHeadSalt = 12;
constexpr std::uint64_t kBlackBoxSalt = 13;
constexpr std::uint64_t kFactorizationSalt = 14;

json head_to_json(const HeadConfig& h) {
  return {{"hidden_dim", h.hidden_dim},   {"dropout", h.dropout},
          {"learning_rate", h.learning_rate}, {"batch_size", h.batch_size},
          {"max_epochs", h.max_epochs},   {"patience", h.patience}};
}

HeadConfig head_from_json(const json& j, HeadConfig h) {
  h.hidden_dim = j.value("hidden_dim", h.hidden_dim);
  h.dropout = j.value("dropout", h.dropout);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.max_epochs = j.value("max_epochs", h.max_epochs);
  h.patience = j.value("patience", h.patience);
  return h;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void round_to_float(Matrix& m) {
  for (double& v : m.flat()) {
    v = static_cast<double>(static_cast<float>(v));
  }
}

double softmax_expectation(std::span<const double> logits, std::span<const double> costs,
                           Vector& probs) {
  const double max = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max);
    z += probs[i];
  }
  double expected = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] /= z;
    expected += probs[i] * costs[i];
  }
  return expected;
}

// What a head is trained on; costs may be empty when lambda is zero.
struct Problem {
  const Matrix* inputs;
  const Matrix* targets;
  const Matrix* costs;
};

double evaluate_loss(const DenseParams& params, const Problem& p, double lambda) {
  if (p.inputs->rows() == 0) {
    return 0.0;
  }
  const Matrix logits = kernels::forward_serial(params, *p.inputs);
  return composite_loss(logits, *p.targets, *p.costs, lambda, nullptr);
}

HeadResult train_head(const std::string& name, const Problem& train, const Problem& validation,
                      const HeadConfig& config, double lambda, std::uint64_t seed) {
  config.validate(name);
  if (train.inputs->rows() == 0) {
    throw SizeError(name + ": empty training set");
  }
  if (!(lambda >= 0.0)) {
    throw ConfigError(name + ": lambda must be non-negative");
  }
  const std::size_t n = train.inputs->rows();
  const std::size_t in_dim = train.inputs->cols();
  const std::size_t out_dim = train.targets->cols();

  Rng init_rng(mix_seed(seed, kInitSalt));
  Rng shuffle_rng(mix_seed(seed, kShuffleSalt));
  Rng dropout_rng(mix_seed(seed, kDropoutSalt));

  DenseParams params = DenseParams::glorot(in_dim, config.hidden_dim, out_dim, init_rng, true);
  params.round_to_float();
  OptimizerState opt = OptimizerState::for_params(params, AdamConfig{config.learning_rate});

  HeadResult result;
  result.curve.head = name;
  const double initial_val = evaluate_loss(params, validation, lambda);
  result.curve.points.push_back({0, evaluate_loss(params, train, lambda), initial_val});
  result.curve.best_epoch = 0;
  result.curve.best_validation_loss = initial_val;
  result.params = params;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> batch_rows;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      batch_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix x = gather_rows(*train.inputs, batch_rows);
      const Matrix y = gather_rows(*train.targets, batch_rows);
      const Matrix c = lambda > 0.0 ? gather_rows(*train.costs, batch_rows) : Matrix();
      const BatchTrace trace = forward_batch(params, x, config.dropout, true, dropout_rng);
      Matrix grad;
      const double loss = composite_loss(trace.output, y, c, lambda, &grad);
      if (!std::isfinite(loss)) {
        throw TrainingError(name + ": non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(end - start);
      const DenseParams grads = backward_batch(trace, params, grad);
      optimizer_step(opt, params, grads);
      // Parameters live on the float32 grid so snapshots serialize exactly.
      params.round_to_float();
    }
    const double val = evaluate_loss(params, validation, lambda);
    if (!std::isfinite(val)) {
      throw TrainingError(name + ": non-finite validation loss at epoch " +
                          std::to_string(epoch));
    }
    result.curve.points.push_back({epoch, loss_sum / static_cast<double>(n), val});
    if (val < result.curve.best_validation_loss) {
      result.curve.best_validation_loss = val;
      result.curve.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace

void HeadConfig::validate(const std::string& name) const {
  if (hidden_dim == 0) {
    throw ConfigError(name + ": hidden_dim must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError(name + ": dropout must lie in [0, 1)");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError(name + ": learning_rate must be positive");
  }
  if (batch_size == 0) {
    throw ConfigError(name + ": batch_size must be at least 1");
  }
  if (patience == 0) {
    throw ConfigError(name + ": patience must be at least 1");
  }
}

void TrainConfig::validate() const {
  concept_head.validate("concept_head");
  suitability_head.validate("suitability_head");
  blackbox_head.validate("blackbox_head");
  factorization_head.validate("factorization_head");
  if (model_embedding_dim == 0 || knn_neighbors == 0) {
    throw ConfigError("model_embedding_dim and knn_neighbors must be positive");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("lambda must be a finite non-negative number");
  }
}

json train_config_to_json(const TrainConfig& c) {
  return {{"concept_head", head_to_json(c.concept_head)},
          {"suitability_head", head_to_json(c.suitability_head)},
          {"blackbox_head", head_to_json(c.blackbox_head)},
          {"factorization_head", head_to_json(c.factorization_head)},
          {"model_embedding_dim", c.model_embedding_dim},
          {"knn_neighbors", c.knn_neighbors},
          {"lambda", c.lambda},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  try {
    if (j.contains("concept_head")) c.concept_head = head_from_json(j["concept_head"], c.concept_head);
    if (j.contains("suitability_head"))
      c.suitability_head = head_from_json(j["suitability_head"], c.suitability_head);
    if (j.contains("blackbox_head")) c.blackbox_head = head_from_json(j["blackbox_head"], c.blackbox_head);
    if (j.contains("factorization_head"))
      c.factorization_head = head_from_json(j["factorization_head"], c.factorization_head);
    c.model_embedding_dim = j.value("model_embedding_dim", c.model_embedding_dim);
    c.knn_neighbors = j.value("knn_neighbors", c.knn_neighbors);
    c.lambda = j.value("lambda", c.lambda);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainingData gather(const Dataset& dataset, std::span<const std::size_t> indices,
                    const std::vector<std::size_t>* concept_indices) {
  const std::size_t k = concept_indices ? concept_indices->size() : dataset.schema().width();
  const std::size_t n_models = dataset.catalog().size();
  TrainingData t;
  t.embeddings = Matrix(indices.size(), dataset.header.embedding_dim);
  t.concepts = Matrix(indices.size(), k);
  t.correctness = Matrix(indices.size(), n_models);
  t.normalized_costs = Matrix(indices.size(), n_models);
  t.raw_costs = Matrix(indices.size(), n_models);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const QueryRecord& r = dataset.records.at(indices[i]);
    std::copy(r.embedding.begin(), r.embedding.end(), t.embeddings.row(i).begin());
    if (concept_indices) {
      for (std::size_t c = 0; c < k; ++c) {
        t.concepts(i, c) = r.concepts[(*concept_indices)[c]];
      }
    } else {
      std::copy(r.concepts.begin(), r.concepts.end(), t.concepts.row(i).begin());
    }
    for (std::size_t m = 0; m < n_models; ++m) {
      t.correctness(i, m) = r.correctness[m];
    }
    const Vector raw = cost_vector(r, dataset.catalog());
    const Vector norm = normalize_costs(raw);
    std::copy(raw.begin(), raw.end(), t.raw_costs.row(i).begin());
    std::copy(norm.begin(), norm.end(), t.normalized_costs.row(i).begin());
  }
  return t;
}

double cost_term(std::span<const double> logits, std::span<const double> normalized_costs) {
  if (logits.size() != normalized_costs.size() || logits.empty()) {
    throw ShapeError("cost_term: logits and costs widths differ");
  }
  Vector probs;
  return softmax_expectation(logits, normalized_costs, probs);
}

double bce_from_logits(const Matrix& logits, const Matrix& targets, Matrix* grad) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("bce: logits and targets shapes differ");
  }
  const double count = static_cast<double>(logits.size());
  if (grad != nullptr) {
    *grad = Matrix(logits.rows(), logits.cols());
  }
  if (logits.size() == 0) {
    return 0.0;
  }
  double total = 0.0;
  const auto z = logits.flat();
  const auto t = targets.flat();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s = sigmoid(z[i]);
    const double p = std::clamp(s, kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= t[i] * std::log(p) + (1.0 - t[i]) * std::log1p(-p);
    if (grad != nullptr) {
      grad->flat()[i] = (s - t[i]) / count;
    }
  }
  return total / count;
}

double composite_loss(const Matrix& logits, const Matrix& targets, const Matrix& costs,
                      double lambda, Matrix* grad) {
  double loss = bce_from_logits(logits, targets, grad);
  if (lambda == 0.0) {
    return loss;
  }
  if (costs.rows() != logits.rows() || costs.cols() != logits.cols()) {
    throw ShapeError("composite loss: costs shape differs from logits");
  }
  const double rows = static_cast<double>(logits.rows());
  Vector probs;
  double cost_sum = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto c = costs.row(b);
    const double expected = softmax_expectation(logits.row(b), c, probs);
    cost_sum += expected;
    if (grad != nullptr) {
      auto g = grad->row(b);
      for (std::size_t j = 0; j < probs.size(); ++j) {
        g[j] += lambda / rows * probs[j] * (c[j] - expected);
      }
    }
  }
  return loss + lambda * cost_sum / rows;
}

HeadResult train_concept_head(const TrainingData& train, const TrainingData& validation,
                              const HeadConfig& config, std::uint64_t seed) {
  const Matrix none;
  return train_head("concept_head", {&train.embeddings, &train.concepts, &none},
                    {&validation.embeddings, &validation.concepts, &none}, config, 0.0, seed);
}

HeadResult train_suitability_head(const TrainingData& train, const TrainingData& validation,
                                  const HeadConfig& config, double lambda, std::uint64_t seed) {
  return train_head("suitability_head",
                    {&train.concepts, &train.correctness, &train.normalized_costs},
                    {&validation.concepts, &validation.correctness, &validation.normalized_costs},
                    config, lambda, seed);
}

HeadResult train_blackbox_head(const TrainingData& train, const TrainingData& validation,
                               const HeadConfig& config, double lambda, std::uint64_t seed) {
  return train_head("blackbox_head",
                    {&train.embeddings, &train.correctness, &train.normalized_costs},
                    {&validation.embeddings, &validation.correctness, &validation.normalized_costs},
                    config, lambda, seed);
}

namespace {

Matrix factorization_logits_batch(const Matrix& projected, const Matrix& model_embeddings) {
  Matrix logits(projected.rows(), model_embeddings.rows());
  for (std::size_t b = 0; b < projected.rows(); ++b) {
    auto q = projected.row(b);
    for (std::size_t m = 0; m < model_embeddings.rows(); ++m) {
      auto e = model_embeddings.row(m);
      double dot = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        dot += q[j] * e[j];
      }
      logits(b, m) = dot;
    }
  }
  return logits;
}

double factorization_val_loss(const FactorizationRouter& r, const TrainingData& data) {
  if (data.size() == 0) {
    return 0.0;
  }
  const Matrix q = kernels::forward_serial(r.projection, data.embeddings);
  return bce_from_logits(factorization_logits_batch(q, r.model_embeddings), data.correctness,
                         nullptr);
}

}  // namespace

FactorizationResult train_factorization(const TrainingData& train, const TrainingData& validation,
                                        const HeadConfig& config, std::size_t embedding_dim,
                                        const ModelCatalog& catalog, std::uint64_t seed) {
  config.validate("factorization_head");
  if (train.size() == 0) {
    throw SizeError("factorization: empty training set");
  }
  const std::size_t n = train.size();
  const std::size_t n_models = catalog.size();
  Rng init_rng(mix_seed(seed, kInitSalt));
  Rng shuffle_rng(mix_seed(seed, kShuffleSalt));
  Rng dropout_rng(mix_seed(seed, kDropoutSalt));

  FactorizationRouter r;
  r.catalog = catalog;
  r.projection = DenseParams::glorot(train.embeddings.cols(), config.hidden_dim, embedding_dim,
                                     init_rng, true);
  r.projection.round_to_float();
  r.model_embeddings = Matrix(n_models, embedding_dim);
  const double limit = std::sqrt(6.0 / static_cast<double>(n_models + embedding_dim));
  for (double& v : r.model_embeddings.flat()) {
    v = init_rng.uniform(-limit, limit);
  }
  round_to_float(r.model_embeddings);

  OptimizerState opt = OptimizerState::for_params(r.projection, AdamConfig{config.learning_rate});
  Moments embedding_moments;

  FactorizationResult result;
  result.curve.head = "factorization";
  const double initial_val = factorization_val_loss(r, validation);
  result.curve.points.push_back({0, factorization_val_loss(r, train), initial_val});
  result.curve.best_validation_loss = initial_val;
  result.router = r;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> rows;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                  order.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix x = gather_rows(train.embeddings, rows);
      const Matrix y = gather_rows(train.correctness, rows);
      const BatchTrace trace = forward_batch(r.projection, x, config.dropout, true, dropout_rng);
      const Matrix logits = factorization_logits_batch(trace.output, r.model_embeddings);
      Matrix d_logits;
      const double loss = bce_from_logits(logits, y, &d_logits);
      if (!std::isfinite(loss)) {
        throw TrainingError("factorization: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(end - start);

      Matrix d_projected(trace.output.rows(), embedding_dim);
      Matrix d_embeddings(n_models, embedding_dim);
      for (std::size_t b = 0; b < trace.output.rows(); ++b) {
        auto q = trace.output.row(b);
        auto dq = d_projected.row(b);
        for (std::size_t m = 0; m < n_models; ++m) {
          const double g = d_logits(b, m);
          auto e = r.model_embeddings.row(m);
          auto de = d_embeddings.row(m);
          for (std::size_t j = 0; j < embedding_dim; ++j) {
            dq[j] += g * e[j];
            de[j] += g * q[j];
          }
        }
      }
      const DenseParams grads = backward_batch(trace, r.projection, d_projected);
      check_finite_gradient(d_embeddings.flat(), "model_embeddings");
      optimizer_step(opt, r.projection, grads);
      adam_update(r.model_embeddings.flat(), d_embeddings.flat(), embedding_moments, opt.config,
                  opt.step);
      r.projection.round_to_float();
      round_to_float(r.model_embeddings);
    }
    const double val = factorization_val_loss(r, validation);
    result.curve.points.push_back({epoch, loss_sum / static_cast<double>(n), val});
    if (val < result.curve.best_validation_loss) {
      result.curve.best_validation_loss = val;
      result.curve.best_epoch = epoch;
      result.router = r;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

KnnRouter fit_knn(const TrainingData& train, std::size_t neighbors, const ModelCatalog& catalog) {
  if (train.size() == 0) {
    throw StateError("knn: empty training set");
  }
  if (neighbors == 0 || neighbors > train.size()) {
    throw ConfigError("knn: neighbor count must lie in [1, training size]");
  }
  KnnRouter r;
  r.embeddings = train.embeddings;
  round_to_float(r.embeddings);
  r.correctness = train.correctness;
  r.neighbors = neighbors;
  r.catalog = catalog;
  return r;
}

namespace {

struct SplitData {
  TrainingData train;
  TrainingData validation;
};

SplitData gather_split(const Dataset& dataset, const DatasetSplit& split,
                       const std::string& ablated_group) {
  std::vector<std::size_t> kept;
  const std::vector<std::size_t>* indices = nullptr;
  if (!ablated_group.empty()) {
    (void)dataset.schema().without(ablated_group);
    kept = dataset.schema().indices_without(ablated_group);
    indices = &kept;
  }
  return {gather(dataset, split.train, indices), gather(dataset, split.validation, indices)};
}

TrainingMetadata make_metadata(const TrainConfig& config, const std::string& ablated_group) {
  TrainingMetadata m;
  m.lambda = config.lambda;
  m.seed = config.seed;
  m.hyperparameters = train_config_to_json(config);
  m.ablated_group = ablated_group;
  return m;
}

}  // namespace

TrainedPolicy train_bottleneck_with_concept_head(const Dataset& dataset, const DatasetSplit& split,
                                                 const TrainConfig& config,
                                                 const HeadResult& concept_head,
                                                 const std::string& ablated_group) {
  config.validate();
  const SplitData data = gather_split(dataset, split, ablated_group);
  HeadResult g = train_suitability_head(data.train, data.validation, config.suitability_head,
                                        config.lambda,
                                        mix_seed(config.seed, kSuitabilityHeadSalt));
  BottleneckRouter router;
  router.concept_head = concept_head.params;
  router.suitability_head = std::move(g.params);
  router.schema =
      ablated_group.empty() ? dataset.schema() : dataset.schema().without(ablated_group);
  router.catalog = dataset.catalog();
  if (router.concept_head.out_dim() != router.schema.width()) {
    throw ShapeError("concept head width does not match the (ablated) schema");
  }
  TrainedPolicy out;
  out.checkpoint = Checkpoint{std::move(router), make_metadata(config, ablated_group)};
  out.curves = {concept_head.curve, std::move(g.curve)};
  return out;
}

TrainedPolicy train_policy(PolicyKind kind, const Dataset& dataset, const DatasetSplit& split,
                           const TrainConfig& config, const std::string& ablated_group) {
  config.validate();
  if (!ablated_group.empty() && kind != PolicyKind::bottleneck) {
    throw ConfigError("concept-group ablation applies to the bottleneck policy only");
  }
  const ModelCatalog& catalog = dataset.catalog();
  switch (kind) {
    case PolicyKind::bottleneck: {
      const SplitData data = gather_split(dataset, split, ablated_group);
      const HeadResult h = train_concept_head(data.train, data.validation, config.concept_head,
                                              mix_seed(config.seed, kConceptHeadSalt));
      return train_bottleneck_with_concept_head(dataset, split, config, h, ablated_group);
    }
    case PolicyKind::blackbox: {
      const SplitData data = gather_split(dataset, split, {});
      HeadResult f = train_blackbox_head(data.train, data.validation, config.blackbox_head,
                                         config.lambda, mix_seed(config.seed, kBlackBoxSalt));
      TrainedPolicy out;
      out.checkpoint = Checkpoint{BlackBoxRouter{std::move(f.params), catalog},
                                  make_metadata(config, {})};
      out.curves = {std::move(f.curve)};
      return out;
    }
    case PolicyKind::knn: {
      const SplitData data = gather_split(dataset, split, {});
      TrainedPolicy out;
      out.checkpoint = Checkpoint{fit_knn(data.train, config.knn_neighbors, catalog),
                                  make_metadata(config, {})};
      return out;
    }
    case PolicyKind::factorization: {
      const SplitData data = gather_split(dataset, split, {});
      FactorizationResult fr =
          train_factorization(data.train, data.validation, config.factorization_head,
                              config.model_embedding_dim, catalog,
                              mix_seed(config.seed, kFactorizationSalt));
      TrainedPolicy out;
      out.checkpoint = Checkpoint{std::move(fr.router), make_metadata(config, {})};
      out.curves = {std::move(fr.curve)};
      return out;
    }
    case PolicyKind::random: {
      TrainedPolicy out;
      out.checkpoint = Checkpoint{RandomRouter{config.seed, catalog}, make_metadata(config, {})};
      return out;
    }
    case PolicyKind::oracle:
      break;
  }
  throw ContractError("the oracle policy is computed from labels and cannot be trained");
}

SweepGrid SweepGrid::default_grid() {
  SweepGrid g;
  for (int i = 0; i < 10; ++i) {
    g.lambdas.push_back(i / 10.0);
  }
  for (int i = 1; i <= 10; ++i) {
    g.lambdas.push_back(static_cast<double>(i));
  }
  return g;
}

SweepGrid SweepGrid::parse(const std::string& text) {
  if (text == "default") {
    return default_grid();
  }
  SweepGrid g;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      g.lambdas.push_back(std::stod(item, &used));
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
    } catch (const std::exception&) {
      throw ConfigError("lambda grid: cannot parse '" + item + "'");
    }
  }
  g.validate();
  return g;
}

void SweepGrid::validate() const {
  if (lambdas.empty()) {
    throw ConfigError("lambda grid is empty");
  }
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] >= 0.0) || !std::isfinite(lambdas[i])) {
      throw ConfigError("lambda grid values must be finite and non-negative");
    }
    if (i > 0 && !(lambdas[i] > lambdas[i - 1])) {
      throw ConfigError("lambda grid must be strictly increasing");
    }
  }
}

std::size_t RunSet::failed() const {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [](const RunResult& r) { return !r.ok; }));
}

RunSet run_sweep(const Dataset& dataset, const DatasetSplit& split, const SweepGrid& grid,
                 std::size_t seeds, PolicyKind kind, const TrainConfig& config,
                 const SweepOptions& options) {
  grid.validate();
  config.validate();
  if (seeds == 0) {
    throw ConfigError("sweep needs at least one seed");
  }
  if (kind == PolicyKind::oracle) {
    throw ContractError("the oracle policy is not swept");
  }
  const int jobs = static_cast<int>(std::max<std::size_t>(1, options.jobs));

  RunSet set;
  set.policy = kind;
  set.seed_count = seeds;
  set.split = split;
  for (double lambda : grid.lambdas) {
    for (std::size_t s = 0; s < seeds; ++s) {
      RunResult r;
      r.lambda = lambda;
      r.seed = config.seed + s;
      set.runs.push_back(std::move(r));
    }
  }

  const std::vector<QueryRecord> test = subset(dataset, split.test);
  const Matrix test_embeddings = embeddings_of(test);

  // The concept head ignores lambda, so each seed trains it once.
  std::vector<std::optional<HeadResult>> heads(seeds);
  std::vector<std::string> head_errors(seeds);
  if (kind == PolicyKind::bottleneck) {
    const SplitData data = gather_split(dataset, split, {});
#pragma omp parallel for num_threads(jobs) schedule(dynamic)
    for (std::int64_t s = 0; s < static_cast<std::int64_t>(seeds); ++s) {
      const auto idx = static_cast<std::size_t>(s);
      try {
        heads[idx] = train_concept_head(data.train, data.validation, config.concept_head,
                                        mix_seed(config.seed + idx, kConceptHeadSalt));
      } catch (const std::exception& e) {
        head_errors[idx] = e.what();
      }
    }
  }

  std::vector<std::size_t> exec(set.runs.size());
  std::iota(exec.begin(), exec.end(), 0);
  if (options.order_seed != 0) {
    Rng rng(options.order_seed);
    rng.shuffle(std::span<std::size_t>(exec));
  }

#pragma omp parallel for num_threads(jobs) schedule(dynamic)
  for (std::int64_t e = 0; e < static_cast<std::int64_t>(exec.size()); ++e) {
    RunResult& run = set.runs[exec[static_cast<std::size_t>(e)]];
    const std::size_t seed_index = static_cast<std::size_t>(run.seed - config.seed);
    try {
      TrainConfig cfg = config;
      cfg.lambda = run.lambda;
      cfg.seed = run.seed;
      TrainedPolicy tp;
      if (kind == PolicyKind::bottleneck) {
        if (!heads[seed_index]) {
          throw TrainingError("concept head failed: " + head_errors[seed_index]);
        }
        tp = train_bottleneck_with_concept_head(dataset, split, cfg, *heads[seed_index]);
      } else {
        tp = train_policy(kind, dataset, split, cfg);
      }
      const auto decisions = route_batch(tp.checkpoint.policy, test_embeddings);
      run.accuracy = routing_accuracy(decisions, test);
      run.mean_cost = mean_routed_cost(decisions, test, dataset.catalog());
      run.assignment_share = assignment_share(decisions, dataset.catalog().size());
      run.curves = std::move(tp.curves);
      if (options.keep_checkpoints) {
        run.checkpoint = std::move(tp.checkpoint);
      }
      run.ok = true;
    } catch (const std::exception& ex) {
      run.ok = false;
      run.error = ex.what();
    }
  }
  return set;
}

}  // namespace cbr
