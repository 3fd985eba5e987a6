#pragma once

// Loss assembly, epoch loops with validation-based snapshot selection, and
// the multi-seed lambda sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cbr/checkpoint.hpp"
#include "cbr/dataset.hpp"
#include "cbr/numerics.hpp"
#include "cbr/routers.hpp"

namespace cbr {

struct HeadConfig {
  std::size_t hidden_dim = 256;
  double dropout = 0.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;

  void validate(const std::string& name) const;
};

struct TrainConfig {
  HeadConfig concept_head{256, 0.1, 1e-3, 24};
  HeadConfig suitability_head{176, 0.0, 1e-3, 8};
  HeadConfig blackbox_head{384, 0.2, 1e-3, 8};
  HeadConfig factorization_head{512, 0.0, 1e-3, 32};
  std::size_t model_embedding_dim = 128;
  std::size_t knn_neighbors = 20;
  double lambda = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
// Fields absent from j keep the values in base.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Dense views of a record subset.
struct TrainingData {
  Matrix embeddings;
  Matrix concepts;
  Matrix correctness;
  Matrix normalized_costs;
  Matrix raw_costs;

  std::size_t size() const { return embeddings.rows(); }
};

// Gathers the given records; when concept_indices is set only those concept
// columns are kept (used for ablations).
TrainingData gather(const Dataset& dataset, std::span<const std::size_t> indices,
                    const std::vector<std::size_t>* concept_indices = nullptr);

// softmax(logits) . normalized_costs
double cost_term(std::span<const double> logits, std::span<const double> normalized_costs);

// Mean BCE over batch and outputs of sigmoid(logits) against targets. When
// grad is non-null it receives dLoss/dLogits.
double bce_from_logits(const Matrix& logits, const Matrix& targets, Matrix* grad);

// bce_from_logits + lambda * mean over rows of cost_term. With lambda == 0
// the cost term is skipped entirely.
double composite_loss(const Matrix& logits, const Matrix& targets, const Matrix& costs,
                      double lambda, Matrix* grad);

struct CurvePoint {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainingCurve {
  std::string head;
  std::vector<CurvePoint> points;  // epoch 0 is the untrained snapshot
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
};

struct HeadResult {
  DenseParams params;
  TrainingCurve curve;
};

HeadResult train_concept_head(const TrainingData& train, const TrainingData& validation,
                              const HeadConfig& config, std::uint64_t seed);

// Inputs are the gold concept vectors; targets the correctness labels.
HeadResult train_suitability_head(const TrainingData& train, const TrainingData& validation,
                                  const HeadConfig& config, double lambda, std::uint64_t seed);

HeadResult train_blackbox_head(const TrainingData& train, const TrainingData& validation,
                               const HeadConfig& config, double lambda, std::uint64_t seed);

struct FactorizationResult {
  FactorizationRouter router;
  TrainingCurve curve;
};

FactorizationResult train_factorization(const TrainingData& train, const TrainingData& validation,
                                        const HeadConfig& config, std::size_t embedding_dim,
                                        const ModelCatalog& catalog, std::uint64_t seed);

KnnRouter fit_knn(const TrainingData& train, std::size_t neighbors, const ModelCatalog& catalog);

struct TrainedPolicy {
  Checkpoint checkpoint;
  std::vector<TrainingCurve> curves;
};

// Trains one policy on the split's train part with validation selection.
// ablated_group removes a concept group from the bottleneck.
TrainedPolicy train_policy(PolicyKind kind, const Dataset& dataset, const DatasetSplit& split,
                           const TrainConfig& config, const std::string& ablated_group = {});

// Bottleneck with a pre-trained concept head (sweeps reuse h across lambda,
// since h does not depend on it).
TrainedPolicy train_bottleneck_with_concept_head(const Dataset& dataset, const DatasetSplit& split,
                                                 const TrainConfig& config,
                                                 const HeadResult& concept_head,
                                                 const std::string& ablated_group = {});

struct SweepGrid {
  std::vector<double> lambdas;

  // {0.0, 0.1, ..., 0.9} followed by {1, 2, ..., 10}.
  static SweepGrid default_grid();
  static SweepGrid parse(const std::string& text);  // "default" or comma list
  void validate() const;
};

struct RunResult {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double mean_cost = 0.0;
  std::vector<double> assignment_share;
  std::optional<Checkpoint> checkpoint;
  std::vector<TrainingCurve> curves;
};

struct RunSet {
  PolicyKind policy = PolicyKind::bottleneck;
  std::size_t seed_count = 0;
  DatasetSplit split;
  std::vector<RunResult> runs;  // lambda-major, seed-minor

  std::size_t failed() const;
};

struct SweepOptions {
  std::size_t jobs = 1;
  bool keep_checkpoints = false;
  // Run order permutation seed; 0 keeps grid order. Results are stored in
  // grid order regardless.
  std::uint64_t order_seed = 0;
};

// Trains every (lambda, seed) pair independently and evaluates it on the
// split's test part. Seeds are config.seed, config.seed + 1, ...
RunSet run_sweep(const Dataset& dataset, const DatasetSplit& split, const SweepGrid& grid,
                 std::size_t seeds, PolicyKind kind, const TrainConfig& config,
                 const SweepOptions& options = {});

}  // namespace cbr
