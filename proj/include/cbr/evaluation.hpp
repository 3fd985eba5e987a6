#pragma once

// Routing metrics, Pareto frontiers, concept metrics and the ablation,
// intervention, counterfactual and assignment-share studies.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbr/dataset.hpp"
#include "cbr/routers.hpp"
#include "cbr/stats.hpp"
#include "cbr/training.hpp"

namespace cbr {

std::vector<QueryRecord> subset(const Dataset& dataset, std::span<const std::size_t> indices);
Matrix embeddings_of(std::span<const QueryRecord> records);

// Mean of correctness[chosen]. Decisions index the catalog.
double routing_accuracy(std::span<const std::size_t> decisions,
                        std::span<const QueryRecord> records);
// Mean raw (currency) cost of the chosen models.
double mean_routed_cost(std::span<const std::size_t> decisions,
                        std::span<const QueryRecord> records, const ModelCatalog& catalog);

// Oracle choice per record; records with no correct model yield nullopt.
std::vector<std::optional<std::size_t>> oracle_decisions(std::span<const QueryRecord> records,
                                                         const ModelCatalog& catalog);
// Unanswerable records count as incorrect.
double oracle_accuracy(std::span<const QueryRecord> records, const ModelCatalog& catalog);
// Unanswerable records are charged the cheapest model's cost.
double oracle_mean_cost(std::span<const QueryRecord> records, const ModelCatalog& catalog);

std::vector<double> assignment_share(std::span<const std::size_t> decisions,
                                     std::size_t n_models);

struct FrontierPoint {
  double lambda = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double cost_mean = 0.0;
  double cost_std = 0.0;
  std::size_t seed_count = 1;

  bool operator==(const FrontierPoint&) const = default;
};

// Non-dominated points sorted by cost (ascending), accuracy as tie-break.
std::vector<FrontierPoint> pareto_frontier(std::span<const FrontierPoint> points);

// Mean/std over seeds for each lambda of a sweep (failed runs skipped).
std::vector<FrontierPoint> aggregate_runs(const RunSet& runs);

struct GroupMetrics {
  std::string group;
  ConceptKind kind = ConceptKind::binary;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  bool no_positives = false;  // gold has no positives: recall reported as 0
  bool no_predicted_positives = false;  // precision reported as 0
};

// Binary groups thresholded at 0.5 and micro-averaged; complexity as reals.
std::vector<GroupMetrics> concept_metrics(const Matrix& predictions, const Matrix& gold,
                                          const ConceptSchema& schema);

struct StudyRow {
  std::string condition;
  double lambda = 0.0;
  std::size_t seed_count = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double cost_mean = 0.0;
  double cost_std = 0.0;
  double delta_pp = 0.0;  // accuracy change vs. the baseline row, percentage points
  std::vector<double> accuracies;  // per seed
};

struct StudyReport {
  std::string kind;  // ablation | intervention | counterfactual | assignment_share
  std::string policy = "bottleneck";
  std::vector<StudyRow> rows;
};

inline const std::vector<double> kStudyLambdas{0.0, 0.1, 4.0};

// Retrains h and g without each named group and compares against the full
// schema at each lambda, over seeds config.seed, config.seed + 1, ...
StudyReport ablation_study(const Dataset& dataset, const DatasetSplit& split,
                           const std::vector<std::string>& groups,
                           std::span<const double> lambdas, std::size_t seeds,
                           const TrainConfig& config);

// Gold slice of `group` substituted at inference for every record; one
// router per seed. lambda labels the rows.
StudyReport intervention_study(std::span<const BottleneckRouter> routers,
                               std::span<const QueryRecord> records, const std::string& group,
                               double lambda = 0.0);

struct CounterfactualConfig {
  std::string source_language;
  std::string target_language;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> target_models;  // designated top target-language models
  // Fixed labels for the other groups; empty picks each group's first label.
  std::string task;
  std::string natural_language;
  std::string domain;
};

struct CounterfactualResult {
  double probability_delta_pp = 0.0;  // aggregated softmax mass of target models
  double rank_improvement = 0.0;      // mean rank(source) - mean rank(target)
  double source_probability = 0.0;
  double target_probability = 0.0;
  std::size_t samples = 0;
  // Per-sample decisions before and after the flip.
  std::vector<std::size_t> source_decisions;
  std::vector<std::size_t> target_decisions;
};

// Builds concept-vector pairs differing only in the programming-language
// bit and measures how selection shifts toward the target models.
CounterfactualResult counterfactual_flip_study(const BottleneckRouter& router,
                                               const CounterfactualConfig& config);

// Models whose planted effect on group/label is positive, strongest first.
std::vector<std::size_t> planted_specialists(const GeneratorSpec& spec, const std::string& group,
                                             const std::string& label, std::size_t top = 3);

struct ThroughputResult {
  std::size_t queries = 0;
  std::size_t repetitions = 0;
  double mean_seconds = 0.0;
  double best_seconds = 0.0;
  double queries_per_second = 0.0;  // from the best repetition
};

ThroughputResult throughput_benchmark(const Policy& policy, const Matrix& embeddings,
                                      std::size_t repetitions, bool parallel = false);

// Tabular reports. Columns: lambda, seed_count, acc_mean, acc_std,
// cost_mean, cost_std, policy, condition.
void write_frontier_tsv(const std::filesystem::path& path, std::span<const FrontierPoint> points,
                        const std::string& policy, const std::string& condition);
void write_study_tsv(const std::filesystem::path& path, const StudyReport& report);
// Columns: lambda, seed_count, policy, model, share_mean, share_std.
void write_assignment_tsv(const std::filesystem::path& path, const RunSet& runs,
                          const ModelCatalog& catalog);

}  // namespace cbr
