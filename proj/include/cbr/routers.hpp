#pragma once

// Routing policies. The bottleneck router routes through an explicit concept
// vector (h: embedding -> concepts, g: concepts -> suitability); the
// baselines map embeddings straight to per-model scores.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cbr/dataset.hpp"
#include "cbr/numerics.hpp"

namespace cbr {

struct BottleneckRouter {
  DenseParams concept_head;      // d -> hidden -> k
  DenseParams suitability_head;  // k -> hidden -> n
  ConceptSchema schema;
  ModelCatalog catalog;

  bool operator==(const BottleneckRouter&) const = default;
};

struct BlackBoxRouter {
  DenseParams head;  // d -> hidden -> n
  ModelCatalog catalog;

  bool operator==(const BlackBoxRouter&) const = default;
};

struct KnnRouter {
  Matrix embeddings;   // stored training rows
  Matrix correctness;  // stored labels, 0/1 per model
  std::size_t neighbors = 20;
  ModelCatalog catalog;

  bool operator==(const KnnRouter&) const = default;
};

// Query projection dotted with a learned per-model embedding.
struct FactorizationRouter {
  DenseParams projection;   // d -> hidden -> e
  Matrix model_embeddings;  // n x e
  ModelCatalog catalog;

  bool operator==(const FactorizationRouter&) const = default;
};

// Uniform random scores derived from (seed, embedding bytes), so a query
// always gets the same choice for a given seed.
struct RandomRouter {
  std::uint64_t seed = 0;
  ModelCatalog catalog;

  bool operator==(const RandomRouter&) const = default;
};

// Hindsight policy; needs labels, so it cannot route a bare embedding.
struct OracleRouter {
  ModelCatalog catalog;

  bool operator==(const OracleRouter&) const = default;
};

using Policy = std::variant<BottleneckRouter, BlackBoxRouter, KnnRouter, FactorizationRouter,
                            RandomRouter, OracleRouter>;

enum class PolicyKind { bottleneck, blackbox, knn, factorization, random, oracle };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);
PolicyKind kind_of(const Policy& policy);
const ModelCatalog& catalog_of(const Policy& policy);

struct GroupRationale {
  std::string group;
  std::vector<std::string> active;  // binary labels above 0.5
  Vector values;                    // raw values of continuous groups
  bool intervened = false;
};

struct RoutingDecision {
  std::size_t model_index = 0;
  std::string model_name;
  Vector scores;                        // per-model suitability in (0, 1)
  std::optional<Vector> concepts;       // bottleneck only
  std::optional<std::vector<GroupRationale>> rationale;  // bottleneck only
};

// Index of the maximum; ties go to the lowest index.
std::size_t argmax_first(std::span<const double> scores);

Vector predict_concepts(const BottleneckRouter& router, std::span<const double> embedding);
Matrix predict_concepts_batch(const BottleneckRouter& router, const Matrix& embeddings,
                              bool parallel = false);

Vector suitability_logits(const BottleneckRouter& router, std::span<const double> concepts);
Vector suitability_from_concepts(const BottleneckRouter& router, std::span<const double> concepts);

std::vector<GroupRationale> make_rationale(const ConceptSchema& schema,
                                           std::span<const double> concepts,
                                           const std::string& intervened_group = {});

// Decision computed from an explicit concept vector (predicted, gold or
// edited). This is the only path from concepts to a bottleneck decision.
RoutingDecision decide_from_concepts(const BottleneckRouter& router, Vector concepts,
                                     const std::string& intervened_group = {});

RoutingDecision route(const Policy& policy, std::span<const double> embedding);

// Overwrites one group's slice of the predicted concepts before deciding.
RoutingDecision route_with_intervention(const BottleneckRouter& router,
                                        std::span<const double> embedding,
                                        const std::string& group,
                                        std::span<const double> override_values);

Vector knn_predict(const KnnRouter& router, std::span<const double> embedding);
Vector factorization_logits(const FactorizationRouter& router, std::span<const double> embedding);
Vector factorization_predict(const FactorizationRouter& router, std::span<const double> embedding);
Vector random_scores(const RandomRouter& router, std::span<const double> embedding);

// Per-model suitability for every row. Oracle policies throw ContractError.
Matrix score_batch(const Policy& policy, const Matrix& embeddings, bool parallel = false);
std::vector<std::size_t> route_batch(const Policy& policy, const Matrix& embeddings,
                                     bool parallel = false);

// Cheapest correct model, or nothing when every model failed.
std::optional<std::size_t> oracle_assign(std::span<const std::uint8_t> correctness,
                                         std::span<const double> raw_costs);

// Trainable scalar parameters, biases included. Non-parametric policies
// report zero.
std::size_t param_count(const Policy& policy);
std::size_t param_count(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim);

}  // namespace cbr
