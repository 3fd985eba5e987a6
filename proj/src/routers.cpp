#include "cbr/routers.hpp"

#include <algorithm>
#include <cstring>

#include "cbr/errors.hpp"
#include "cbr/kernels.hpp"
#include "cbr/rng.hpp"

namespace cbr {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_width(std::size_t got, std::size_t expected, const char* what) {
  if (got != expected) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(expected) +
                     ", got " + std::to_string(got));
  }
}

void require_loaded(const BottleneckRouter& r) {
  if (r.concept_head.in_dim() == 0 || r.suitability_head.in_dim() == 0) {
    throw StateError("bottleneck router is not loaded");
  }
  if (r.concept_head.out_dim() != r.schema.width() ||
      r.suitability_head.in_dim() != r.schema.width() ||
      r.suitability_head.out_dim() != r.catalog.size()) {
    throw ShapeError("bottleneck router heads do not match schema/catalog widths");
  }
}

Vector forward_one(const DenseParams& params, std::span<const double> input) {
  Matrix x(1, input.size());
  std::copy(input.begin(), input.end(), x.row(0).begin());
  Matrix out = kernels::forward_serial(params, x);
  auto row = out.row(0);
  return Vector(row.begin(), row.end());
}

Vector sigmoid_all(Vector v) {
  for (double& x : v) {
    x = sigmoid(x);
  }
  return v;
}

RoutingDecision plain_decision(const ModelCatalog& catalog, Vector scores) {
  RoutingDecision d;
  d.model_index = argmax_first(scores);
  d.model_name = catalog.models.at(d.model_index).name;
  d.scores = std::move(scores);
  return d;
}

}  // namespace

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::bottleneck: return "bottleneck";
    case PolicyKind::blackbox: return "blackbox";
    case PolicyKind::knn: return "knn";
    case PolicyKind::factorization: return "factorization";
    case PolicyKind::random: return "random";
    case PolicyKind::oracle: return "oracle";
  }
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  for (auto kind : {PolicyKind::bottleneck, PolicyKind::blackbox, PolicyKind::knn,
                    PolicyKind::factorization, PolicyKind::random, PolicyKind::oracle}) {
    if (to_string(kind) == name) {
      return kind;
    }
  }
  throw ConfigError("unknown policy '" + name + "'");
}

PolicyKind kind_of(const Policy& policy) { return static_cast<PolicyKind>(policy.index()); }

const ModelCatalog& catalog_of(const Policy& policy) {
  return std::visit([](const auto& p) -> const ModelCatalog& { return p.catalog; }, policy);
}

std::size_t argmax_first(std::span<const double> scores) {
  if (scores.empty()) {
    throw ShapeError("argmax of empty score vector");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) {
      best = i;
    }
  }
  return best;
}

Vector predict_concepts(const BottleneckRouter& router, std::span<const double> embedding) {
  require_loaded(router);
  require_width(embedding.size(), router.concept_head.in_dim(), "predict_concepts");
  return sigmoid_all(forward_one(router.concept_head, embedding));
}

Matrix predict_concepts_batch(const BottleneckRouter& router, const Matrix& embeddings,
                              bool parallel) {
  require_loaded(router);
  Matrix out = parallel ? kernels::forward_parallel(router.concept_head, embeddings)
                        : kernels::forward_serial(router.concept_head, embeddings);
  kernels::sigmoid_inplace(out);
  return out;
}

Vector suitability_logits(const BottleneckRouter& router, std::span<const double> concepts) {
  require_loaded(router);
  require_width(concepts.size(), router.schema.width(), "suitability_from_concepts");
  return forward_one(router.suitability_head, concepts);
}

Vector suitability_from_concepts(const BottleneckRouter& router,
                                 std::span<const double> concepts) {
  return sigmoid_all(suitability_logits(router, concepts));
}

std::vector<GroupRationale> make_rationale(const ConceptSchema& schema,
                                           std::span<const double> concepts,
                                           const std::string& intervened_group) {
  require_width(concepts.size(), schema.width(), "rationale");
  std::vector<GroupRationale> out;
  for (const auto& g : schema.groups()) {
    GroupRationale r;
    r.group = g.name;
    r.intervened = g.name == intervened_group;
    for (std::size_t l = 0; l < g.width(); ++l) {
      const double v = concepts[g.offset + l];
      if (g.kind == ConceptKind::binary) {
        if (v > 0.5) {
          r.active.push_back(g.labels[l]);
        }
      } else {
        r.values.push_back(v);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

RoutingDecision decide_from_concepts(const BottleneckRouter& router, Vector concepts,
                                     const std::string& intervened_group) {
  RoutingDecision d = plain_decision(router.catalog, suitability_from_concepts(router, concepts));
  d.rationale = make_rationale(router.schema, concepts, intervened_group);
  d.concepts = std::move(concepts);
  return d;
}

Vector knn_predict(const KnnRouter& router, std::span<const double> embedding) {
  if (router.embeddings.rows() == 0) {
    throw StateError("knn router has no training data");
  }
  Matrix q(1, embedding.size());
  std::copy(embedding.begin(), embedding.end(), q.row(0).begin());
  Matrix s = kernels::knn_scores_serial(router.embeddings, router.correctness, q,
                                        router.neighbors);
  auto row = s.row(0);
  return Vector(row.begin(), row.end());
}

Vector factorization_logits(const FactorizationRouter& router,
                            std::span<const double> embedding) {
  if (router.projection.in_dim() == 0) {
    throw StateError("factorization router is not loaded");
  }
  require_width(embedding.size(), router.projection.in_dim(), "factorization_predict");
  if (router.model_embeddings.cols() != router.projection.out_dim()) {
    throw ShapeError("factorization: projection width does not match model embeddings");
  }
  const Vector q = forward_one(router.projection, embedding);
  Vector logits(router.model_embeddings.rows());
  for (std::size_t m = 0; m < logits.size(); ++m) {
    auto e = router.model_embeddings.row(m);
    double dot = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      dot += q[j] * e[j];
    }
    logits[m] = dot;
  }
  return logits;
}

Vector factorization_predict(const FactorizationRouter& router,
                             std::span<const double> embedding) {
  return sigmoid_all(factorization_logits(router, embedding));
}

Vector random_scores(const RandomRouter& router, std::span<const double> embedding) {
  const std::string_view bytes(reinterpret_cast<const char*>(embedding.data()),
                               embedding.size() * sizeof(double));
  Rng rng(mix_seed(router.seed, fnv1a(bytes)));
  Vector scores(router.catalog.size());
  for (double& s : scores) {
    // Keep scores strictly inside (0, 1).
    s = (rng.uniform() + 0x1.0p-54) * (1.0 - 0x1.0p-53);
  }
  return scores;
}

RoutingDecision route(const Policy& policy, std::span<const double> embedding) {
  return std::visit(
      overloaded{
          [&](const BottleneckRouter& r) {
            return decide_from_concepts(r, predict_concepts(r, embedding));
          },
          [&](const BlackBoxRouter& r) {
            if (r.head.in_dim() == 0) {
              throw StateError("black-box router is not loaded");
            }
            require_width(embedding.size(), r.head.in_dim(), "route");
            return plain_decision(r.catalog, sigmoid_all(forward_one(r.head, embedding)));
          },
          [&](const KnnRouter& r) { return plain_decision(r.catalog, knn_predict(r, embedding)); },
          [&](const FactorizationRouter& r) {
            return plain_decision(r.catalog, factorization_predict(r, embedding));
          },
          [&](const RandomRouter& r) {
            if (r.catalog.size() == 0) {
              throw StateError("random router has no catalog");
            }
            return plain_decision(r.catalog, random_scores(r, embedding));
          },
          [&](const OracleRouter&) -> RoutingDecision {
            throw ContractError("the oracle policy needs correctness labels and cannot route");
          },
      },
      policy);
}

RoutingDecision route_with_intervention(const BottleneckRouter& router,
                                        std::span<const double> embedding,
                                        const std::string& group,
                                        std::span<const double> override_values) {
  const ConceptGroup& g = router.schema.group(group);
  require_width(override_values.size(), g.width(), "intervention override");
  for (double v : override_values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValueError("intervention override entries must lie in [0, 1]");
    }
  }
  Vector concepts = predict_concepts(router, embedding);
  std::copy(override_values.begin(), override_values.end(),
            concepts.begin() + static_cast<std::ptrdiff_t>(g.offset));
  return decide_from_concepts(router, std::move(concepts), group);
}

Matrix score_batch(const Policy& policy, const Matrix& embeddings, bool parallel) {
  return std::visit(
      overloaded{
          [&](const BottleneckRouter& r) {
            Matrix concepts = predict_concepts_batch(r, embeddings, parallel);
            Matrix s = parallel ? kernels::forward_parallel(r.suitability_head, concepts)
                                : kernels::forward_serial(r.suitability_head, concepts);
            kernels::sigmoid_inplace(s);
            return s;
          },
          [&](const BlackBoxRouter& r) {
            if (r.head.in_dim() == 0) {
              throw StateError("black-box router is not loaded");
            }
            Matrix s = parallel ? kernels::forward_parallel(r.head, embeddings)
                                : kernels::forward_serial(r.head, embeddings);
            kernels::sigmoid_inplace(s);
            return s;
          },
          [&](const KnnRouter& r) {
            return parallel ? kernels::knn_scores_parallel(r.embeddings, r.correctness,
                                                           embeddings, r.neighbors)
                            : kernels::knn_scores_serial(r.embeddings, r.correctness,
                                                         embeddings, r.neighbors);
          },
          [&](const FactorizationRouter& r) {
            Matrix s(embeddings.rows(), r.catalog.size());
            for (std::size_t i = 0; i < embeddings.rows(); ++i) {
              const Vector p = factorization_predict(r, embeddings.row(i));
              std::copy(p.begin(), p.end(), s.row(i).begin());
            }
            return s;
          },
          [&](const RandomRouter& r) {
            Matrix s(embeddings.rows(), r.catalog.size());
            for (std::size_t i = 0; i < embeddings.rows(); ++i) {
              const Vector p = random_scores(r, embeddings.row(i));
              std::copy(p.begin(), p.end(), s.row(i).begin());
            }
            return s;
          },
          [&](const OracleRouter&) -> Matrix {
            throw ContractError("the oracle policy needs correctness labels and cannot route");
          },
      },
      policy);
}

std::vector<std::size_t> route_batch(const Policy& policy, const Matrix& embeddings,
                                     bool parallel) {
  const Matrix scores = score_batch(policy, embeddings, parallel);
  std::vector<std::size_t> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    out[i] = argmax_first(scores.row(i));
  }
  return out;
}

std::optional<std::size_t> oracle_assign(std::span<const std::uint8_t> correctness,
                                         std::span<const double> raw_costs) {
  require_width(raw_costs.size(), correctness.size(), "oracle_assign");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < correctness.size(); ++i) {
    if (correctness[i] != 0 && (!best || raw_costs[i] < raw_costs[*best])) {
      best = i;
    }
  }
  return best;
}

std::size_t param_count(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim) {
  return in_dim * hidden_dim + hidden_dim + hidden_dim * out_dim + out_dim;
}

std::size_t param_count(const Policy& policy) {
  return std::visit(
      overloaded{
          [](const BottleneckRouter& r) {
            return r.concept_head.param_count() + r.suitability_head.param_count();
          },
          [](const BlackBoxRouter& r) { return r.head.param_count(); },
          [](const KnnRouter&) { return std::size_t{0}; },
          [](const FactorizationRouter& r) {
            return r.projection.param_count() + r.model_embeddings.size();
          },
          [](const RandomRouter&) { return std::size_t{0}; },
          [](const OracleRouter&) { return std::size_t{0}; },
      },
      policy);
}

}  // namespace cbr
