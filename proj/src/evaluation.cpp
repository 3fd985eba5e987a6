#include "cbr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "cbr/errors.hpp"
#include "cbr/kernels.hpp"
#include "cbr/rng.hpp"

namespace cbr {

std::vector<QueryRecord> subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<QueryRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    out.push_back(dataset.records.at(i));
  }
  return out;
}

Matrix embeddings_of(std::span<const QueryRecord> records) {
  if (records.empty()) {
    return {};
  }
  Matrix m(records.size(), records.front().embedding.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].embedding.size() != m.cols()) {
      throw ShapeError("record " + records[i].id + " has a different embedding width");
    }
    std::copy(records[i].embedding.begin(), records[i].embedding.end(), m.row(i).begin());
  }
  return m;
}

namespace {

void check_decisions(std::span<const std::size_t> decisions,
                     std::span<const QueryRecord> records) {
  if (decisions.size() != records.size()) {
    throw ShapeError("decision count differs from record count");
  }
  if (records.empty()) {
    throw SizeError("no records to evaluate");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (decisions[i] >= records[i].correctness.size()) {
      throw ContractError("decision " + std::to_string(decisions[i]) + " for record " +
                          records[i].id + " is outside the catalog");
    }
  }
}

}  // namespace

double routing_accuracy(std::span<const std::size_t> decisions,
                        std::span<const QueryRecord> records) {
  check_decisions(decisions, records);
  double correct = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    correct += records[i].correctness[decisions[i]];
  }
  return correct / static_cast<double>(records.size());
}

double mean_routed_cost(std::span<const std::size_t> decisions,
                        std::span<const QueryRecord> records, const ModelCatalog& catalog) {
  check_decisions(decisions, records);
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    total += cost_vector(records[i], catalog).at(decisions[i]);
  }
  return total / static_cast<double>(records.size());
}

std::vector<std::optional<std::size_t>> oracle_decisions(std::span<const QueryRecord> records,
                                                         const ModelCatalog& catalog) {
  std::vector<std::optional<std::size_t>> out;
  out.reserve(records.size());
  for (const QueryRecord& r : records) {
    out.push_back(oracle_assign(r.correctness, cost_vector(r, catalog)));
  }
  return out;
}

double oracle_accuracy(std::span<const QueryRecord> records, const ModelCatalog& catalog) {
  if (records.empty()) {
    throw SizeError("no records to evaluate");
  }
  const auto d = oracle_decisions(records, catalog);
  const auto answered = std::count_if(d.begin(), d.end(), [](const auto& x) { return x.has_value(); });
  return static_cast<double>(answered) / static_cast<double>(records.size());
}

double oracle_mean_cost(std::span<const QueryRecord> records, const ModelCatalog& catalog) {
  if (records.empty()) {
    throw SizeError("no records to evaluate");
  }
  double total = 0.0;
  for (const QueryRecord& r : records) {
    const Vector costs = cost_vector(r, catalog);
    const auto pick = oracle_assign(r.correctness, costs);
    total += pick ? costs[*pick] : *std::min_element(costs.begin(), costs.end());
  }
  return total / static_cast<double>(records.size());
}

std::vector<double> assignment_share(std::span<const std::size_t> decisions,
                                     std::size_t n_models) {
  if (decisions.empty()) {
    throw SizeError("assignment share needs at least one decision");
  }
  std::vector<double> share(n_models, 0.0);
  for (std::size_t d : decisions) {
    if (d >= n_models) {
      throw ShapeError("decision index outside the catalog");
    }
    share[d] += 1.0;
  }
  for (double& s : share) {
    s /= static_cast<double>(decisions.size());
  }
  return share;
}

std::vector<FrontierPoint> pareto_frontier(std::span<const FrontierPoint> points) {
  std::vector<FrontierPoint> sorted(points.begin(), points.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const FrontierPoint& a, const FrontierPoint& b) {
    if (a.cost_mean != b.cost_mean) {
      return a.cost_mean < b.cost_mean;
    }
    return a.accuracy_mean > b.accuracy_mean;
  });
  std::vector<FrontierPoint> out;
  double best = -std::numeric_limits<double>::infinity();
  for (const FrontierPoint& p : sorted) {
    // Cheaper-or-equal points seen so far all have accuracy <= best.
    if (p.accuracy_mean > best) {
      out.push_back(p);
      best = p.accuracy_mean;
    }
  }
  return out;
}

std::vector<FrontierPoint> aggregate_runs(const RunSet& runs) {
  std::vector<FrontierPoint> out;
  std::vector<double> lambdas;
  for (const RunResult& r : runs.runs) {
    if (std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) {
      lambdas.push_back(r.lambda);
    }
  }
  for (double lambda : lambdas) {
    std::vector<double> acc, cost;
    for (const RunResult& r : runs.runs) {
      if (r.ok && r.lambda == lambda) {
        acc.push_back(r.accuracy);
        cost.push_back(r.mean_cost);
      }
    }
    if (acc.empty()) {
      continue;
    }
    out.push_back({lambda, mean(acc), stddev(acc), mean(cost), stddev(cost), acc.size()});
  }
  return out;
}

std::vector<GroupMetrics> concept_metrics(const Matrix& predictions, const Matrix& gold,
                                          const ConceptSchema& schema) {
  if (predictions.rows() != gold.rows() || predictions.cols() != gold.cols() ||
      gold.cols() != schema.width()) {
    throw ShapeError("concept metrics: predictions, gold and schema widths differ");
  }
  if (gold.rows() == 0) {
    throw SizeError("concept metrics: no rows");
  }
  std::vector<GroupMetrics> out;
  for (const ConceptGroup& g : schema.groups()) {
    GroupMetrics m;
    m.group = g.name;
    m.kind = g.kind;
    double tp = 0, fp = 0, fn = 0, tn = 0, se = 0, ae = 0;
    for (std::size_t r = 0; r < gold.rows(); ++r) {
      for (std::size_t c = g.offset; c < g.offset + g.width(); ++c) {
        const double p = predictions(r, c);
        const double t = gold(r, c);
        se += (p - t) * (p - t);
        ae += std::abs(p - t);
        const bool pp = p > 0.5;
        const bool tt = t > 0.5;
        tp += pp && tt;
        fp += pp && !tt;
        fn += !pp && tt;
        tn += !pp && !tt;
      }
    }
    const double cells = static_cast<double>(gold.rows() * g.width());
    m.mse = se / cells;
    m.mae = ae / cells;
    if (g.kind == ConceptKind::binary) {
      m.accuracy = (tp + tn) / cells;
      m.no_predicted_positives = tp + fp == 0;
      m.no_positives = tp + fn == 0;
      m.precision = m.no_predicted_positives ? 0.0 : tp / (tp + fp);
      m.recall = m.no_positives ? 0.0 : tp / (tp + fn);
      m.f1 = m.precision + m.recall > 0.0
                 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                 : 0.0;
    }
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

StudyRow make_row(std::string condition, double lambda, std::vector<double> acc,
                  const std::vector<double>& cost) {
  StudyRow row;
  row.condition = std::move(condition);
  row.lambda = lambda;
  row.seed_count = acc.size();
  row.accuracy_mean = mean(acc);
  row.accuracy_std = stddev(acc);
  row.cost_mean = mean(cost);
  row.cost_std = stddev(cost);
  row.accuracies = std::move(acc);
  return row;
}

}  // namespace

StudyReport ablation_study(const Dataset& dataset, const DatasetSplit& split,
                           const std::vector<std::string>& groups,
                           std::span<const double> lambdas, std::size_t seeds,
                           const TrainConfig& config) {
  if (groups.empty()) {
    throw ConfigError("ablation needs at least one group");
  }
  if (seeds == 0 || lambdas.empty()) {
    throw ConfigError("ablation needs at least one seed and one lambda");
  }
  for (const std::string& g : groups) {
    if (dataset.schema().without(g).width() == 0) {
      throw ConfigError("removing '" + g + "' leaves no concepts");
    }
  }
  const std::vector<QueryRecord> test = subset(dataset, split.test);
  const Matrix test_x = embeddings_of(test);

  std::vector<std::string> conditions{""};
  conditions.insert(conditions.end(), groups.begin(), groups.end());

  // acc[c][l][s], cost[c][l][s]
  const std::size_t nc = conditions.size(), nl = lambdas.size();
  std::vector<double> acc(nc * nl * seeds), cost(nc * nl * seeds);
  auto at = [&](std::size_t c, std::size_t l, std::size_t s) { return (c * nl + l) * seeds + s; };

  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<std::size_t> kept;
    const std::vector<std::size_t>* keep = nullptr;
    if (!conditions[c].empty()) {
      kept = dataset.schema().indices_without(conditions[c]);
      keep = &kept;
    }
    const TrainingData train = gather(dataset, split.train, keep);
    const TrainingData val = gather(dataset, split.validation, keep);
    for (std::size_t s = 0; s < seeds; ++s) {
      TrainConfig cfg = config;
      cfg.seed = config.seed + s;
      const HeadResult h = train_concept_head(train, val, cfg.concept_head,
                                              mix_seed(cfg.seed, 11));
      for (std::size_t l = 0; l < nl; ++l) {
        cfg.lambda = lambdas[l];
        const TrainedPolicy tp =
            train_bottleneck_with_concept_head(dataset, split, cfg, h, conditions[c]);
        const auto decisions = route_batch(tp.checkpoint.policy, test_x);
        acc[at(c, l, s)] = routing_accuracy(decisions, test);
        cost[at(c, l, s)] = mean_routed_cost(decisions, test, dataset.catalog());
      }
    }
  }

  StudyReport report;
  report.kind = "ablation";
  for (std::size_t l = 0; l < nl; ++l) {
    double base = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<double> a(acc.begin() + static_cast<std::ptrdiff_t>(at(c, l, 0)),
                            acc.begin() + static_cast<std::ptrdiff_t>(at(c, l, 0) + seeds));
      std::vector<double> k(cost.begin() + static_cast<std::ptrdiff_t>(at(c, l, 0)),
                            cost.begin() + static_cast<std::ptrdiff_t>(at(c, l, 0) + seeds));
      StudyRow row = make_row(c == 0 ? "full" : "without:" + conditions[c], lambdas[l],
                              std::move(a), k);
      if (c == 0) {
        base = row.accuracy_mean;
      }
      row.delta_pp = 100.0 * (row.accuracy_mean - base);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

StudyReport intervention_study(std::span<const BottleneckRouter> routers,
                               std::span<const QueryRecord> records, const std::string& group,
                               double lambda) {
  if (routers.empty() || records.empty()) {
    throw SizeError("intervention study needs routers and records");
  }
  std::vector<double> base_acc, base_cost, int_acc, int_cost;
  for (const BottleneckRouter& router : routers) {
    const ConceptGroup& g = router.schema.group(group);
    const Matrix x = embeddings_of(records);
    const Matrix predicted = predict_concepts_batch(router, x);
    std::vector<std::size_t> base(records.size()), edited(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].concepts.size() != router.schema.width()) {
        throw ShapeError("record " + records[i].id + " concepts do not match the router schema");
      }
      auto p = predicted.row(i);
      Vector concepts(p.begin(), p.end());
      base[i] = decide_from_concepts(router, concepts).model_index;
      std::copy_n(records[i].concepts.begin() + static_cast<std::ptrdiff_t>(g.offset), g.width(),
                  concepts.begin() + static_cast<std::ptrdiff_t>(g.offset));
      edited[i] = decide_from_concepts(router, std::move(concepts), group).model_index;
    }
    base_acc.push_back(routing_accuracy(base, records));
    base_cost.push_back(mean_routed_cost(base, records, router.catalog));
    int_acc.push_back(routing_accuracy(edited, records));
    int_cost.push_back(mean_routed_cost(edited, records, router.catalog));
  }
  StudyReport report;
  report.kind = "intervention";
  StudyRow predicted_row = make_row("predicted", lambda, base_acc, base_cost);
  StudyRow gold_row = make_row("gold:" + group, lambda, int_acc, int_cost);
  gold_row.delta_pp = 100.0 * (gold_row.accuracy_mean - predicted_row.accuracy_mean);
  report.rows.push_back(std::move(predicted_row));
  report.rows.push_back(std::move(gold_row));
  return report;
}

namespace {

void set_one_hot(const ConceptSchema& schema, Vector& v, const std::string& group,
                 const std::string& label) {
  if (!schema.has_group(group)) {
    return;
  }
  const ConceptGroup& g = schema.group(group);
  const std::string& pick = label.empty() ? g.labels.front() : label;
  v[schema.index_of(group, pick)] = 1.0;
}

Vector softmax(std::span<const double> logits) {
  const double max = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max);
    z += p[i];
  }
  for (double& x : p) {
    x /= z;
  }
  return p;
}

// 1-based rank of model m by descending logit; ties broken by index.
double rank_of(std::span<const double> logits, std::size_t m) {
  std::size_t rank = 1;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (logits[j] > logits[m] || (logits[j] == logits[m] && j < m)) {
      ++rank;
    }
  }
  return static_cast<double>(rank);
}

}  // namespace

CounterfactualResult counterfactual_flip_study(const BottleneckRouter& router,
                                               const CounterfactualConfig& config) {
  const ConceptSchema& schema = router.schema;
  const std::size_t source = schema.index_of("programming_languages", config.source_language);
  const std::size_t target = schema.index_of("programming_languages", config.target_language);
  if (config.samples == 0) {
    throw ConfigError("counterfactual study needs at least one sample");
  }
  if (config.target_models.empty()) {
    throw ConfigError("counterfactual study needs designated target models");
  }
  for (std::size_t m : config.target_models) {
    if (m >= router.catalog.size()) {
      throw ConfigError("target model index outside the catalog");
    }
  }

  std::size_t n_reasoning = 0;
  for (const ModelEntry& e : router.catalog.models) {
    n_reasoning += e.is_reasoning;
  }
  const double n_models = static_cast<double>(router.catalog.size());

  Vector base(schema.width(), 0.0);
  set_one_hot(schema, base, "tasks", config.task);
  set_one_hot(schema, base, "natural_languages", config.natural_language);
  set_one_hot(schema, base, "domains", config.domain);

  Rng rng(config.seed);
  CounterfactualResult result;
  result.samples = config.samples;
  double p_source = 0.0, p_target = 0.0, r_source = 0.0, r_target = 0.0;
  for (std::size_t s = 0; s < config.samples; ++s) {
    Vector v = base;
    if (schema.has_group("complexity")) {
      const ConceptGroup& c = schema.group("complexity");
      const double reasoning = rng.uniform();
      const double general = rng.uniform();
      v[c.offset] = reasoning;
      v[c.offset + 1] = general;
      v[c.offset + 2] = (static_cast<double>(n_reasoning) * reasoning +
                         (n_models - static_cast<double>(n_reasoning)) * general) /
                        n_models;
    }
    Vector vs = v, vt = v;
    vs[source] = 1.0;
    vt[target] = 1.0;
    const Vector ls = suitability_logits(router, vs);
    const Vector lt = suitability_logits(router, vt);
    const Vector ps = softmax(ls), pt = softmax(lt);
    for (std::size_t m : config.target_models) {
      p_source += ps[m];
      p_target += pt[m];
      r_source += rank_of(ls, m);
      r_target += rank_of(lt, m);
    }
    result.source_decisions.push_back(argmax_first(ls));
    result.target_decisions.push_back(argmax_first(lt));
  }
  const double n = static_cast<double>(config.samples);
  const double per_rank = n * static_cast<double>(config.target_models.size());
  result.source_probability = p_source / n;
  result.target_probability = p_target / n;
  result.probability_delta_pp = 100.0 * (result.target_probability - result.source_probability);
  result.rank_improvement = r_source / per_rank - r_target / per_rank;
  return result;
}

std::vector<std::size_t> planted_specialists(const GeneratorSpec& spec, const std::string& group,
                                             const std::string& label, std::size_t top) {
  const std::string key = group + "/" + label;
  std::vector<std::pair<double, std::size_t>> effects;
  for (std::size_t m = 0; m < spec.models.size(); ++m) {
    const auto it = spec.models[m].effects.find(key);
    if (it != spec.models[m].effects.end() && it->second > 0.0) {
      effects.emplace_back(-it->second, m);
    }
  }
  std::sort(effects.begin(), effects.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < effects.size() && i < top; ++i) {
    out.push_back(effects[i].second);
  }
  return out;
}

ThroughputResult throughput_benchmark(const Policy& policy, const Matrix& embeddings,
                                      std::size_t repetitions, bool parallel) {
  if (repetitions == 0) {
    throw ConfigError("throughput benchmark needs at least one repetition");
  }
  ThroughputResult r;
  r.queries = embeddings.rows();
  r.repetitions = repetitions;
  r.best_seconds = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const auto decisions = route_batch(policy, embeddings, parallel);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (decisions.size() != embeddings.rows()) {
      throw StateError("throughput benchmark: decision count mismatch");
    }
    total += elapsed.count();
    r.best_seconds = std::min(r.best_seconds, elapsed.count());
  }
  r.mean_seconds = total / static_cast<double>(repetitions);
  r.queries_per_second =
      r.best_seconds > 0.0 ? static_cast<double>(r.queries) / r.best_seconds : 0.0;
  return r;
}

namespace {

std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out.precision(10);
  return out;
}

}  // namespace

void write_frontier_tsv(const std::filesystem::path& path, std::span<const FrontierPoint> points,
                        const std::string& policy, const std::string& condition) {
  std::ofstream out = open_report(path);
  out << "lambda\tseed_count\tacc_mean\tacc_std\tcost_mean\tcost_std\tpolicy\tcondition\n";
  for (const FrontierPoint& p : points) {
    out << p.lambda << '\t' << p.seed_count << '\t' << p.accuracy_mean << '\t' << p.accuracy_std
        << '\t' << p.cost_mean << '\t' << p.cost_std << '\t' << policy << '\t' << condition
        << '\n';
  }
}

void write_study_tsv(const std::filesystem::path& path, const StudyReport& report) {
  std::ofstream out = open_report(path);
  out << "lambda\tseed_count\tacc_mean\tacc_std\tcost_mean\tcost_std\tpolicy\tcondition\tdelta_pp\n";
  for (const StudyRow& r : report.rows) {
    out << r.lambda << '\t' << r.seed_count << '\t' << r.accuracy_mean << '\t' << r.accuracy_std
        << '\t' << r.cost_mean << '\t' << r.cost_std << '\t' << report.policy << '\t'
        << r.condition << '\t' << r.delta_pp << '\n';
  }
}

void write_assignment_tsv(const std::filesystem::path& path, const RunSet& runs,
                          const ModelCatalog& catalog) {
  std::ofstream out = open_report(path);
  out << "lambda\tseed_count\tpolicy\tmodel\tshare_mean\tshare_std\n";
  std::vector<double> lambdas;
  for (const RunResult& r : runs.runs) {
    if (std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) {
      lambdas.push_back(r.lambda);
    }
  }
  for (double lambda : lambdas) {
    for (std::size_t m = 0; m < catalog.size(); ++m) {
      std::vector<double> shares;
      for (const RunResult& r : runs.runs) {
        if (r.ok && r.lambda == lambda && m < r.assignment_share.size()) {
          shares.push_back(r.assignment_share[m]);
        }
      }
      if (shares.empty()) {
        continue;
      }
      out << lambda << '\t' << shares.size() << '\t' << to_string(runs.policy) << '\t'
          << catalog.models[m].name << '\t' << mean(shares) << '\t' << stddev(shares) << '\n';
    }
  }
}

}  // namespace cbr
