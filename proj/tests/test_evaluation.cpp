#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "cbr/errors.hpp"
#include "cbr/evaluation.hpp"
#include "support.hpp"

using namespace cbr;
using cbr::test::fast_config;
using cbr::test::random_matrix;
using cbr::test::random_params;
using cbr::test::small_spec;
using cbr::test::TempDir;

namespace {

ModelCatalog three_models() {
  ModelCatalog c;
  c.models = {{"big", 2.0, 8.0, 200.0, true},
              {"mid", 0.5, 2.0, 200.0, false},
              {"small", 0.1, 0.4, 200.0, false}};
  return c;
}

QueryRecord record(std::string id, std::vector<std::uint8_t> correct, std::int64_t tokens = 100) {
  QueryRecord r;
  r.id = std::move(id);
  r.embedding = {0.0, 0.0};
  r.correctness = std::move(correct);
  r.input_tokens = tokens;
  return r;
}

std::vector<QueryRecord> random_records(Rng& rng, std::size_t n, std::size_t models) {
  std::vector<QueryRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> c(models);
    for (auto& v : c) {
      v = rng.bernoulli(0.4) ? 1 : 0;
    }
    out.push_back(record("r" + std::to_string(i), c, 1 + static_cast<std::int64_t>(rng.below(3000))));
  }
  return out;
}

bool dominates(const FrontierPoint& a, const FrontierPoint& b) {
  return a.cost_mean <= b.cost_mean && a.accuracy_mean >= b.accuracy_mean &&
         (a.cost_mean < b.cost_mean || a.accuracy_mean > b.accuracy_mean);
}

FrontierPoint point(double cost, double acc) {
  FrontierPoint p;
  p.cost_mean = cost;
  p.accuracy_mean = acc;
  return p;
}

// Router over the default synthetic schema with random heads.
BottleneckRouter random_router(std::uint64_t seed) {
  const GeneratorSpec spec = small_spec();
  BottleneckRouter r;
  r.schema = spec.schema();
  r.catalog = spec.catalog();
  r.concept_head = random_params(spec.embedding_dim, 16, r.schema.width(), seed, 1.0);
  r.suitability_head = random_params(r.schema.width(), 12, r.catalog.size(), seed + 1, 1.5);
  return r;
}

void zero_input_rows(DenseParams& p, const ConceptGroup& g) {
  for (std::size_t i = g.offset; i < g.offset + g.width(); ++i) {
    for (std::size_t j = 0; j < p.hidden_dim(); ++j) {
      p.weight1(i, j) = 0.0;
    }
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

TEST_CASE("routing accuracy and routed cost examples") {
  const ModelCatalog cat = three_models();
  const std::vector<QueryRecord> recs{record("a", {1, 0, 0}, 100), record("b", {0, 1, 1}, 500),
                                      record("c", {1, 1, 0}, 2000)};
  CHECK(routing_accuracy(std::vector<std::size_t>{0, 1, 0}, recs) == 1.0);
  CHECK(routing_accuracy(std::vector<std::size_t>{1, 0, 2}, recs) == 0.0);
  CHECK(routing_accuracy(std::vector<std::size_t>{0, 0, 2}, recs) == doctest::Approx(1.0 / 3.0));

  double fixed = 0.0, lo = 0.0, hi = 0.0;
  std::vector<std::size_t> cheapest, priciest;
  for (const QueryRecord& r : recs) {
    const Vector c = cost_vector(r, cat);
    fixed += c[1];
    const auto mn = std::min_element(c.begin(), c.end());
    const auto mx = std::max_element(c.begin(), c.end());
    lo += *mn;
    hi += *mx;
    cheapest.push_back(static_cast<std::size_t>(mn - c.begin()));
    priciest.push_back(static_cast<std::size_t>(mx - c.begin()));
  }
  CHECK(mean_routed_cost(std::vector<std::size_t>{1, 1, 1}, recs, cat) == doctest::Approx(fixed / 3));
  CHECK(mean_routed_cost(cheapest, recs, cat) == doctest::Approx(lo / 3));
  CHECK(mean_routed_cost(priciest, recs, cat) == doctest::Approx(hi / 3));
  // Single-model cost by hand: (0.5 * 100 + 2.0 * 200) / 1e6.
  CHECK(mean_routed_cost(std::vector<std::size_t>{1}, std::vector<QueryRecord>{recs[0]}, cat) ==
        doctest::Approx(450.0 / 1e6));
}

TEST_CASE("routing metric errors") {
  const ModelCatalog cat = three_models();
  const std::vector<QueryRecord> recs{record("a", {1, 0, 0}), record("b", {0, 1, 1})};
  CHECK_THROWS_AS(routing_accuracy(std::vector<std::size_t>{0}, recs), ShapeError);
  CHECK_THROWS_AS(routing_accuracy(std::vector<std::size_t>{}, std::vector<QueryRecord>{}),
                  SizeError);
  CHECK_THROWS_AS(routing_accuracy(std::vector<std::size_t>{0, 3}, recs), ContractError);
  CHECK_THROWS_AS(mean_routed_cost(std::vector<std::size_t>{0, 3}, recs, cat), ContractError);
  CHECK_THROWS_AS(oracle_accuracy(std::vector<QueryRecord>{}, cat), SizeError);
}

TEST_CASE("oracle accounting") {
  const ModelCatalog cat = three_models();
  const std::vector<QueryRecord> recs{record("a", {1, 1, 0}), record("b", {0, 0, 0}),
                                      record("c", {1, 1, 1})};
  const auto d = oracle_decisions(recs, cat);
  CHECK(d[0] == std::optional<std::size_t>{1});
  CHECK_FALSE(d[1].has_value());
  CHECK(d[2] == std::optional<std::size_t>{2});
  CHECK(oracle_accuracy(recs, cat) == doctest::Approx(2.0 / 3.0));
  const double expected =
      (cost_vector(recs[0], cat)[1] + cost_vector(recs[1], cat)[2] + cost_vector(recs[2], cat)[2]) /
      3.0;
  CHECK(oracle_mean_cost(recs, cat) == doctest::Approx(expected));
}

TEST_CASE("oracle is optimal against every decision vector") {
  // Exhaustive over 3^6 decision vectors: nothing beats the oracle's
  // accuracy, and among those that match it none is cheaper.
  const ModelCatalog cat = three_models();
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<QueryRecord> recs = random_records(rng, 6, 3);
    double best_acc = -1.0;
    double best_cost = 0.0;
    std::vector<std::size_t> d(recs.size(), 0);
    for (std::size_t code = 0; code < 729; ++code) {
      std::size_t c = code;
      for (auto& x : d) {
        x = c % 3;
        c /= 3;
      }
      const double acc = routing_accuracy(d, recs);
      const double cost = mean_routed_cost(d, recs, cat);
      if (acc > best_acc + 1e-12) {
        best_acc = acc;
        best_cost = cost;
      } else if (std::abs(acc - best_acc) <= 1e-12) {
        best_cost = std::min(best_cost, cost);
      }
    }
    CHECK(oracle_accuracy(recs, cat) == doctest::Approx(best_acc).epsilon(1e-12));
    CHECK(oracle_mean_cost(recs, cat) == doctest::Approx(best_cost).epsilon(1e-12));
  }
}

TEST_CASE("random policy accuracy lies within 3 sigma of the binomial expectation") {
  const SyntheticDataset synth = synthesize_dataset(small_spec(3000), 8);
  const auto& recs = synth.dataset.records;
  const RandomRouter router{5, synth.dataset.catalog()};
  const auto decisions = route_batch(router, embeddings_of(recs));
  double mu = 0.0, var = 0.0;
  for (const QueryRecord& r : recs) {
    double p = 0.0;
    for (auto c : r.correctness) {
      p += c;
    }
    p /= static_cast<double>(r.correctness.size());
    mu += p;
    var += p * (1.0 - p);
  }
  const double n = static_cast<double>(recs.size());
  CHECK(std::abs(routing_accuracy(decisions, recs) - mu / n) <= 3.0 * std::sqrt(var) / n);

  // Multinomial: each share within 3 sigma of 1/n_models.
  const std::size_t m = synth.dataset.catalog().size();
  const std::vector<double> share = assignment_share(decisions, m);
  const double p = 1.0 / static_cast<double>(m);
  for (double s : share) {
    CHECK(std::abs(s - p) <= 3.0 * std::sqrt(p * (1.0 - p) / n));
  }
}

TEST_CASE("assignment share") {
  const std::vector<double> one = assignment_share(std::vector<std::size_t>{2, 2, 2}, 4);
  CHECK(one == std::vector<double>{0.0, 0.0, 1.0, 0.0});
  const std::vector<double> mixed = assignment_share(std::vector<std::size_t>{0, 1, 1, 3}, 4);
  CHECK(mixed == std::vector<double>{0.25, 0.5, 0.0, 0.25});
  CHECK_THROWS_AS(assignment_share(std::vector<std::size_t>{}, 3), SizeError);
  CHECK_THROWS_AS(assignment_share(std::vector<std::size_t>{3}, 3), ShapeError);
}

TEST_CASE("pareto frontier examples") {
  const std::vector<FrontierPoint> single{point(1.0, 0.5)};
  CHECK(pareto_frontier(single) == single);

  const std::vector<FrontierPoint> two{point(2.0, 0.8), point(1.0, 0.9)};
  const auto f2 = pareto_frontier(two);
  REQUIRE(f2.size() == 1);
  CHECK(f2[0] == point(1.0, 0.9));

  const std::vector<FrontierPoint> three{point(3.0, 0.85), point(1.0, 0.8), point(2.0, 0.9)};
  const auto f3 = pareto_frontier(three);
  REQUIRE(f3.size() == 2);
  CHECK(f3[0] == point(1.0, 0.8));
  CHECK(f3[1] == point(2.0, 0.9));

  // Equal cost: only the more accurate point survives.
  const std::vector<FrontierPoint> tie{point(1.0, 0.6), point(1.0, 0.7)};
  const auto ft = pareto_frontier(tie);
  REQUIRE(ft.size() == 1);
  CHECK(ft[0].accuracy_mean == 0.7);
}

TEST_CASE("pareto frontier agrees with a quadratic dominance check") {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<FrontierPoint> pts;
    const std::size_t n = 1 + rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties and duplicates are common.
      pts.push_back(point(static_cast<double>(rng.below(6)), 0.1 * static_cast<double>(rng.below(6))));
    }
    const auto front = pareto_frontier(pts);
    REQUIRE_FALSE(front.empty());
    for (std::size_t i = 1; i < front.size(); ++i) {
      CHECK(front[i - 1].cost_mean < front[i].cost_mean);
      CHECK(front[i - 1].accuracy_mean < front[i].accuracy_mean);
    }
    for (const FrontierPoint& p : pts) {
      const bool dominated =
          std::any_of(pts.begin(), pts.end(), [&](const FrontierPoint& q) { return dominates(q, p); });
      const bool kept = std::any_of(front.begin(), front.end(), [&](const FrontierPoint& q) {
        return q.cost_mean == p.cost_mean && q.accuracy_mean == p.accuracy_mean;
      });
      CHECK(dominated != kept);
    }
  }
}

TEST_CASE("aggregate runs") {
  RunSet set;
  auto run = [](double lambda, std::uint64_t seed, bool ok, double acc, double cost) {
    RunResult r;
    r.lambda = lambda;
    r.seed = seed;
    r.ok = ok;
    r.accuracy = acc;
    r.mean_cost = cost;
    return r;
  };
  set.runs = {run(0.0, 0, true, 0.5, 2.0), run(0.0, 1, true, 0.7, 4.0),
              run(1.0, 0, false, 0.0, 0.0), run(1.0, 1, true, 0.6, 1.0),
              run(2.0, 0, false, 0.0, 0.0)};
  const auto pts = aggregate_runs(set);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].lambda == 0.0);
  CHECK(pts[0].seed_count == 2);
  CHECK(pts[0].accuracy_mean == doctest::Approx(0.6));
  CHECK(pts[0].accuracy_std == doctest::Approx(std::sqrt(0.02)));
  CHECK(pts[0].cost_mean == doctest::Approx(3.0));
  CHECK(pts[0].cost_std == doctest::Approx(std::sqrt(2.0)));
  CHECK(pts[1].lambda == 1.0);
  CHECK(pts[1].seed_count == 1);
  CHECK(pts[1].accuracy_std == 0.0);
}

TEST_CASE("concept metrics") {
  const ConceptSchema schema({{"tasks", {"t0", "t1"}, ConceptKind::binary, 0},
                              {"libraries", {"numpy"}, ConceptKind::binary, 0},
                              {"complexity", {"reasoning", "general", "total"},
                               ConceptKind::continuous, 0}});
  Matrix gold(3, 6);
  const double g[3][6] = {{1, 0, 0, 0.2, 0.4, 0.3}, {1, 0, 0, 0.5, 0.5, 0.5}, {0, 1, 0, 0.9, 0.1, 0.4}};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      gold(r, c) = g[r][c];
    }
  }

  SUBCASE("perfect predictions") {
    for (const GroupMetrics& m : concept_metrics(gold, gold, schema)) {
      CHECK(m.mse == 0.0);
      CHECK(m.mae == 0.0);
      if (m.group == "tasks") {
        CHECK(m.accuracy == 1.0);
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
      }
    }
  }

  SUBCASE("hand-counted confusion") {
    Matrix pred = gold;
    // tasks cells: tp 3, fp 1, fn 0, tn 2.
    pred(0, 1) = 0.8;
    pred(1, 0) = 0.9;
    pred(2, 1) = 0.51;
    pred(0, 0) = 0.6;
    const auto m = concept_metrics(pred, gold, schema);
    CHECK(m[0].group == "tasks");
    CHECK(m[0].accuracy == doctest::Approx(5.0 / 6.0));
    CHECK(m[0].precision == doctest::Approx(0.75));
    CHECK(m[0].recall == doctest::Approx(1.0));
    CHECK(m[0].f1 == doctest::Approx(6.0 / 7.0));
  }

  SUBCASE("all-negative predictions and empty positive sets") {
    Matrix pred = gold;
    pred(0, 0) = pred(1, 0) = pred(2, 1) = 0.0;
    const auto m = concept_metrics(pred, gold, schema);
    CHECK(m[0].recall == 0.0);
    CHECK(m[0].precision == 0.0);
    CHECK(m[0].no_predicted_positives);
    CHECK_FALSE(m[0].no_positives);
    CHECK(m[1].group == "libraries");
    CHECK(m[1].no_positives);
    CHECK(m[1].recall == 0.0);
    CHECK(m[1].accuracy == 1.0);
  }

  SUBCASE("complexity offset by a constant") {
    Matrix pred = gold;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 3; c < 6; ++c) {
        pred(r, c) += 0.1;
      }
    }
    const auto m = concept_metrics(pred, gold, schema);
    CHECK(m[2].kind == ConceptKind::continuous);
    CHECK(m[2].mae == doctest::Approx(0.1));
    CHECK(m[2].mse == doctest::Approx(0.01));
  }

  CHECK_THROWS_AS(concept_metrics(Matrix(3, 5), Matrix(3, 5), schema), ShapeError);
  CHECK_THROWS_AS(concept_metrics(Matrix(0, 6), Matrix(0, 6), schema), SizeError);
}

TEST_CASE("intervention study") {
  const SyntheticDataset synth = synthesize_dataset(small_spec(80), 2);
  std::vector<BottleneckRouter> routers{random_router(1), random_router(5)};

  SUBCASE("gold equal to the router's own predictions gives zero delta") {
    std::vector<QueryRecord> recs = synth.dataset.records;
    const Matrix pred = predict_concepts_batch(routers[0], embeddings_of(recs));
    for (std::size_t i = 0; i < recs.size(); ++i) {
      recs[i].concepts.assign(pred.row(i).begin(), pred.row(i).end());
    }
    const StudyReport report =
        intervention_study(std::span(routers).first(1), recs, "complexity", 0.1);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.kind == "intervention");
    CHECK(report.rows[0].condition == "predicted");
    CHECK(report.rows[1].condition == "gold:complexity");
    CHECK(report.rows[1].delta_pp == 0.0);
    CHECK(report.rows[0].accuracies == report.rows[1].accuracies);
    CHECK(report.rows[0].lambda == 0.1);
  }

  SUBCASE("a group the suitability head ignores gives zero delta") {
    for (BottleneckRouter& r : routers) {
      zero_input_rows(r.suitability_head, r.schema.group("domains"));
    }
    const StudyReport report = intervention_study(routers, synth.dataset.records, "domains");
    CHECK(report.rows[0].seed_count == 2);
    CHECK(report.rows[1].seed_count == 2);
    CHECK(report.rows[1].delta_pp == 0.0);
    CHECK(report.rows[1].cost_mean == report.rows[0].cost_mean);
  }

  CHECK_THROWS_AS(intervention_study(routers, synth.dataset.records, "colours"), SchemaError);
  CHECK_THROWS_AS(intervention_study(std::span<const BottleneckRouter>{}, synth.dataset.records,
                                     "domains"),
                  SizeError);
}

TEST_CASE("ablation study structure") {
  const SyntheticDataset synth = synthesize_dataset(small_spec(150), 4);
  const DatasetSplit split = split_dataset(150, 0);
  TrainConfig c = fast_config();
  c.concept_head.max_epochs = 2;
  c.suitability_head.max_epochs = 2;
  const std::vector<double> lambdas{0.0, 4.0};
  const StudyReport r = ablation_study(synth.dataset, split, {"domains"}, lambdas, 2, c);
  CHECK(r.kind == "ablation");
  REQUIRE(r.rows.size() == 4);
  CHECK(r.rows[0].condition == "full");
  CHECK(r.rows[1].condition == "without:domains");
  CHECK(r.rows[0].delta_pp == 0.0);
  CHECK(r.rows[2].lambda == 4.0);
  CHECK(r.rows[1].delta_pp ==
        doctest::Approx(100.0 * (r.rows[1].accuracy_mean - r.rows[0].accuracy_mean)));
  for (const StudyRow& row : r.rows) {
    CHECK(row.seed_count == 2);
    CHECK(row.accuracies.size() == 2);
  }
  CHECK(kStudyLambdas == std::vector<double>{0.0, 0.1, 4.0});

  CHECK_THROWS_AS(ablation_study(synth.dataset, split, {}, lambdas, 1, c), ConfigError);
  CHECK_THROWS_AS(ablation_study(synth.dataset, split, {"domains"}, lambdas, 0, c), ConfigError);
  CHECK_THROWS_AS(ablation_study(synth.dataset, split, {"colours"}, lambdas, 1, c), SchemaError);
}

TEST_CASE("counterfactual flip study") {
  BottleneckRouter router = random_router(9);
  CounterfactualConfig cfg;
  cfg.samples = 200;
  cfg.seed = 3;
  cfg.target_models = {2, 3};

  SUBCASE("source equal to target changes nothing") {
    cfg.source_language = cfg.target_language = "rust";
    const CounterfactualResult r = counterfactual_flip_study(router, cfg);
    CHECK(r.probability_delta_pp == 0.0);
    CHECK(r.rank_improvement == 0.0);
    CHECK(r.source_decisions == r.target_decisions);
    CHECK(r.samples == 200);
  }

  SUBCASE("flipping back reverses the shift") {
    cfg.source_language = "python";
    cfg.target_language = "java";
    const CounterfactualResult ab = counterfactual_flip_study(router, cfg);
    std::swap(cfg.source_language, cfg.target_language);
    const CounterfactualResult ba = counterfactual_flip_study(router, cfg);
    CHECK(ab.source_decisions == ba.target_decisions);
    CHECK(ab.target_decisions == ba.source_decisions);
    CHECK(ab.probability_delta_pp == doctest::Approx(-ba.probability_delta_pp).epsilon(1e-12));
    CHECK(ab.rank_improvement == doctest::Approx(-ba.rank_improvement).epsilon(1e-12));
  }

  SUBCASE("matches a direct softmax when complexity is ignored") {
    // With the complexity rows zeroed every sample is the same pair of
    // vectors, so one hand-built pair gives the exact expected values.
    const ConceptSchema& s = router.schema;
    zero_input_rows(router.suitability_head, s.group("complexity"));
    cfg.source_language = "php";
    cfg.target_language = "rust";
    cfg.domain = "network";
    Vector v(s.width(), 0.0);
    v[s.index_of("tasks", "code_completion")] = 1.0;
    v[s.index_of("natural_languages", "english")] = 1.0;
    v[s.index_of("domains", "network")] = 1.0;
    Vector vs = v, vt = v;
    vs[s.index_of("programming_languages", "php")] = 1.0;
    vt[s.index_of("programming_languages", "rust")] = 1.0;
    auto mass = [&](const Vector& x) {
      const Vector l = suitability_logits(router, x);
      double z = 0.0;
      for (double e : l) {
        z += std::exp(e);
      }
      return (std::exp(l[2]) + std::exp(l[3])) / z;
    };
    const CounterfactualResult r = counterfactual_flip_study(router, cfg);
    CHECK(r.source_probability == doctest::Approx(mass(vs)).epsilon(1e-12));
    CHECK(r.target_probability == doctest::Approx(mass(vt)).epsilon(1e-12));
    CHECK(r.probability_delta_pp == doctest::Approx(100.0 * (mass(vt) - mass(vs))).epsilon(1e-10));
  }

  cfg.source_language = "python";
  cfg.target_language = "cobol";
  CHECK_THROWS_AS(counterfactual_flip_study(router, cfg), SchemaError);
  cfg.target_language = "rust";
  cfg.samples = 0;
  CHECK_THROWS_AS(counterfactual_flip_study(router, cfg), ConfigError);
  cfg.samples = 10;
  cfg.target_models = {};
  CHECK_THROWS_AS(counterfactual_flip_study(router, cfg), ConfigError);
  cfg.target_models = {6};
  CHECK_THROWS_AS(counterfactual_flip_study(router, cfg), ConfigError);
}

TEST_CASE("planted specialists") {
  const GeneratorSpec spec = default_generator_spec();
  const ModelCatalog cat = spec.catalog();
  const auto py = planted_specialists(spec, "programming_languages", "python");
  REQUIRE(py.size() == 1);
  CHECK(cat.models[py[0]].name == "gpt-4.1-mini");
  CHECK(cat.models[planted_specialists(spec, "programming_languages", "rust")[0]].name ==
        "llama-4-scout");
  CHECK(planted_specialists(spec, "domains", "network").empty());
}

TEST_CASE("throughput benchmark") {
  const RandomRouter router{1, three_models()};
  const Matrix x = random_matrix(50, 4, 2);
  const ThroughputResult r = throughput_benchmark(router, x, 3);
  CHECK(r.queries == 50);
  CHECK(r.repetitions == 3);
  CHECK(r.best_seconds <= r.mean_seconds);
  CHECK(r.queries_per_second > 0.0);
  CHECK_THROWS_AS(throughput_benchmark(router, x, 0), ConfigError);
}

TEST_CASE("tsv reports") {
  const TempDir dir;
  const std::vector<FrontierPoint> pts{{0.5, 0.75, 0.01, 2.5, 0.1, 3}};
  write_frontier_tsv(dir / "sub/frontier.tsv", pts, "bottleneck", "full");
  const auto f = read_lines(dir / "sub/frontier.tsv");
  REQUIRE(f.size() == 2);
  CHECK(f[0] == "lambda\tseed_count\tacc_mean\tacc_std\tcost_mean\tcost_std\tpolicy\tcondition");
  CHECK(f[1] == "0.5\t3\t0.75\t0.01\t2.5\t0.1\tbottleneck\tfull");

  StudyReport study;
  study.kind = "ablation";
  StudyRow row;
  row.condition = "without:domains";
  row.lambda = 4.0;
  row.seed_count = 2;
  row.accuracy_mean = 0.5;
  row.delta_pp = -1.25;
  study.rows.push_back(row);
  write_study_tsv(dir / "study.tsv", study);
  const auto s = read_lines(dir / "study.tsv");
  REQUIRE(s.size() == 2);
  CHECK(s[0].ends_with("\tcondition\tdelta_pp"));
  CHECK(s[1] == "4\t2\t0.5\t0\t0\t0\tbottleneck\twithout:domains\t-1.25");

  RunSet runs;
  runs.policy = PolicyKind::knn;
  RunResult a;
  a.ok = true;
  a.assignment_share = {0.25, 0.75, 0.0};
  RunResult b = a;
  b.assignment_share = {0.75, 0.25, 0.0};
  runs.runs = {a, b};
  write_assignment_tsv(dir / "share.tsv", runs, three_models());
  const auto a_lines = read_lines(dir / "share.tsv");
  REQUIRE(a_lines.size() == 4);
  CHECK(a_lines[0] == "lambda\tseed_count\tpolicy\tmodel\tshare_mean\tshare_std");
  CHECK(a_lines[1].starts_with("0\t2\tknn\tbig\t0.5\t"));
  CHECK(a_lines[3] == "0\t2\tknn\tsmall\t0\t0");
}
