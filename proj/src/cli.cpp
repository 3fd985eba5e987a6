#include "cbr/cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cbr/checkpoint.hpp"
#include "cbr/dataset.hpp"
#include "cbr/errors.hpp"
#include "cbr/evaluation.hpp"
#include "cbr/rng.hpp"
#include "cbr/service.hpp"
#include "cbr/stats.hpp"
#include "cbr/training.hpp"

namespace cbr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot read " + path.string());
  }
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string hash_file(const fs::path& path) { return hex64(fnv1a(read_file(path))); }

json read_json_file(const fs::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) {
    throw ParseError(path.string() + ": not valid JSON");
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_out_dir(const fs::path& dir, bool force) {
  if (dir.empty()) {
    throw ConfigError("--out is required");
  }
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) {
      throw ConfigError(dir.string() + " exists and is not a directory");
    }
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError(dir.string() + " is not empty; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const std::string& item : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse '" + item + "'");
    }
  }
  return out;
}

// Reproducibility record: flags, input hashes, config hash and output hashes.
struct Manifest {
  std::string command;
  json args = json::object();
  json inputs = json::object();
  json config = json::object();
  std::uint64_t seed = 0;

  void input(const fs::path& path) {
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(path)) {
        if (e.is_regular_file() && e.path().filename() != "manifest.json") {
          files.push_back(e.path());
        }
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        inputs[f.string()] = hash_file(f);
      }
    } else {
      inputs[path.string()] = hash_file(path);
    }
  }

  void write(const fs::path& dir) const {
    json outputs = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      outputs[fs::relative(f, dir).generic_string()] = hash_file(f);
    }
    write_json(dir / "manifest.json", {{"command", command},
                                       {"args", args},
                                       {"seed", seed},
                                       {"inputs", inputs},
                                       {"config", config},
                                       {"config_hash", hex64(fnv1a(config.dump()))},
                                       {"outputs", outputs}});
  }
};

json collect_args(const CLI::App& sub) {
  json args = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->count() == 0 || opt->get_name() == "--help") {
      continue;
    }
    const auto& r = opt->results();
    args[opt->get_name()] = r.size() == 1 ? json(r.front()) : json(r);
  }
  return args;
}

TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : train_config_from_json(read_json_file(path));
}

void write_curves(const fs::path& path, const std::vector<TrainingCurve>& curves) {
  std::ofstream out(path);
  out.precision(10);
  out << "head\tepoch\ttrain_loss\tvalidation_loss\tbest_epoch\n";
  for (const TrainingCurve& c : curves) {
    for (const CurvePoint& p : c.points) {
      out << c.head << '\t' << p.epoch << '\t' << p.train_loss << '\t' << p.validation_loss
          << '\t' << c.best_epoch << '\n';
    }
  }
}

json policy_metrics(const Policy& policy, const Dataset& ds, const DatasetSplit& split) {
  const auto test = subset(ds, split.test);
  const auto decisions = route_batch(policy, embeddings_of(test));
  return {{"test_records", test.size()},
          {"accuracy", routing_accuracy(decisions, test)},
          {"mean_cost", mean_routed_cost(decisions, test, ds.catalog())},
          {"oracle_accuracy", oracle_accuracy(test, ds.catalog())},
          {"oracle_mean_cost", oracle_mean_cost(test, ds.catalog())},
          {"assignment_share", assignment_share(decisions, ds.catalog().size())},
          {"param_count", param_count(policy)}};
}

struct CommonOpts {
  std::string data;
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string policy = "bottleneck";
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  bool force = false;
  std::optional<double> lambda;
};

// ---- gen-data ------------------------------------------------------------

struct GenOpts {
  std::string spec;
  std::optional<std::size_t> records;
};

void cmd_gen_data(const CommonOpts& c, const GenOpts& g, Manifest& m, std::ostream& out) {
  GeneratorSpec spec = default_generator_spec();
  if (!g.spec.empty()) {
    spec = generator_spec_from_json(read_json_file(g.spec));
    m.input(g.spec);
  }
  if (g.records) {
    spec.n_records = *g.records;
  }
  spec.validate();
  prepare_out_dir(c.out, c.force);
  const SyntheticDataset syn = synthesize_dataset(spec, c.seed);
  save_dataset(c.out, syn.dataset);
  write_json(fs::path(c.out) / "spec.json", generator_spec_to_json(spec));
  m.config = generator_spec_to_json(spec);
  out << "wrote " << syn.dataset.records.size() << " records to " << c.out << "\n";
}

// ---- train ---------------------------------------------------------------

struct TrainOpts {
  std::string ablate;
};

void cmd_train(const CommonOpts& c, const TrainOpts& t, Manifest& m, std::ostream& out) {
  TrainConfig cfg = load_train_config(c.config);
  cfg.seed = c.seed;
  if (c.lambda) {
    cfg.lambda = *c.lambda;
  }
  cfg.validate();
  const PolicyKind kind = policy_kind_from_string(c.policy);
  const Dataset ds = load_dataset(c.data);
  m.input(c.data);
  if (!c.config.empty()) m.input(c.config);
  m.config = train_config_to_json(cfg);
  prepare_out_dir(c.out, c.force);

  const DatasetSplit split = split_dataset(ds.records.size(), c.split_seed);
  const TrainedPolicy tp = train_policy(kind, ds, split, cfg, t.ablate);
  const fs::path ckpt = fs::path(c.out) / "model.ckpt";
  save_checkpoint(ckpt, tp.checkpoint);
  write_curves(fs::path(c.out) / "curves.tsv", tp.curves);
  json metrics = policy_metrics(tp.checkpoint.policy, ds, split);
  metrics["checkpoint_version"] = checkpoint_version(read_file(ckpt));
  metrics["policy"] = c.policy;
  metrics["lambda"] = cfg.lambda;
  write_json(fs::path(c.out) / "metrics.json", metrics);
  out << c.policy << " lambda=" << cfg.lambda << " accuracy=" << metrics["accuracy"].get<double>()
      << " mean_cost=" << metrics["mean_cost"].get<double>() << "\n";
}

// ---- sweep ---------------------------------------------------------------

struct SweepOpts {
  std::string grid = "default";
  std::size_t seeds = 5;
  std::size_t jobs = 1;
  bool keep_checkpoints = false;
};

void cmd_sweep(const CommonOpts& c, const SweepOpts& s, Manifest& m, std::ostream& out,
               std::ostream& err) {
  TrainConfig cfg = load_train_config(c.config);
  cfg.seed = c.seed;
  const SweepGrid grid = SweepGrid::parse(s.grid);
  const PolicyKind kind = policy_kind_from_string(c.policy);
  const Dataset ds = load_dataset(c.data);
  m.input(c.data);
  if (!c.config.empty()) m.input(c.config);
  m.config = train_config_to_json(cfg);
  m.config["lambda_grid"] = grid.lambdas;
  m.config["seeds"] = s.seeds;
  prepare_out_dir(c.out, c.force);

  const DatasetSplit split = split_dataset(ds.records.size(), c.split_seed);
  SweepOptions options;
  options.jobs = s.jobs;
  options.keep_checkpoints = s.keep_checkpoints;
  const RunSet runs = run_sweep(ds, split, grid, s.seeds, kind, cfg, options);
  if (runs.failed() == runs.runs.size()) {
    throw TrainingError("every sweep run failed; first error: " + runs.runs.front().error);
  }

  const fs::path dir(c.out);
  {
    std::ofstream f(dir / "runs.tsv");
    f.precision(10);
    f << "lambda\tseed\tok\taccuracy\tmean_cost\tpolicy\terror\n";
    for (const RunResult& r : runs.runs) {
      f << r.lambda << '\t' << r.seed << '\t' << (r.ok ? 1 : 0) << '\t' << r.accuracy << '\t'
        << r.mean_cost << '\t' << c.policy << '\t' << r.error << '\n';
      if (!r.ok) {
        err << "run lambda=" << r.lambda << " seed=" << r.seed << " failed: " << r.error << "\n";
      }
      if (r.checkpoint) {
        std::ostringstream name;
        name << "model_l" << r.lambda << "_s" << r.seed << ".ckpt";
        fs::create_directories(dir / "checkpoints");
        save_checkpoint(dir / "checkpoints" / name.str(), *r.checkpoint);
      }
    }
  }
  const auto points = aggregate_runs(runs);
  const auto frontier = pareto_frontier(points);
  write_frontier_tsv(dir / "frontier.tsv", points, c.policy, "all");
  write_frontier_tsv(dir / "pareto.tsv", frontier, c.policy, "pareto");
  write_assignment_tsv(dir / "assignment.tsv", runs, ds.catalog());

  std::vector<double> lambdas, costs;
  for (const FrontierPoint& p : points) {
    lambdas.push_back(p.lambda);
    costs.push_back(p.cost_mean);
  }
  json summary{{"runs", runs.runs.size()},
               {"failed", runs.failed()},
               {"pareto_points", frontier.size()}};
  if (points.size() >= 2) {
    summary["spearman_lambda_cost"] = spearman(lambdas, costs);
  }
  write_json(dir / "summary.json", summary);
  out << "sweep: " << runs.runs.size() << " runs, " << runs.failed() << " failed, "
      << frontier.size() << " pareto points\n";
}

// ---- eval ----------------------------------------------------------------

void cmd_eval(const CommonOpts& c, Manifest& m, std::ostream& out) {
  const Dataset ds = load_dataset(c.data);
  m.input(c.data);
  const DatasetSplit split = split_dataset(ds.records.size(), c.split_seed);
  const auto test = subset(ds, split.test);
  json metrics;
  std::optional<Checkpoint> ckpt;
  if (c.checkpoint.empty()) {
    if (c.policy != "oracle") {
      throw ConfigError("eval needs --checkpoint unless --policy oracle");
    }
    metrics = {{"policy", "oracle"},
               {"test_records", test.size()},
               {"accuracy", oracle_accuracy(test, ds.catalog())},
               {"mean_cost", oracle_mean_cost(test, ds.catalog())}};
  } else {
    ckpt = load_checkpoint(c.checkpoint);
    m.input(c.checkpoint);
    metrics = policy_metrics(ckpt->policy, ds, split);
    metrics["policy"] = to_string(kind_of(ckpt->policy));
  }
  prepare_out_dir(c.out, c.force);
  write_json(fs::path(c.out) / "metrics.json", metrics);

  if (ckpt) {
    if (const auto* r = std::get_if<BottleneckRouter>(&ckpt->policy)) {
      const Matrix pred = predict_concepts_batch(*r, embeddings_of(test));
      Matrix gold(test.size(), r->schema.width());
      const auto keep = r->schema == ds.schema()
                            ? std::vector<std::size_t>{}
                            : ds.schema().indices_without(ckpt->metadata.ablated_group);
      for (std::size_t i = 0; i < test.size(); ++i) {
        const Vector g = keep.empty() ? test[i].concepts : select_indices(test[i].concepts, keep);
        std::copy(g.begin(), g.end(), gold.row(i).begin());
      }
      std::ofstream f(fs::path(c.out) / "concept_metrics.tsv");
      f.precision(10);
      f << "group\tkind\taccuracy\tprecision\trecall\tf1\tmse\tmae\tno_positives\t"
           "no_predicted_positives\n";
      for (const GroupMetrics& g : concept_metrics(pred, gold, r->schema)) {
        f << g.group << '\t' << (g.kind == ConceptKind::binary ? "binary" : "continuous") << '\t'
          << g.accuracy << '\t' << g.precision << '\t' << g.recall << '\t' << g.f1 << '\t' << g.mse
          << '\t' << g.mae << '\t' << g.no_positives << '\t' << g.no_predicted_positives << '\n';
      }
    }
  }
  out << metrics.dump(2) << "\n";
}

// ---- ablate --------------------------------------------------------------

struct AblateOpts {
  std::string groups;
  std::string lambdas = "0,0.1,4";
  std::size_t seeds = 5;
};

void cmd_ablate(const CommonOpts& c, const AblateOpts& a, Manifest& m, std::ostream& out) {
  TrainConfig cfg = load_train_config(c.config);
  cfg.seed = c.seed;
  const auto groups = split_list(a.groups);
  const auto lambdas = parse_numbers(a.lambdas, "--lambdas");
  const Dataset ds = load_dataset(c.data);
  m.input(c.data);
  m.config = train_config_to_json(cfg);
  m.config["groups"] = groups;
  m.config["lambdas"] = lambdas;
  prepare_out_dir(c.out, c.force);
  const DatasetSplit split = split_dataset(ds.records.size(), c.split_seed);
  const StudyReport report = ablation_study(ds, split, groups, lambdas, a.seeds, cfg);
  write_study_tsv(fs::path(c.out) / "ablation.tsv", report);

  // Significance of each condition against the full schema at the same lambda.
  std::ofstream f(fs::path(c.out) / "significance.tsv");
  f.precision(10);
  f << "lambda\tcondition\ttest\tstatistic\tp_value\n";
  const StudyRow* base = nullptr;
  for (const StudyRow& row : report.rows) {
    if (row.condition == "full") {
      base = &row;
      continue;
    }
    f << row.lambda << '\t' << row.condition << "\tmann_whitney_u\t";
    const auto u = mann_whitney_u(row.accuracies, base->accuracies);
    f << u.statistic << '\t' << u.p_value << '\n';
    f << row.lambda << '\t' << row.condition << "\tt_test_two_tailed\t";
    try {
      const auto t = t_test_two_tailed(row.accuracies, base->accuracies);
      f << t.statistic << '\t' << t.p_value << '\n';
    } catch (const StatisticalError&) {
      f << "nan\tnan\n";
    }
  }
  for (const StudyRow& row : report.rows) {
    out << "lambda=" << row.lambda << ' ' << row.condition << " acc=" << row.accuracy_mean
        << " delta_pp=" << row.delta_pp << "\n";
  }
}

// ---- intervene -----------------------------------------------------------

struct InterveneOpts {
  std::vector<std::string> checkpoints;
  std::string group = "complexity";
};

void cmd_intervene(const CommonOpts& c, const InterveneOpts& iv, Manifest& m, std::ostream& out) {
  if (iv.checkpoints.empty()) {
    throw ConfigError("intervene needs at least one --checkpoint");
  }
  const Dataset ds = load_dataset(c.data);
  m.input(c.data);
  std::vector<BottleneckRouter> routers;
  double lambda = 0.0;
  for (const std::string& path : iv.checkpoints) {
    Checkpoint ckpt = load_checkpoint(path);
    m.input(path);
    auto* r = std::get_if<BottleneckRouter>(&ckpt.policy);
    if (r == nullptr) {
      throw ContractError(path + " is not a bottleneck checkpoint");
    }
    lambda = ckpt.metadata.lambda;
    routers.push_back(std::move(*r));
  }
  prepare_out_dir(c.out, c.force);
  const DatasetSplit split = split_dataset(ds.records.size(), c.split_seed);
  const auto test = subset(ds, split.test);
  const StudyReport report = intervention_study(routers, test, iv.group, lambda);
  write_study_tsv(fs::path(c.out) / "intervention.tsv", report);
  for (const StudyRow& row : report.rows) {
    out << row.condition << " acc=" << row.accuracy_mean << " delta_pp=" << row.delta_pp << "\n";
  }
}

// ---- counterfactual ------------------------------------------------------

struct CounterfactualOpts {
  std::string source;
  std::string target;
  std::size_t samples = 1000;
  std::string targets;
  std::string spec;
  std::size_t top = 3;
};

void cmd_counterfactual(const CommonOpts& c, const CounterfactualOpts& o, Manifest& m,
                        std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  m.input(c.checkpoint);
  const auto* router = std::get_if<BottleneckRouter>(&ckpt.policy);
  if (router == nullptr) {
    throw ContractError("counterfactual study needs a bottleneck checkpoint");
  }
  CounterfactualConfig cfg;
  cfg.source_language = o.source;
  cfg.target_language = o.target;
  cfg.samples = o.samples;
  cfg.seed = c.seed;
  if (!o.targets.empty()) {
    for (const std::string& name : split_list(o.targets)) {
      const auto idx = router->catalog.index_of(name);
      if (!idx) {
        throw ConfigError("unknown model '" + name + "'");
      }
      cfg.target_models.push_back(*idx);
    }
  } else if (!o.spec.empty()) {
    m.input(o.spec);
    const GeneratorSpec spec = generator_spec_from_json(read_json_file(o.spec));
    cfg.target_models = planted_specialists(spec, "programming_languages", o.target, o.top);
  } else {
    throw ConfigError("counterfactual needs --targets or --spec");
  }
  prepare_out_dir(c.out, c.force);
  const CounterfactualResult r = counterfactual_flip_study(*router, cfg);
  json names = json::array();
  for (std::size_t t : cfg.target_models) {
    names.push_back(router->catalog.models[t].name);
  }
  const json result{{"source", o.source},
                    {"target", o.target},
                    {"samples", r.samples},
                    {"target_models", names},
                    {"source_probability", r.source_probability},
                    {"target_probability", r.target_probability},
                    {"probability_delta_pp", r.probability_delta_pp},
                    {"rank_improvement", r.rank_improvement}};
  write_json(fs::path(c.out) / "counterfactual.json", result);
  out << result.dump(2) << "\n";
}

// ---- bench ---------------------------------------------------------------

struct BenchOpts {
  std::size_t reps = 10;
  std::size_t queries = 3869;
  bool parallel = false;
};

void cmd_bench(const CommonOpts& c, const BenchOpts& b, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  Matrix x;
  if (!c.data.empty()) {
    const Dataset ds = load_dataset(c.data);
    x = embeddings_of(ds.records);
  } else {
    const std::size_t dim = input_dim(ckpt.policy);
    if (dim == 0) {
      throw ConfigError("bench needs --data for policies without a fixed embedding width");
    }
    x = Matrix(b.queries, dim);
    Rng rng(c.seed);
    for (double& v : x.flat()) {
      v = rng.normal();
    }
  }
  const ThroughputResult r = throughput_benchmark(ckpt.policy, x, b.reps, b.parallel);
  const json result{{"queries", r.queries},
                    {"repetitions", r.repetitions},
                    {"mean_seconds", r.mean_seconds},
                    {"best_seconds", r.best_seconds},
                    {"queries_per_second", r.queries_per_second},
                    {"parallel", b.parallel}};
  out << result.dump(2) << "\n";
}

// ---- route / serve -------------------------------------------------------

struct RouteOpts {
  std::string embedding;
  std::string text;
  std::string request;
  std::string group;
  std::string values;
  bool verbose = false;
  bool mock_embeddings = false;
};

std::shared_ptr<EmbeddingClient> make_client(const ServiceConfig& cfg, std::size_t dim) {
  if (cfg.mock_embeddings) {
    const std::size_t width =
        dim > 0 ? dim : (cfg.embedding ? cfg.embedding->dimension : std::size_t{0});
    return std::make_shared<MockEmbeddingClient>(width, cfg.mock_seed);
  }
  if (cfg.embedding && !cfg.embedding->endpoint.empty()) {
    return std::make_shared<HttpEmbeddingClient>(*cfg.embedding);
  }
  return nullptr;
}

int cmd_route(const CommonOpts& c, const RouteOpts& r, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(c.checkpoint);
  const std::string version = checkpoint_version(read_file(c.checkpoint));
  ServiceConfig scfg;
  scfg.mock_embeddings = r.mock_embeddings;
  scfg.mock_seed = c.seed;
  apply_env_overrides(scfg, process_env());
  const std::size_t dim = input_dim(ckpt.policy);
  const RoutingService service(std::move(ckpt), version, make_client(scfg, dim));

  json request;
  if (!r.request.empty()) {
    request = read_json_file(r.request);
  } else if (!r.embedding.empty()) {
    request["embedding"] = parse_numbers(r.embedding, "--embedding");
  } else if (!r.text.empty()) {
    request["text"] = r.text;
  } else {
    throw ConfigError("route needs --embedding, --text or --request");
  }
  if (!r.group.empty()) {
    request["intervention"] = {{"group", r.group},
                               {"values", parse_numbers(r.values, "--values")}};
  }
  if (r.verbose) {
    request["verbose"] = true;
  }
  Reply reply = service.handle_route(request);
  reply.body.erase("processing_ms");
  out << reply.body.dump(2) << "\n";
  if (reply.status == 200) return kExitOk;
  return reply.status < 500 ? kExitUser : kExitInternal;
}

struct ServeOpts {
  std::string bind;
  bool mock_embeddings = false;
};

std::atomic<HttpGateway*> g_gateway{nullptr};

void on_signal(int) {
  if (HttpGateway* g = g_gateway.load()) {
    g->stop();
  }
}

void cmd_serve(const CommonOpts& c, const ServeOpts& s, std::ostream& out) {
  ServiceConfig cfg;
  if (!c.config.empty()) {
    cfg = service_config_from_json(read_json_file(c.config));
  }
  apply_env_overrides(cfg, process_env());
  if (!c.checkpoint.empty()) cfg.checkpoint_path = c.checkpoint;
  if (!s.bind.empty()) cfg.bind_address = s.bind;
  if (s.mock_embeddings) cfg.mock_embeddings = true;
  if (cfg.checkpoint_path.empty()) {
    throw ConfigError("serve needs a checkpoint (--checkpoint, config or CHECKPOINT_PATH)");
  }
  const auto [host, port] = parse_bind_address(cfg.bind_address);

  const Checkpoint probe = load_checkpoint(cfg.checkpoint_path);
  const RoutingService service = RoutingService::from_file(
      cfg.checkpoint_path, make_client(cfg, input_dim(probe.policy)));
  HttpGateway gateway(service);
  const int bound = gateway.bind(host, port);
  g_gateway.store(&gateway);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  out << "serving " << service.version() << " on " << host << ":" << bound << std::endl;
  gateway.listen();
  g_gateway.store(nullptr);
}

// ---- report --------------------------------------------------------------

struct ReportOpts {
  std::vector<std::string> inputs;
};

void cmd_report(const CommonOpts& c, const ReportOpts& r, Manifest& m, std::ostream& out) {
  static const std::vector<std::string> kColumns{"lambda",   "seed_count", "acc_mean",
                                                 "acc_std",  "cost_mean",  "cost_std",
                                                 "policy",   "condition"};
  if (r.inputs.empty()) {
    throw ConfigError("report needs at least one --input");
  }
  std::map<std::pair<std::string, std::string>, std::vector<FrontierPoint>> series;
  for (const std::string& path : r.inputs) {
    m.input(path);
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) {
      throw ParseError(path + ": empty report");
    }
    std::vector<std::string> header;
    {
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, '\t')) header.push_back(cell);
    }
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const std::string& name : kColumns) {
      if (!col.count(name)) {
        throw SchemaError(path + ": missing column '" + name + "'");
      }
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, '\t')) cells.push_back(cell);
      if (cells.size() < header.size()) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": too few columns");
      }
      try {
        FrontierPoint p;
        p.lambda = std::stod(cells[col["lambda"]]);
        p.seed_count = std::stoul(cells[col["seed_count"]]);
        p.accuracy_mean = std::stod(cells[col["acc_mean"]]);
        p.accuracy_std = std::stod(cells[col["acc_std"]]);
        p.cost_mean = std::stod(cells[col["cost_mean"]]);
        p.cost_std = std::stod(cells[col["cost_std"]]);
        series[{cells[col["policy"]], cells[col["condition"]]}].push_back(p);
      } catch (const std::logic_error&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number");
      }
    }
  }
  prepare_out_dir(c.out, c.force);
  std::ofstream f(fs::path(c.out) / "report.tsv");
  f.precision(10);
  f << "policy\tcondition\tpoints\tpareto_points\tbest_acc\tmin_cost\tspearman_lambda_cost\n";
  std::ofstream pf(fs::path(c.out) / "pareto.tsv");
  pf.precision(10);
  pf << "lambda\tseed_count\tacc_mean\tacc_std\tcost_mean\tcost_std\tpolicy\tcondition\n";
  for (const auto& [key, points] : series) {
    const auto frontier = pareto_frontier(points);
    double best_acc = 0.0, min_cost = std::numeric_limits<double>::infinity();
    std::vector<double> lambdas, costs;
    for (const FrontierPoint& p : points) {
      best_acc = std::max(best_acc, p.accuracy_mean);
      min_cost = std::min(min_cost, p.cost_mean);
      lambdas.push_back(p.lambda);
      costs.push_back(p.cost_mean);
    }
    f << key.first << '\t' << key.second << '\t' << points.size() << '\t' << frontier.size()
      << '\t' << best_acc << '\t' << min_cost << '\t';
    if (points.size() >= 2) {
      f << spearman(lambdas, costs);
    } else {
      f << "nan";
    }
    f << '\n';
    for (const FrontierPoint& p : frontier) {
      pf << p.lambda << '\t' << p.seed_count << '\t' << p.accuracy_mean << '\t' << p.accuracy_std
         << '\t' << p.cost_mean << '\t' << p.cost_std << '\t' << key.first << '\t' << key.second
         << '\n';
    }
  }
  out << "report: " << series.size() << " series from " << r.inputs.size() << " file(s)\n";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const ValueError*>(&e) || dynamic_cast<const SizeError*>(&e) ||
      dynamic_cast<const ContractError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
      dynamic_cast<const StatisticalError*>(&e)) {
    return kExitUser;
  }
  return kExitInternal;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-bottleneck LLM router: data, training, studies and serving", "cbr"};
  app.require_subcommand(1);

  CommonOpts c;
  GenOpts gen;
  TrainOpts train;
  SweepOpts sweep;
  AblateOpts ablate;
  InterveneOpts intervene;
  CounterfactualOpts cf;
  BenchOpts bench;
  RouteOpts route;
  ServeOpts serve;
  ReportOpts report;
  double lambda = 0.0;

  auto seed = [&](CLI::App* s) { s->add_option("--seed", c.seed, "Seed for all randomness"); };
  auto out_dir = [&](CLI::App* s) {
    s->add_option("--out", c.out, "Output directory")->required();
    s->add_flag("--force", c.force, "Overwrite a non-empty output directory");
  };
  auto data = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--data", c.data, "Dataset directory");
    if (required) o->required();
    s->add_option("--split-seed", c.split_seed, "Seed of the 80/10/10 split");
  };

  auto* s_gen = app.add_subcommand("gen-data", "Generate a planted synthetic dataset");
  s_gen->add_option("--spec", gen.spec, "Generator spec (JSON)");
  s_gen->add_option("--records", gen.records, "Override the record count");
  seed(s_gen);
  out_dir(s_gen);

  auto* s_train = app.add_subcommand("train", "Train one routing policy");
  data(s_train, true);
  s_train->add_option("--policy", c.policy, "bottleneck|blackbox|knn|factorization|random");
  s_train->add_option("--config", c.config, "Training config (JSON)");
  auto* lambda_opt = s_train->add_option("--lambda", lambda, "Cost regularization weight");
  s_train->add_option("--ablate", train.ablate, "Concept group to remove");
  seed(s_train);
  out_dir(s_train);

  auto* s_sweep = app.add_subcommand("sweep", "Lambda sweep over several seeds");
  data(s_sweep, true);
  s_sweep->add_option("--policy", c.policy, "Policy to sweep");
  s_sweep->add_option("--config", c.config, "Training config (JSON)");
  s_sweep->add_option("--lambda-grid", sweep.grid, "'default' or a comma list");
  s_sweep->add_option("--seeds", sweep.seeds, "Seeds per lambda")->check(CLI::PositiveNumber);
  s_sweep->add_option("--jobs", sweep.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  s_sweep->add_flag("--keep-checkpoints", sweep.keep_checkpoints, "Save every run's checkpoint");
  seed(s_sweep);
  out_dir(s_sweep);

  auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  data(s_eval, true);
  s_eval->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
  s_eval->add_option("--policy", c.policy, "Use 'oracle' to evaluate the hindsight policy");
  out_dir(s_eval);

  auto* s_ablate = app.add_subcommand("ablate", "Concept-group ablation study");
  data(s_ablate, true);
  s_ablate->add_option("--groups", ablate.groups, "Comma list of groups")->required();
  s_ablate->add_option("--lambdas", ablate.lambdas, "Comma list of lambdas");
  s_ablate->add_option("--seeds", ablate.seeds, "Seeds per condition")->check(CLI::PositiveNumber);
  s_ablate->add_option("--config", c.config, "Training config (JSON)");
  seed(s_ablate);
  out_dir(s_ablate);

  auto* s_int = app.add_subcommand("intervene", "Gold-concept intervention study");
  data(s_int, true);
  s_int->add_option("--checkpoint", intervene.checkpoints, "Bottleneck checkpoint(s)")->required();
  s_int->add_option("--group", intervene.group, "Concept group to replace with gold values");
  out_dir(s_int);

  auto* s_cf = app.add_subcommand("counterfactual", "Programming-language flip study");
  s_cf->add_option("--checkpoint", c.checkpoint, "Bottleneck checkpoint")->required();
  s_cf->add_option("--source", cf.source, "Source language")->required();
  s_cf->add_option("--target", cf.target, "Target language")->required();
  s_cf->add_option("--samples", cf.samples, "Concept vectors")->check(CLI::PositiveNumber);
  s_cf->add_option("--targets", cf.targets, "Comma list of target model names");
  s_cf->add_option("--spec", cf.spec, "Generator spec naming planted specialists");
  s_cf->add_option("--top", cf.top, "Specialists taken from --spec");
  seed(s_cf);
  out_dir(s_cf);

  auto* s_bench = app.add_subcommand("bench", "Batched inference throughput");
  s_bench->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
  s_bench->add_option("--data", c.data, "Dataset directory (default: random embeddings)");
  s_bench->add_option("--reps", bench.reps, "Repetitions")->check(CLI::PositiveNumber);
  s_bench->add_option("--queries", bench.queries, "Random queries when --data is absent");
  s_bench->add_flag("--parallel", bench.parallel, "Use the OpenMP kernels");
  seed(s_bench);

  auto* s_route = app.add_subcommand("route", "Route one query");
  s_route->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
  s_route->add_option("--embedding", route.embedding, "Comma-separated embedding");
  s_route->add_option("--text", route.text, "Query text (needs an embedding client)");
  s_route->add_option("--request", route.request, "Request JSON file");
  s_route->add_option("--group", route.group, "Intervention group");
  s_route->add_option("--values", route.values, "Intervention values (comma list)");
  s_route->add_flag("--verbose", route.verbose, "Include the full concept vector");
  s_route->add_flag("--mock-embeddings", route.mock_embeddings, "Embed text with the mock client");
  seed(s_route);

  auto* s_serve = app.add_subcommand("serve", "Run the HTTP routing gateway");
  s_serve->add_option("--config", c.config, "Service config (JSON)");
  s_serve->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
  s_serve->add_option("--bind", serve.bind, "host:port");
  s_serve->add_flag("--mock-embeddings", serve.mock_embeddings, "Embed text with the mock client");

  auto* s_report = app.add_subcommand("report", "Merge tabular reports and extract frontiers");
  s_report->add_option("--input", report.inputs, "Report file(s)")->required();
  out_dir(s_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* failing = &app;
    for (CLI::App* s : app.get_subcommands()) failing = s;
    err << failing->help();
    return kExitUser;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (lambda_opt->count() > 0) {
    c.lambda = lambda;
  }
  Manifest m;
  m.command = sub->get_name();
  m.args = collect_args(*sub);
  m.seed = c.seed;
  const std::string name = sub->get_name();
  try {
    if (name == "gen-data") cmd_gen_data(c, gen, m, out);
    else if (name == "train") cmd_train(c, train, m, out);
    else if (name == "sweep") cmd_sweep(c, sweep, m, out, err);
    else if (name == "eval") cmd_eval(c, m, out);
    else if (name == "ablate") cmd_ablate(c, ablate, m, out);
    else if (name == "intervene") cmd_intervene(c, intervene, m, out);
    else if (name == "counterfactual") cmd_counterfactual(c, cf, m, out);
    else if (name == "bench") {
      cmd_bench(c, bench, out);
      return kExitOk;
    } else if (name == "route") {
      return cmd_route(c, route, out);
    } else if (name == "serve") {
      cmd_serve(c, serve, out);
      return kExitOk;
    } else if (name == "report") cmd_report(c, report, m, out);
    m.write(c.out);
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace cbr
