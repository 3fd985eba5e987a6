#include <fstream>
#include <sstream>

#include "doctest.h"

#include "cbr/checkpoint.hpp"
#include "cbr/cli.hpp"
#include "cbr/training.hpp"
#include "support.hpp"

using namespace cbr;
using cbr::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cbr");
  std::vector<const char*> argv;
  for (const std::string& a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out, err;
  Run r;
  r.code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

// Tiny heads so every subcommand finishes in well under a second.
std::string fast_config_file(const TempDir& dir) {
  TrainConfig c = cbr::test::fast_config();
  c.concept_head.max_epochs = 3;
  c.suitability_head.max_epochs = 3;
  c.blackbox_head.max_epochs = 2;
  c.factorization_head.max_epochs = 2;
  c.knn_neighbors = 5;
  const fs::path p = dir / "train.json";
  write(p, train_config_to_json(c).dump());
  return p.string();
}

// One generated dataset and trained bottleneck shared by the cases below.
struct Workspace {
  TempDir dir;
  std::string data = (dir / "data").string();
  std::string config = fast_config_file(dir);
  std::string model = (dir / "model").string();
  std::string ckpt = (dir / "model" / "model.ckpt").string();

  Workspace() {
    REQUIRE(cli({"gen-data", "--records", "300", "--seed", "7", "--out", data}).code == 0);
    REQUIRE(cli({"train", "--data", data, "--config", config, "--seed", "1", "--out", model})
                .code == 0);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == kExitUser);
  CHECK(cli({"fly"}).code == kExitUser);
  CHECK(cli({"gen-data", "--out", "x", "--bogus"}).code == kExitUser);
  const Run train = cli({"train", "--policy", "bottleneck", "--out", "x"});
  CHECK(train.code == kExitUser);
  CHECK(train.err.find("--data") != std::string::npos);
  const Run help = cli({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("gen-data") != std::string::npos);
}

TEST_CASE("gen-data is byte-identical across runs and writes a manifest") {
  const TempDir dir;
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(cli({"gen-data", "--records", "120", "--seed", "7", "--out", a}).code == 0);
  REQUIRE(cli({"gen-data", "--records", "120", "--seed", "7", "--out", b}).code == 0);
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().filename() == "manifest.json") {
      continue;
    }
    CHECK(slurp(e.path()) == slurp(fs::path(b) / e.path().filename()));
  }
  const auto manifest = nlohmann::json::parse(slurp(fs::path(a) / "manifest.json"));
  CHECK(manifest["command"] == "gen-data");
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["outputs"].contains("records.jsonl"));

  // Same flags and seed into the same directory: identical manifest.
  const std::string before = slurp(fs::path(a) / "manifest.json");
  CHECK(cli({"gen-data", "--records", "120", "--seed", "7", "--out", a}).code == kExitUser);
  REQUIRE(cli({"gen-data", "--records", "120", "--seed", "7", "--out", a, "--force"}).code == 0);
  const auto again = nlohmann::json::parse(slurp(fs::path(a) / "manifest.json"));
  CHECK(again["outputs"] == manifest["outputs"]);
  CHECK(again["config_hash"] == manifest["config_hash"]);

  const std::string c = (dir / "c").string();
  REQUIRE(cli({"gen-data", "--records", "120", "--seed", "8", "--out", c}).code == 0);
  CHECK(slurp(fs::path(a) / "records.jsonl") != slurp(fs::path(c) / "records.jsonl"));

  write(dir / "bad_spec.json", "{\"n_records\": -3");
  CHECK(cli({"gen-data", "--spec", (dir / "bad_spec.json").string(), "--out",
             (dir / "d").string()})
            .code == kExitUser);
}

TEST_CASE("train writes a checkpoint, curves and metrics") {
  Workspace& w = workspace();
  const fs::path model(w.model);
  CHECK(fs::exists(model / "model.ckpt"));
  CHECK(fs::exists(model / "curves.tsv"));
  CHECK(fs::exists(model / "manifest.json"));
  const auto metrics = nlohmann::json::parse(slurp(model / "metrics.json"));
  CHECK(metrics["policy"] == "bottleneck");
  CHECK(metrics["accuracy"].get<double>() <= metrics["oracle_accuracy"].get<double>());

  // Retraining with identical flags reproduces the checkpoint bytes.
  const std::string again = (w.dir / "again").string();
  REQUIRE(cli({"train", "--data", w.data, "--config", w.config, "--seed", "1", "--out", again})
              .code == 0);
  CHECK(slurp(model / "model.ckpt") == slurp(fs::path(again) / "model.ckpt"));
  const auto m1 = nlohmann::json::parse(slurp(model / "manifest.json"));
  const auto m2 = nlohmann::json::parse(slurp(fs::path(again) / "manifest.json"));
  CHECK(m1["outputs"] == m2["outputs"]);
  CHECK(m1["config_hash"] == m2["config_hash"]);

  for (const char* policy : {"blackbox", "knn", "factorization", "random"}) {
    const std::string out = (w.dir / (std::string("p_") + policy)).string();
    CHECK(cli({"train", "--data", w.data, "--config", w.config, "--policy", policy, "--out", out})
              .code == 0);
  }
  CHECK(cli({"train", "--data", w.data, "--policy", "oracle", "--out", (w.dir / "o").string()})
            .code == kExitUser);
  CHECK(cli({"train", "--data", (w.dir / "nowhere").string(), "--out", (w.dir / "n").string()})
            .code == kExitUser);
}

TEST_CASE("training divergence is an internal error") {
  Workspace& w = workspace();
  TrainConfig c = train_config_from_json(nlohmann::json::parse(slurp(w.config)));
  c.blackbox_head.learning_rate = 1e300;
  write(w.dir / "diverge.json", train_config_to_json(c).dump());
  const Run r = cli({"train", "--data", w.data, "--config", (w.dir / "diverge.json").string(),
                     "--policy", "blackbox", "--out", (w.dir / "diverged").string()});
  CHECK(r.code == kExitInternal);
}

TEST_CASE("eval") {
  Workspace& w = workspace();
  const std::string out = (w.dir / "eval").string();
  REQUIRE(cli({"eval", "--data", w.data, "--checkpoint", w.ckpt, "--out", out}).code == 0);
  CHECK(fs::exists(fs::path(out) / "concept_metrics.tsv"));
  CHECK(cli({"eval", "--data", w.data, "--policy", "oracle", "--out", (w.dir / "eo").string()})
            .code == 0);
  CHECK(cli({"eval", "--data", w.data, "--out", (w.dir / "en").string()}).code == kExitUser);
}

TEST_CASE("sweep and report") {
  Workspace& w = workspace();
  const std::string out = (w.dir / "sweep").string();
  REQUIRE(cli({"sweep", "--data", w.data, "--config", w.config, "--lambda-grid", "0,4",
               "--seeds", "2", "--jobs", "2", "--out", out})
              .code == 0);
  for (const char* f : {"runs.tsv", "frontier.tsv", "pareto.tsv", "assignment.tsv",
                        "summary.json", "manifest.json"}) {
    CHECK(fs::exists(fs::path(out) / f));
  }
  CHECK(nlohmann::json::parse(slurp(fs::path(out) / "summary.json"))["runs"] == 4);
  CHECK(SweepGrid::default_grid().lambdas.size() * 5 == 100);

  const std::string rep = (w.dir / "report").string();
  REQUIRE(cli({"report", "--input", (fs::path(out) / "frontier.tsv").string(), "--out", rep})
              .code == 0);
  CHECK(fs::exists(fs::path(rep) / "report.tsv"));
  write(w.dir / "bad.tsv", "lambda\tacc_mean\n0\t1\n");
  CHECK(cli({"report", "--input", (w.dir / "bad.tsv").string(), "--out",
             (w.dir / "r2").string()})
            .code == kExitUser);
  CHECK(cli({"sweep", "--data", w.data, "--lambda-grid", "0,x", "--out", (w.dir / "s2").string()})
            .code == kExitUser);
}

TEST_CASE("studies: ablate, intervene, counterfactual") {
  Workspace& w = workspace();
  const std::string ab = (w.dir / "ablate").string();
  REQUIRE(cli({"ablate", "--data", w.data, "--config", w.config, "--groups", "domains",
               "--lambdas", "0", "--seeds", "2", "--out", ab})
              .code == 0);
  CHECK(fs::exists(fs::path(ab) / "ablation.tsv"));
  CHECK(fs::exists(fs::path(ab) / "significance.tsv"));

  const std::string iv = (w.dir / "intervene").string();
  REQUIRE(cli({"intervene", "--data", w.data, "--checkpoint", w.ckpt, "--out", iv}).code == 0);
  CHECK(fs::exists(fs::path(iv) / "intervention.tsv"));

  const std::string cf = (w.dir / "cf").string();
  const Run r = cli({"counterfactual", "--checkpoint", w.ckpt, "--source", "python", "--target",
                     "rust", "--spec", (fs::path(w.data) / "spec.json").string(), "--samples",
                     "50", "--out", cf});
  REQUIRE(r.code == 0);
  const auto result = nlohmann::json::parse(slurp(fs::path(cf) / "counterfactual.json"));
  CHECK(result["target_models"] == nlohmann::json::array({"llama-4-scout"}));
  CHECK(cli({"counterfactual", "--checkpoint", w.ckpt, "--source", "python", "--target", "rust",
             "--out", (w.dir / "cf2").string()})
            .code == kExitUser);
  CHECK(cli({"counterfactual", "--checkpoint", w.ckpt, "--source", "python", "--target", "cobol",
             "--targets", "o3", "--out", (w.dir / "cf3").string()})
            .code == kExitUser);
}

TEST_CASE("route and bench") {
  Workspace& w = workspace();
  std::string zeros;
  for (int i = 0; i < 32; ++i) {
    zeros += i == 0 ? "0" : ",0";
  }
  const Run ok = cli({"route", "--checkpoint", w.ckpt, "--embedding", zeros});
  REQUIRE(ok.code == 0);
  const auto reply = nlohmann::json::parse(ok.out);
  CHECK(reply.contains("rationale"));
  CHECK(cli({"route", "--checkpoint", w.ckpt, "--embedding", zeros}).out == ok.out);
  CHECK(cli({"route", "--checkpoint", w.ckpt, "--embedding", "1,2"}).code == kExitUser);
  CHECK(cli({"route", "--checkpoint", w.ckpt, "--text", "hello"}).code == kExitUser);
  CHECK(cli({"route", "--checkpoint", w.ckpt, "--text", "hello", "--mock-embeddings"}).code == 0);
  CHECK(cli({"route", "--checkpoint", w.ckpt, "--embedding", zeros, "--group", "complexity",
             "--values", "1,1,1"})
            .code == 0);
  CHECK(cli({"route", "--checkpoint", (w.dir / "missing.ckpt").string(), "--embedding", zeros})
            .code == kExitUser);

  const Run bench = cli({"bench", "--checkpoint", w.ckpt, "--reps", "2", "--queries", "100"});
  REQUIRE(bench.code == 0);
  CHECK(nlohmann::json::parse(bench.out)["queries"] == 100);
  CHECK(cli({"bench", "--checkpoint", w.ckpt, "--reps", "0"}).code == kExitUser);

  CHECK(cli({"serve", "--bind", "127.0.0.1:0"}).code == kExitUser);
  CHECK(cli({"serve", "--checkpoint", w.ckpt, "--bind", "nonsense"}).code == kExitUser);
}
