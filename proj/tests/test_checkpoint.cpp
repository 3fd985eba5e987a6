#include <cstring>
#include <fstream>

#include "doctest.h"

#include "cbr/checkpoint.hpp"
#include "cbr/errors.hpp"
#include "cbr/training.hpp"
#include "support.hpp"

using namespace cbr;
using cbr::test::fast_config;
using cbr::test::random_matrix;
using cbr::test::random_params;
using cbr::test::small_spec;
using cbr::test::TempDir;

namespace {

DenseParams float_params(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
  DenseParams p = random_params(in, hidden, out, seed);
  p.round_to_float();
  return p;
}

Matrix float_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m = random_matrix(rows, cols, seed);
  for (double& v : m.flat()) {
    v = static_cast<double>(static_cast<float>(v));
  }
  return m;
}

Checkpoint bottleneck_checkpoint() {
  const GeneratorSpec spec = small_spec();
  BottleneckRouter r;
  r.schema = spec.schema();
  r.catalog = spec.catalog();
  r.concept_head = float_params(spec.embedding_dim, 16, r.schema.width(), 1);
  r.suitability_head = float_params(r.schema.width(), 12, r.catalog.size(), 2);
  TrainingMetadata meta;
  meta.lambda = 0.3;
  meta.seed = 77;
  meta.hyperparameters = {{"hidden", 16}};
  return {r, meta};
}

// Replaces the trailing checksum so structural edits reach the parser.
std::string reseal(std::string bytes) {
  bytes.resize(bytes.size() - 8);
  const std::uint64_t sum = fnv1a(bytes);
  char buf[8];
  std::memcpy(buf, &sum, 8);
  bytes.append(buf, 8);
  return bytes;
}

void check_same(const Checkpoint& a, const Checkpoint& b) {
  CHECK(a.policy == b.policy);
  CHECK(a.metadata == b.metadata);
}

}  // namespace

TEST_CASE("checkpoint roundtrip is bit-exact for every policy kind") {
  const ModelCatalog cat = small_spec().catalog();
  std::vector<Checkpoint> all{bottleneck_checkpoint()};
  all.push_back({BlackBoxRouter{float_params(32, 20, cat.size(), 3), cat}, {}});
  all.push_back({KnnRouter{float_matrix(15, 32, 4), Matrix(15, cat.size(), 1.0), 5, cat}, {}});
  all.push_back({FactorizationRouter{float_params(32, 10, 8, 5), float_matrix(cat.size(), 8, 6),
                                     cat},
                 {}});
  all.push_back({RandomRouter{0xfeedbeefcafeULL, cat}, {}});
  TempDir dir;
  for (const Checkpoint& ck : all) {
    const std::string bytes = serialize_checkpoint(ck);
    check_same(deserialize_checkpoint(bytes), ck);
    save_checkpoint(dir / "model.ckpt", ck);
    const Checkpoint loaded = load_checkpoint(dir / "model.ckpt");
    check_same(loaded, ck);
    CHECK(serialize_checkpoint(loaded) == bytes);
  }
}

TEST_CASE("trained policies roundtrip bit-exactly") {
  const SyntheticDataset s = synthesize_dataset(small_spec(300), 9);
  const DatasetSplit split = split_dataset(300, 0);
  TrainConfig config = fast_config();
  config.concept_head.max_epochs = 3;
  config.suitability_head.max_epochs = 3;
  config.blackbox_head.max_epochs = 3;
  config.factorization_head.max_epochs = 3;
  for (PolicyKind kind : {PolicyKind::bottleneck, PolicyKind::blackbox, PolicyKind::factorization,
                          PolicyKind::knn}) {
    const TrainedPolicy t = train_policy(kind, s.dataset, split, config);
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(t.checkpoint));
    check_same(back, t.checkpoint);
  }
}

TEST_CASE("checkpoint version tracks the bytes") {
  const std::string a = serialize_checkpoint(bottleneck_checkpoint());
  CHECK(checkpoint_version(a) == checkpoint_version(a));
  CHECK(checkpoint_version(a).rfind("v1-", 0) == 0);
  Checkpoint other = bottleneck_checkpoint();
  other.metadata.lambda = 0.4;
  CHECK(checkpoint_version(serialize_checkpoint(other)) != checkpoint_version(a));
}

TEST_CASE("checkpoint info") {
  const Checkpoint ck = bottleneck_checkpoint();
  const auto info = checkpoint_info(ck);
  CHECK(info.at("policy") == "bottleneck");
  CHECK(info.at("param_count") == param_count(ck.policy));
  CHECK(info.at("training").at("lambda") == 0.3);
  CHECK(info.at("training").at("cost_term") == "softmax-expected-cost");
  CHECK(info.at("embedding_dim") == 32);
  CHECK(info.contains("schema"));
  CHECK_THROWS_AS(checkpoint_info({OracleRouter{small_spec().catalog()}, {}}), ContractError);
  CHECK_THROWS_AS(serialize_checkpoint({OracleRouter{small_spec().catalog()}, {}}),
                  ContractError);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const std::string good = serialize_checkpoint(bottleneck_checkpoint());

  SUBCASE("bad magic") {
    std::string b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(b), IntegrityError);
    CHECK_THROWS_AS(deserialize_checkpoint(""), IntegrityError);
  }
  SUBCASE("flipped payload bit") {
    std::string b = good;
    b[b.size() - 100] ^= 0x10;
    CHECK_THROWS_AS(deserialize_checkpoint(b), IntegrityError);
  }
  SUBCASE("truncated") {
    for (std::size_t len : {std::size_t{10}, std::size_t{24}, good.size() / 2, good.size() - 1}) {
      CHECK_THROWS_AS(deserialize_checkpoint(good.substr(0, len)), IntegrityError);
      CHECK_THROWS_AS(deserialize_checkpoint(reseal(good.substr(0, len) + "\0\0\0\0\0\0\0\0")),
                      IntegrityError);
    }
  }
  SUBCASE("unsupported version") {
    std::string b = good;
    b[8] = 9;
    CHECK_THROWS_AS(deserialize_checkpoint(reseal(b)), IntegrityError);
  }
  SUBCASE("trailing bytes") {
    std::string b = good.substr(0, good.size() - 8) + "junk" + good.substr(good.size() - 8);
    CHECK_THROWS_AS(deserialize_checkpoint(reseal(b)), IntegrityError);
  }
  SUBCASE("metadata edits") {
    std::uint64_t meta_len;
    std::memcpy(&meta_len, good.data() + 12, 8);
    const std::string meta = good.substr(20, meta_len);
    auto with_meta = [&](std::string m) {
      std::string b = good.substr(0, 12);
      const std::uint64_t len = m.size();
      char buf[8];
      std::memcpy(buf, &len, 8);
      b.append(buf, 8);
      b += m;
      b += good.substr(20 + meta_len);
      return reseal(b);
    };
    CHECK_NOTHROW(deserialize_checkpoint(with_meta(meta)));
    std::string m = meta;
    m.replace(m.find("\"bottleneck\""), 12, "\"oracle\"    ");
    CHECK_THROWS_AS(deserialize_checkpoint(with_meta(m)), IntegrityError);
    m = meta;
    m.replace(m.find("\"bottleneck\""), 12, "\"nonsense\"  ");
    CHECK_THROWS_AS(deserialize_checkpoint(with_meta(m)), IntegrityError);
    CHECK_THROWS_AS(deserialize_checkpoint(with_meta("{" + meta)), IntegrityError);
    m = meta;
    m.replace(m.find("\"concept_head.weight1\""), 22, "\"concept_head.weightX\"");
    CHECK_THROWS_AS(deserialize_checkpoint(with_meta(m)), IntegrityError);
  }
}

TEST_CASE("checkpoint file errors") {
  TempDir dir;
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), ConfigError);
  std::ofstream(dir / "junk.ckpt") << "definitely not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), IntegrityError);
}
