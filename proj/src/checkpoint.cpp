#include "cbr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cbr/errors.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'B', 'R', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) {
    throw IntegrityError("checkpoint truncated");
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

// Collects arrays on save and hands them back in order on load.
struct ArrayTable {
  json shapes = json::array();
  std::string payload;

  void add(const std::string& name, std::size_t rows, std::size_t cols,
           std::span<const double> values) {
    shapes.push_back({{"name", name}, {"rows", rows}, {"cols", cols}});
    for (double v : values) {
      put(payload, static_cast<float>(v));
    }
  }
  void add(const std::string& name, const Matrix& m) { add(name, m.rows(), m.cols(), m.flat()); }
  void add(const std::string& name, const Vector& v) { add(name, 1, v.size(), v); }
  void add_params(const std::string& prefix, const DenseParams& p) {
    add(prefix + ".weight1", p.weight1);
    add(prefix + ".bias1", p.bias1);
    add(prefix + ".weight2", p.weight2);
    add(prefix + ".bias2", p.bias2);
  }
};

struct ArrayReader {
  const json& shapes;
  std::string_view bytes;
  std::size_t pos;
  std::size_t next = 0;

  Matrix matrix(const std::string& name) {
    if (next >= shapes.size()) {
      throw IntegrityError("checkpoint missing array '" + name + "'");
    }
    const json& s = shapes.at(next++);
    if (s.at("name").get<std::string>() != name) {
      throw IntegrityError("checkpoint array order mismatch at '" + name + "'");
    }
    Matrix m(s.at("rows").get<std::size_t>(), s.at("cols").get<std::size_t>());
    for (double& v : m.flat()) {
      v = static_cast<double>(take<float>(bytes, pos));
    }
    return m;
  }
  Vector vector(const std::string& name) {
    Matrix m = matrix(name);
    auto flat = m.flat();
    return Vector(flat.begin(), flat.end());
  }
  DenseParams params(const std::string& prefix) {
    DenseParams p;
    p.weight1 = matrix(prefix + ".weight1");
    p.bias1 = vector(prefix + ".bias1");
    p.weight2 = matrix(prefix + ".weight2");
    p.bias2 = vector(prefix + ".bias2");
    if (p.bias1.size() != p.weight1.cols() || p.weight2.rows() != p.weight1.cols() ||
        p.bias2.size() != p.weight2.cols()) {
      throw IntegrityError("checkpoint parameter shapes inconsistent for '" + prefix + "'");
    }
    return p;
  }
};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

json metadata_json(const TrainingMetadata& m) {
  return {{"lambda", m.lambda},
          {"seed", m.seed},
          {"hyperparameters", m.hyperparameters},
          {"cost_term", m.cost_term},
          {"ablated_group", m.ablated_group}};
}

TrainingMetadata metadata_from_json(const json& j) {
  TrainingMetadata m;
  m.lambda = j.at("lambda").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.hyperparameters = j.at("hyperparameters");
  m.cost_term = j.at("cost_term").get<std::string>();
  m.ablated_group = j.value("ablated_group", std::string());
  return m;
}

}  // namespace

json checkpoint_info(const Checkpoint& checkpoint) {
  const Policy& policy = checkpoint.policy;
  json info = {{"policy", to_string(kind_of(policy))},
               {"catalog", catalog_to_json(catalog_of(policy))},
               {"training", metadata_json(checkpoint.metadata)},
               {"param_count", param_count(policy)}};
  std::visit(overloaded{
                 [&](const BottleneckRouter& r) {
                   info["schema"] = schema_to_json(r.schema);
                   info["embedding_dim"] = r.concept_head.in_dim();
                 },
                 [&](const BlackBoxRouter& r) { info["embedding_dim"] = r.head.in_dim(); },
                 [&](const KnnRouter& r) {
                   info["embedding_dim"] = r.embeddings.cols();
                   info["neighbors"] = r.neighbors;
                 },
                 [&](const FactorizationRouter& r) {
                   info["embedding_dim"] = r.projection.in_dim();
                 },
                 [&](const RandomRouter& r) { info["random_seed"] = r.seed; },
                 [&](const OracleRouter&) {
                   throw ContractError("the oracle policy cannot be checkpointed");
                 },
             },
             policy);
  return info;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  json meta = checkpoint_info(checkpoint);
  ArrayTable arrays;
  std::visit(overloaded{
                 [&](const BottleneckRouter& r) {
                   arrays.add_params("concept_head", r.concept_head);
                   arrays.add_params("suitability_head", r.suitability_head);
                 },
                 [&](const BlackBoxRouter& r) { arrays.add_params("head", r.head); },
                 [&](const KnnRouter& r) {
                   arrays.add("embeddings", r.embeddings);
                   arrays.add("correctness", r.correctness);
                 },
                 [&](const FactorizationRouter& r) {
                   arrays.add_params("projection", r.projection);
                   arrays.add("model_embeddings", r.model_embeddings);
                 },
                 [](const RandomRouter&) {},
                 [](const OracleRouter&) {},
             },
             checkpoint.policy);
  meta["arrays"] = arrays.shapes;
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kCheckpointFormatVersion);
  put(out, static_cast<std::uint64_t>(meta_text.size()));
  out += meta_text;
  out += arrays.payload;
  put(out, fnv1a(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t)) {
    throw IntegrityError("checkpoint truncated");
  }
  std::size_t sum_pos = bytes.size() - sizeof(std::uint64_t);
  const auto stored_sum = take<std::uint64_t>(bytes, sum_pos);
  bytes.remove_suffix(sizeof(std::uint64_t));
  if (fnv1a(bytes) != stored_sum) {
    throw IntegrityError("checkpoint checksum mismatch");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointFormatVersion) {
    throw IntegrityError("unsupported checkpoint format version " + std::to_string(version));
  }
  const auto meta_len = take<std::uint64_t>(bytes, pos);
  if (pos + meta_len > bytes.size()) {
    throw IntegrityError("checkpoint truncated in metadata");
  }
  json meta;
  try {
    meta = json::parse(bytes.substr(pos, meta_len));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
  }
  pos += meta_len;

  Checkpoint ck;
  try {
    ck.metadata = metadata_from_json(meta.at("training"));
    const ModelCatalog catalog = catalog_from_json(meta.at("catalog"));
    ArrayReader reader{meta.at("arrays"), bytes, pos};
    switch (policy_kind_from_string(meta.at("policy").get<std::string>())) {
      case PolicyKind::bottleneck: {
        BottleneckRouter r;
        r.concept_head = reader.params("concept_head");
        r.suitability_head = reader.params("suitability_head");
        r.schema = schema_from_json(meta.at("schema"));
        r.catalog = catalog;
        if (r.concept_head.out_dim() != r.schema.width() ||
            r.suitability_head.in_dim() != r.schema.width() ||
            r.suitability_head.out_dim() != catalog.size()) {
          throw IntegrityError("checkpoint heads do not match schema/catalog");
        }
        ck.policy = std::move(r);
        break;
      }
      case PolicyKind::blackbox: {
        BlackBoxRouter r{reader.params("head"), catalog};
        if (r.head.out_dim() != catalog.size()) {
          throw IntegrityError("checkpoint head does not match catalog");
        }
        ck.policy = std::move(r);
        break;
      }
      case PolicyKind::knn: {
        KnnRouter r;
        r.embeddings = reader.matrix("embeddings");
        r.correctness = reader.matrix("correctness");
        r.neighbors = meta.at("neighbors").get<std::size_t>();
        r.catalog = catalog;
        ck.policy = std::move(r);
        break;
      }
      case PolicyKind::factorization: {
        FactorizationRouter r;
        r.projection = reader.params("projection");
        r.model_embeddings = reader.matrix("model_embeddings");
        r.catalog = catalog;
        ck.policy = std::move(r);
        break;
      }
      case PolicyKind::random:
        ck.policy = RandomRouter{meta.at("random_seed").get<std::uint64_t>(), catalog};
        break;
      case PolicyKind::oracle:
        throw IntegrityError("checkpoint claims the oracle policy");
    }
    if (reader.pos != bytes.size()) {
      throw IntegrityError("checkpoint has trailing bytes");
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
  } catch (const SchemaError& e) {
    throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write checkpoint " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open checkpoint " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

std::string checkpoint_version(std::string_view bytes) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return "v" + std::to_string(kCheckpointFormatVersion) + "-" + hex;
}

}  // namespace cbr
