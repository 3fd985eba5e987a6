#include "cbr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cbr/errors.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Catalog

std::optional<std::size_t> ModelCatalog::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].name == name) {
      return i;
    }
  }
  return std::nullopt;
}

void ModelCatalog::validate() const {
  if (models.empty()) {
    throw ConfigError("catalog: no models");
  }
  std::set<std::string> names;
  for (const auto& m : models) {
    if (!names.insert(m.name).second) {
      throw ConfigError("catalog: duplicate model name '" + m.name + "'");
    }
    if (!(m.input_price > 0.0) || !(m.output_price > 0.0) || !(m.avg_output_tokens > 0.0)) {
      throw ConfigError("catalog: prices and avg_output_tokens must be positive for '" +
                        m.name + "'");
    }
  }
}

void ModelCatalog::validate_strata() const {
  validate();
  const auto reasoning = std::count_if(models.begin(), models.end(),
                                       [](const ModelEntry& m) { return m.is_reasoning; });
  if (reasoning == 0 || reasoning == static_cast<std::ptrdiff_t>(models.size())) {
    throw ConfigError("catalog: need at least one reasoning and one non-reasoning model");
  }
}

ModelCatalog default_catalog() {
  return ModelCatalog{{
      {"o1", 15.00, 60.00, 147.79, true},
      {"grok-3", 3.00, 15.00, 375.87, true},
      {"grok-4", 3.00, 15.00, 376.66, true},
      {"gpt-4o", 2.50, 10.00, 266.11, false},
      {"llama-3.1-405b", 4.00, 4.00, 220.99, false},
      {"gpt-4.1", 2.00, 8.00, 188.71, false},
      {"o3", 2.00, 8.00, 187.69, true},
      {"o3-mini", 1.10, 4.40, 208.74, true},
      {"o4-mini", 1.10, 4.40, 170.63, true},
      {"gpt-4.1-mini", 0.40, 1.60, 199.58, false},
      {"grok-3-mini", 0.30, 0.50, 294.25, true},
      {"llama-4-maverick-fp8", 0.15, 0.60, 242.39, false},
      {"gpt-4o-mini", 0.15, 0.60, 219.97, false},
      {"llama-3.3-70b", 0.13, 0.39, 221.77, false},
      {"llama-4-scout", 0.08, 0.30, 306.20, false},
      {"gpt-4.1-nano", 0.10, 0.40, 194.82, false},
  }};
}

// ---------------------------------------------------------------------------
// Schema

ConceptSchema::ConceptSchema(std::vector<ConceptGroup> groups) : groups_(std::move(groups)) {
  std::set<std::string> seen;
  std::size_t offset = 0;
  for (auto& g : groups_) {
    const bool known = std::any_of(kGroupNames.begin(), kGroupNames.end(),
                                   [&](const char* n) { return g.name == n; });
    if (!known) {
      throw SchemaError("schema: unknown concept group '" + g.name + "'");
    }
    if (!seen.insert(g.name).second) {
      throw SchemaError("schema: duplicate concept group '" + g.name + "'");
    }
    if (g.labels.empty()) {
      throw SchemaError("schema: group '" + g.name + "' has no labels");
    }
    std::set<std::string> labels(g.labels.begin(), g.labels.end());
    if (labels.size() != g.labels.size()) {
      throw SchemaError("schema: duplicate label in group '" + g.name + "'");
    }
    if (g.name == "complexity") {
      if (g.kind != ConceptKind::continuous || g.width() != 3) {
        throw SchemaError("schema: complexity must be continuous with width 3");
      }
    } else if (g.kind != ConceptKind::binary) {
      throw SchemaError("schema: only the complexity group may be continuous");
    }
    g.offset = offset;
    offset += g.width();
  }
  width_ = offset;
}

bool ConceptSchema::has_group(const std::string& name) const {
  return std::any_of(groups_.begin(), groups_.end(),
                     [&](const ConceptGroup& g) { return g.name == name; });
}

const ConceptGroup& ConceptSchema::group(const std::string& name) const {
  for (const auto& g : groups_) {
    if (g.name == name) {
      return g;
    }
  }
  throw SchemaError("schema: unknown concept group '" + name + "'");
}

std::size_t ConceptSchema::index_of(const std::string& group_name,
                                    const std::string& label) const {
  const ConceptGroup& g = group(group_name);
  const auto it = std::find(g.labels.begin(), g.labels.end(), label);
  if (it == g.labels.end()) {
    throw SchemaError("schema: group '" + group_name + "' has no label '" + label + "'");
  }
  return g.offset + static_cast<std::size_t>(it - g.labels.begin());
}

bool ConceptSchema::is_binary_index(std::size_t index) const {
  for (const auto& g : groups_) {
    if (index >= g.offset && index < g.offset + g.width()) {
      return g.kind == ConceptKind::binary;
    }
  }
  throw SchemaError("schema: concept index out of range");
}

ConceptSchema ConceptSchema::without(const std::string& name) const {
  (void)group(name);
  std::vector<ConceptGroup> kept;
  for (const auto& g : groups_) {
    if (g.name != name) {
      kept.push_back(g);
    }
  }
  if (kept.empty()) {
    throw ConfigError("schema: cannot remove the last concept group");
  }
  return ConceptSchema(std::move(kept));
}

std::vector<std::size_t> ConceptSchema::indices_without(const std::string& name) const {
  const ConceptGroup& removed = group(name);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < width_; ++i) {
    if (i < removed.offset || i >= removed.offset + removed.width()) {
      out.push_back(i);
    }
  }
  return out;
}

Vector select_indices(std::span<const double> values, std::span<const std::size_t> indices) {
  Vector out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    out.push_back(values[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

json schema_to_json(const ConceptSchema& schema) {
  json groups = json::array();
  for (const auto& g : schema.groups()) {
    groups.push_back({{"name", g.name},
                      {"kind", g.kind == ConceptKind::binary ? "binary" : "continuous"},
                      {"labels", g.labels}});
  }
  return {{"groups", groups}};
}

ConceptSchema schema_from_json(const json& j) {
  std::vector<ConceptGroup> groups;
  for (const auto& g : j.at("groups")) {
    ConceptGroup group;
    group.name = g.at("name").get<std::string>();
    const auto kind = g.at("kind").get<std::string>();
    if (kind == "binary") {
      group.kind = ConceptKind::binary;
    } else if (kind == "continuous") {
      group.kind = ConceptKind::continuous;
    } else {
      throw SchemaError("schema: unknown kind '" + kind + "'");
    }
    group.labels = g.at("labels").get<std::vector<std::string>>();
    groups.push_back(std::move(group));
  }
  return ConceptSchema(std::move(groups));
}

json catalog_to_json(const ModelCatalog& catalog) {
  json models = json::array();
  for (const auto& m : catalog.models) {
    models.push_back({{"name", m.name},
                      {"input_price", m.input_price},
                      {"output_price", m.output_price},
                      {"avg_output_tokens", m.avg_output_tokens},
                      {"is_reasoning", m.is_reasoning}});
  }
  return {{"models", models}};
}

namespace {

ModelEntry entry_from_json(const json& m) {
  return ModelEntry{m.at("name").get<std::string>(), m.at("input_price").get<double>(),
                    m.at("output_price").get<double>(), m.at("avg_output_tokens").get<double>(),
                    m.value("is_reasoning", false)};
}

}  // namespace

ModelCatalog catalog_from_json(const json& j) {
  ModelCatalog catalog;
  for (const auto& m : j.at("models")) {
    catalog.models.push_back(entry_from_json(m));
  }
  catalog.validate();
  return catalog;
}

json header_to_json(const DatasetHeader& header) {
  return {{"format", "cbr-dataset/1"},
          {"embedding_dim", header.embedding_dim},
          {"schema", schema_to_json(header.schema)},
          {"catalog", catalog_to_json(header.catalog)}};
}

DatasetHeader header_from_json(const json& j) {
  try {
    DatasetHeader h;
    h.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    h.schema = schema_from_json(j.at("schema"));
    h.catalog = catalog_from_json(j.at("catalog"));
    return h;
  } catch (const json::exception& e) {
    throw ParseError(std::string("dataset header: ") + e.what());
  }
}

json record_to_json(const QueryRecord& record) {
  json j = {{"id", record.id},
            {"embedding", record.embedding},
            {"concepts", record.concepts},
            {"correctness", json::array()},
            {"input_tokens", record.input_tokens}};
  for (auto c : record.correctness) {
    j["correctness"].push_back(static_cast<int>(c));
  }
  if (record.task) {
    j["task"] = *record.task;
  }
  return j;
}

void validate_record(const QueryRecord& record, const DatasetHeader& header) {
  const auto fail = [&](const std::string& what) {
    throw SchemaError("record '" + record.id + "': " + what);
  };
  if (record.embedding.size() != header.embedding_dim) {
    fail("embedding has " + std::to_string(record.embedding.size()) + " entries, expected " +
         std::to_string(header.embedding_dim));
  }
  if (record.concepts.size() != header.schema.width()) {
    fail("concepts has " + std::to_string(record.concepts.size()) + " entries, expected " +
         std::to_string(header.schema.width()));
  }
  if (record.correctness.size() != header.catalog.size()) {
    fail("correctness has " + std::to_string(record.correctness.size()) +
         " entries, expected " + std::to_string(header.catalog.size()));
  }
  if (record.input_tokens < 1) {
    fail("input_tokens must be positive");
  }
  for (double v : record.embedding) {
    if (!std::isfinite(v)) {
      fail("non-finite embedding entry");
    }
  }
  for (std::size_t i = 0; i < record.concepts.size(); ++i) {
    const double v = record.concepts[i];
    if (header.schema.is_binary_index(i)) {
      if (v != 0.0 && v != 1.0) {
        fail("binary concept " + std::to_string(i) + " is not 0 or 1");
      }
    } else if (!(v >= 0.0 && v <= 1.0)) {
      fail("complexity concept " + std::to_string(i) + " outside [0, 1]");
    }
  }
}

namespace {

QueryRecord record_from_json(const json& j) {
  QueryRecord r;
  r.id = j.at("id").get<std::string>();
  r.embedding = j.at("embedding").get<Vector>();
  r.concepts = j.at("concepts").get<Vector>();
  for (const auto& c : j.at("correctness")) {
    if (!c.is_number_integer()) {
      throw ParseError("correctness entries must be integers");
    }
    const auto v = c.get<std::int64_t>();
    if (v != 0 && v != 1) {
      throw ParseError("correctness entries must be 0 or 1");
    }
    r.correctness.push_back(static_cast<std::uint8_t>(v));
  }
  if (!j.at("input_tokens").is_number_integer()) {
    throw ParseError("input_tokens must be an integer");
  }
  r.input_tokens = j.at("input_tokens").get<std::int64_t>();
  if (j.contains("task") && !j.at("task").is_null()) {
    r.task = j.at("task").get<std::string>();
  }
  return r;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write " + path.string());
  }
  out << text;
}

}  // namespace

std::vector<QueryRecord> load_records(const std::filesystem::path& path,
                                      const DatasetHeader& header) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::vector<QueryRecord> records;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    QueryRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    validate_record(r, header);
    if (!ids.insert(r.id).second) {
      throw IntegrityError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" +
                           r.id + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_records(const std::filesystem::path& path, std::span<const QueryRecord> records) {
  std::ostringstream out;
  for (const auto& r : records) {
    out << record_to_json(r).dump() << '\n';
  }
  write_text(path, out.str());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.header = header_from_json(read_json_file(dir / kHeaderFile));
  d.records = load_records(dir / kRecordsFile, d.header);
  return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  write_text(dir / kHeaderFile, header_to_json(dataset.header).dump(2) + "\n");
  save_records(dir / kRecordsFile, dataset.records);
}

// ---------------------------------------------------------------------------
// Labels and costs

std::array<double, 3> derive_complexity_labels(std::span<const std::uint8_t> correctness,
                                               const ModelCatalog& catalog) {
  if (correctness.size() != catalog.size()) {
    throw ShapeError("complexity: correctness width does not match catalog");
  }
  std::size_t reasoning = 0, reasoning_failed = 0, general = 0, general_failed = 0;
  for (std::size_t i = 0; i < correctness.size(); ++i) {
    const bool failed = correctness[i] == 0;
    if (catalog.models[i].is_reasoning) {
      ++reasoning;
      reasoning_failed += failed ? 1 : 0;
    } else {
      ++general;
      general_failed += failed ? 1 : 0;
    }
  }
  if (reasoning == 0 || general == 0) {
    throw ConfigError("complexity: catalog needs reasoning and non-reasoning models");
  }
  return {static_cast<double>(reasoning_failed) / static_cast<double>(reasoning),
          static_cast<double>(general_failed) / static_cast<double>(general),
          static_cast<double>(reasoning_failed + general_failed) /
              static_cast<double>(correctness.size())};
}

Vector cost_vector(std::int64_t input_tokens, const ModelCatalog& catalog) {
  if (input_tokens < 1) {
    throw ValueError("cost: input_tokens must be positive");
  }
  Vector costs(catalog.size());
  const double tokens = static_cast<double>(input_tokens);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& m = catalog.models[i];
    costs[i] = tokens * m.input_price / 1e6 + m.avg_output_tokens * m.output_price / 1e6;
  }
  return costs;
}

Vector cost_vector(const QueryRecord& record, const ModelCatalog& catalog) {
  return cost_vector(record.input_tokens, catalog);
}

Vector normalize_costs(std::span<const double> raw) {
  if (raw.empty()) {
    throw ValueError("normalize_costs: empty cost vector");
  }
  double max = 0.0;
  for (double c : raw) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw ValueError("normalize_costs: costs must be positive and finite");
    }
    max = std::max(max, c);
  }
  Vector out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = raw[i] == max ? 1.0 : raw[i] / max;
  }
  return out;
}

DatasetSplit split_dataset(std::size_t n_records, std::uint64_t seed) {
  if (n_records < 10) {
    throw SizeError("split: need at least 10 records, got " + std::to_string(n_records));
  }
  std::vector<std::size_t> order(n_records);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  const std::size_t n_test = n_records / 10;
  const std::size_t n_val = n_records / 10;
  DatasetSplit split;
  split.seed = seed;
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                          order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic generator

ConceptSchema GeneratorSpec::schema() const {
  std::vector<ConceptGroup> out;
  for (const auto& g : groups) {
    out.push_back(ConceptGroup{g.name, g.labels, ConceptKind::binary, 0});
  }
  out.push_back(ConceptGroup{"complexity", {kComplexityLabels.begin(), kComplexityLabels.end()},
                             ConceptKind::continuous, 0});
  return ConceptSchema(std::move(out));
}

ModelCatalog GeneratorSpec::catalog() const {
  ModelCatalog c;
  for (const auto& m : models) {
    c.models.push_back(m.entry);
  }
  return c;
}

std::size_t GeneratorSpec::source_dim() const {
  std::size_t binary = 0;
  for (const auto& g : groups) {
    binary += g.labels.size();
  }
  return binary + difficulty_channels;
}

namespace {

std::pair<std::string, std::string> split_effect_key(const std::string& key) {
  const auto slash = key.find('/');
  if (slash == std::string::npos) {
    throw ConfigError("generator: effect key '" + key + "' is not group/label");
  }
  return {key.substr(0, slash), key.substr(slash + 1)};
}

}  // namespace

void GeneratorSpec::validate() const {
  if (n_records == 0) {
    throw ConfigError("generator: n_records must be positive");
  }
  if (embedding_dim == 0) {
    throw ConfigError("generator: embedding_dim must be positive");
  }
  if (identity_map && embedding_dim != source_dim()) {
    throw ConfigError("generator: identity map needs embedding_dim == " +
                      std::to_string(source_dim()));
  }
  if (embedding_noise < 0.0 || difficulty_noise < 0.0) {
    throw ConfigError("generator: noise levels must be non-negative");
  }
  if (min_input_tokens < 1 || max_input_tokens < min_input_tokens) {
    throw ConfigError("generator: invalid input token range");
  }
  for (const auto& g : groups) {
    if (g.name == "complexity") {
      throw ConfigError("generator: complexity is derived, not declared");
    }
    if (g.sampling == GroupSampling::independent && (g.rate < 0.0 || g.rate > 1.0)) {
      throw ConfigError("generator: rate outside [0, 1] in group '" + g.name + "'");
    }
  }
  ConceptSchema s;
  try {
    s = schema();
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("generator: ") + e.what());
  }
  catalog().validate_strata();
  for (const auto& m : models) {
    if (m.base_success < 0.0 || m.base_success > 1.0) {
      throw ConfigError("generator: base_success outside [0, 1] for '" + m.entry.name + "'");
    }
    for (const auto& [key, value] : m.effects) {
      const auto [group, label] = split_effect_key(key);
      if (group == "complexity" || !s.has_group(group)) {
        throw ConfigError("generator: effect '" + key + "' names a concept outside the schema");
      }
      const auto& labels = s.group(group).labels;
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
        throw ConfigError("generator: effect '" + key + "' names a concept outside the schema");
      }
      if (!std::isfinite(value)) {
        throw ConfigError("generator: non-finite effect '" + key + "'");
      }
    }
  }
}

Vector planted_success(const GeneratorSpec& spec, const ConceptSchema& schema,
                       std::span<const double> concepts, double difficulty) {
  Vector p(spec.models.size());
  for (std::size_t m = 0; m < spec.models.size(); ++m) {
    const auto& model = spec.models[m];
    if (model.base_success >= 1.0) {
      p[m] = 1.0;
      continue;
    }
    if (model.base_success <= 0.0) {
      p[m] = 0.0;
      continue;
    }
    double shift = -model.difficulty_weight * difficulty;
    for (const auto& [key, value] : model.effects) {
      const auto [group, label] = split_effect_key(key);
      if (concepts[schema.index_of(group, label)] != 0.0) {
        shift += value;
      }
    }
    const double base_logit = std::log(model.base_success / (1.0 - model.base_success));
    p[m] = sigmoid(base_logit + spec.sharpness * shift);
  }
  return p;
}

SyntheticDataset synthesize_dataset(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset out;
  Dataset& data = out.dataset;
  data.header.schema = spec.schema();
  data.header.catalog = spec.catalog();
  data.header.embedding_dim = spec.embedding_dim;
  const ConceptSchema& schema = data.header.schema;
  const std::size_t n_models = spec.models.size();
  const std::size_t source_dim = spec.source_dim();
  const std::size_t binary_width = source_dim - spec.difficulty_channels;
  const std::size_t complexity_offset = schema.group("complexity").offset;

  Matrix map;
  if (!spec.identity_map) {
    Rng map_rng(mix_seed(seed, 0x6d6170));
    map = Matrix(source_dim, spec.embedding_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(source_dim));
    for (double& w : map.flat()) {
      w = map_rng.normal() * scale;
    }
  }

  out.truth.success_probability = Matrix(spec.n_records, n_models);
  out.truth.difficulty.resize(spec.n_records);
  data.records.reserve(spec.n_records);

  Rng rng(seed);
  const double log_min = std::log(static_cast<double>(spec.min_input_tokens));
  const double log_max = std::log(static_cast<double>(spec.max_input_tokens));
  const bool has_tasks = schema.has_group("tasks");

  Vector source(source_dim);
  for (std::size_t r = 0; r < spec.n_records; ++r) {
    QueryRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "q%06zu", r);
    rec.id = id;
    rec.concepts.assign(schema.width(), 0.0);

    for (const auto& g : spec.groups) {
      const std::size_t offset = schema.group(g.name).offset;
      if (g.sampling == GroupSampling::one_hot) {
        rec.concepts[offset + rng.below(g.labels.size())] = 1.0;
      } else {
        for (std::size_t l = 0; l < g.labels.size(); ++l) {
          rec.concepts[offset + l] = rng.bernoulli(g.rate) ? 1.0 : 0.0;
        }
      }
    }
    const double z = rng.normal();
    out.truth.difficulty[r] = z;
    const double tokens = std::exp(rng.uniform(log_min, log_max));
    rec.input_tokens = std::clamp(static_cast<std::int64_t>(std::llround(tokens)),
                                  spec.min_input_tokens, spec.max_input_tokens);

    const Vector p = planted_success(spec, schema, rec.concepts, z);
    rec.correctness.resize(n_models);
    for (std::size_t m = 0; m < n_models; ++m) {
      out.truth.success_probability(r, m) = p[m];
      rec.correctness[m] = rng.bernoulli(p[m]) ? 1 : 0;
    }
    const auto complexity = derive_complexity_labels(rec.correctness, data.header.catalog);
    std::copy(complexity.begin(), complexity.end(),
              rec.concepts.begin() + static_cast<std::ptrdiff_t>(complexity_offset));

    std::copy(rec.concepts.begin(), rec.concepts.begin() + static_cast<std::ptrdiff_t>(binary_width),
              source.begin());
    for (std::size_t c = 0; c < spec.difficulty_channels; ++c) {
      source[binary_width + c] = z + spec.difficulty_noise * rng.normal();
    }

    rec.embedding.assign(spec.embedding_dim, 0.0);
    if (spec.identity_map) {
      std::copy(source.begin(), source.end(), rec.embedding.begin());
    } else {
      for (std::size_t i = 0; i < source_dim; ++i) {
        const double s = source[i];
        if (s == 0.0) {
          continue;
        }
        auto w = map.row(i);
        for (std::size_t j = 0; j < spec.embedding_dim; ++j) {
          rec.embedding[j] += s * w[j];
        }
      }
    }
    for (double& e : rec.embedding) {
      e += spec.embedding_noise * rng.normal();
    }

    if (has_tasks) {
      const auto& tasks = schema.group("tasks");
      for (std::size_t l = 0; l < tasks.width(); ++l) {
        if (rec.concepts[tasks.offset + l] == 1.0) {
          rec.task = tasks.labels[l];
          break;
        }
      }
    }
    data.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator spec IO

GeneratorSpec generator_spec_from_json(const json& j) {
  try {
    GeneratorSpec s;
    s.n_records = j.value("n_records", s.n_records);
    s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
    const auto map = j.value("embedding_map", std::string("random"));
    if (map != "random" && map != "identity") {
      throw ConfigError("generator: embedding_map must be 'random' or 'identity'");
    }
    s.identity_map = map == "identity";
    s.embedding_noise = j.value("embedding_noise", s.embedding_noise);
    s.difficulty_channels = j.value("difficulty_channels", s.difficulty_channels);
    s.difficulty_noise = j.value("difficulty_noise", s.difficulty_noise);
    s.sharpness = j.value("sharpness", s.sharpness);
    if (j.contains("input_tokens")) {
      s.min_input_tokens = j.at("input_tokens").at(0).get<std::int64_t>();
      s.max_input_tokens = j.at("input_tokens").at(1).get<std::int64_t>();
    }
    for (const auto& g : j.at("groups")) {
      GeneratorGroup group;
      group.name = g.at("name").get<std::string>();
      group.labels = g.at("labels").get<std::vector<std::string>>();
      const auto sampling = g.value("sampling", std::string("one_hot"));
      if (sampling == "one_hot") {
        group.sampling = GroupSampling::one_hot;
      } else if (sampling == "independent") {
        group.sampling = GroupSampling::independent;
      } else {
        throw ConfigError("generator: unknown sampling '" + sampling + "'");
      }
      group.rate = g.value("rate", group.rate);
      s.groups.push_back(std::move(group));
    }
    for (const auto& m : j.at("models")) {
      GeneratorModel model;
      model.entry = entry_from_json(m);
      model.base_success = m.value("base_success", model.base_success);
      model.difficulty_weight = m.value("difficulty_weight", model.difficulty_weight);
      if (m.contains("effects")) {
        model.effects = m.at("effects").get<std::map<std::string, double>>();
      }
      s.models.push_back(std::move(model));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("generator spec: ") + e.what());
  }
}

json generator_spec_to_json(const GeneratorSpec& spec) {
  json groups = json::array();
  for (const auto& g : spec.groups) {
    json group = {{"name", g.name},
                  {"labels", g.labels},
                  {"sampling", g.sampling == GroupSampling::one_hot ? "one_hot" : "independent"}};
    if (g.sampling == GroupSampling::independent) {
      group["rate"] = g.rate;
    }
    groups.push_back(std::move(group));
  }
  json models = json::array();
  for (const auto& m : spec.models) {
    models.push_back({{"name", m.entry.name},
                      {"input_price", m.entry.input_price},
                      {"output_price", m.entry.output_price},
                      {"avg_output_tokens", m.entry.avg_output_tokens},
                      {"is_reasoning", m.entry.is_reasoning},
                      {"base_success", m.base_success},
                      {"difficulty_weight", m.difficulty_weight},
                      {"effects", m.effects}});
  }
  return {{"n_records", spec.n_records},
          {"embedding_dim", spec.embedding_dim},
          {"embedding_map", spec.identity_map ? "identity" : "random"},
          {"embedding_noise", spec.embedding_noise},
          {"difficulty_channels", spec.difficulty_channels},
          {"difficulty_noise", spec.difficulty_noise},
          {"sharpness", spec.sharpness},
          {"input_tokens", {spec.min_input_tokens, spec.max_input_tokens}},
          {"groups", groups},
          {"models", models}};
}

GeneratorSpec default_generator_spec() {
  GeneratorSpec s;
  s.n_records = 5000;
  s.embedding_dim = 32;
  s.embedding_noise = 0.05;
  s.difficulty_channels = 4;
  s.difficulty_noise = 0.05;
  s.sharpness = 3.0;
  s.groups = {
      {"tasks", {"code_completion", "instruction_generation", "code_repair", "multiple_choice"},
       GroupSampling::one_hot, 0.0},
      {"domains", {"general", "computation", "network", "cryptography", "system"},
       GroupSampling::one_hot, 0.0},
      {"libraries", {"numpy", "pandas", "requests", "hashlib"}, GroupSampling::independent, 0.25},
      {"natural_languages", {"english", "spanish", "russian", "hindi"}, GroupSampling::one_hot,
       0.0},
      {"programming_languages", {"python", "rust", "php", "java"}, GroupSampling::one_hot, 0.0},
  };

  const auto specialist = [](const std::string& language) {
    std::map<std::string, double> effects;
    for (const char* pl : {"python", "rust", "php", "java"}) {
      effects[std::string("programming_languages/") + pl] = pl == language ? 4.0 : -3.0;
    }
    effects["natural_languages/hindi"] = -1.0;
    effects["tasks/code_repair"] = -0.5;
    return effects;
  };

  s.models = {
      {{"o3", 2.00, 8.00, 187.69, true}, 0.95, 1.5, {{"natural_languages/russian", -0.5}}},
      {{"o4-mini", 1.10, 4.40, 170.63, true}, 0.85, 2.0, {{"libraries/hashlib", -0.5}}},
      {{"gpt-4.1-mini", 0.40, 1.60, 199.58, false}, 0.5, 2.5, specialist("python")},
      {{"llama-4-scout", 0.08, 0.30, 306.20, false}, 0.5, 2.5, specialist("rust")},
      {{"gpt-4.1-nano", 0.10, 0.40, 194.82, false}, 0.5, 2.5, specialist("php")},
      {{"llama-4-maverick-fp8", 0.15, 0.60, 242.39, false}, 0.5, 2.5, specialist("java")},
  };
  return s;
}

}  // namespace cbr
