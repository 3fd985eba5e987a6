#pragma once

// Query records, concept schema, model catalog, cost vectors, splits and the
// planted-structure synthetic generator.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cbr/numerics.hpp"

namespace cbr {

struct ModelEntry {
  std::string name;
  double input_price = 0.0;   // currency per 1M input tokens
  double output_price = 0.0;  // currency per 1M output tokens
  double avg_output_tokens = 0.0;
  bool is_reasoning = false;

  bool operator==(const ModelEntry&) const = default;
};

struct ModelCatalog {
  std::vector<ModelEntry> models;

  std::size_t size() const { return models.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  // Unique names, positive prices and lengths.
  void validate() const;
  // Additionally requires both reasoning and non-reasoning entries.
  void validate_strata() const;

  bool operator==(const ModelCatalog&) const = default;
};

// The 16-model catalog with published per-token prices and average output
// lengths. Which models count as "reasoning" is not published per model;
// the o-series and Grok entries are flagged, which is a judgment call.
ModelCatalog default_catalog();

enum class ConceptKind { binary, continuous };

inline constexpr std::array<const char*, 6> kGroupNames{
    "tasks", "domains", "libraries", "natural_languages", "programming_languages", "complexity"};
inline constexpr std::array<const char*, 3> kComplexityLabels{"reasoning", "general", "total"};

struct ConceptGroup {
  std::string name;
  std::vector<std::string> labels;
  ConceptKind kind = ConceptKind::binary;
  std::size_t offset = 0;  // filled by ConceptSchema

  std::size_t width() const { return labels.size(); }
  bool operator==(const ConceptGroup&) const = default;
};

class ConceptSchema {
public:
  ConceptSchema() = default;
  // Assigns contiguous offsets in declaration order and validates.
  explicit ConceptSchema(std::vector<ConceptGroup> groups);

  std::size_t width() const { return width_; }
  const std::vector<ConceptGroup>& groups() const { return groups_; }
  bool has_group(const std::string& name) const;
  // Throws SchemaError for unknown names.
  const ConceptGroup& group(const std::string& name) const;
  // Global index of a label; throws SchemaError when absent.
  std::size_t index_of(const std::string& group, const std::string& label) const;
  bool is_binary_index(std::size_t index) const;

  ConceptSchema without(const std::string& group) const;
  // Indices into this schema's vector that survive removing the group.
  std::vector<std::size_t> indices_without(const std::string& group) const;

  bool operator==(const ConceptSchema&) const = default;

private:
  std::vector<ConceptGroup> groups_;
  std::size_t width_ = 0;
};

Vector select_indices(std::span<const double> values, std::span<const std::size_t> indices);

struct QueryRecord {
  std::string id;
  Vector embedding;
  Vector concepts;
  std::vector<std::uint8_t> correctness;
  std::int64_t input_tokens = 1;
  std::optional<std::string> task;

  bool operator==(const QueryRecord&) const = default;
};

struct DatasetHeader {
  ConceptSchema schema;
  ModelCatalog catalog;
  std::size_t embedding_dim = 0;

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<QueryRecord> records;

  const ConceptSchema& schema() const { return header.schema; }
  const ModelCatalog& catalog() const { return header.catalog; }
};

nlohmann::json schema_to_json(const ConceptSchema& schema);
ConceptSchema schema_from_json(const nlohmann::json& j);
nlohmann::json catalog_to_json(const ModelCatalog& catalog);
ModelCatalog catalog_from_json(const nlohmann::json& j);
nlohmann::json header_to_json(const DatasetHeader& header);
DatasetHeader header_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const QueryRecord& record);

void validate_record(const QueryRecord& record, const DatasetHeader& header);

// Reads the line-delimited record file. Errors carry the 1-based line.
std::vector<QueryRecord> load_records(const std::filesystem::path& path,
                                      const DatasetHeader& header);
void save_records(const std::filesystem::path& path, std::span<const QueryRecord> records);

inline constexpr const char* kHeaderFile = "header.json";
inline constexpr const char* kRecordsFile = "records.jsonl";

// A dataset directory holds header.json and records.jsonl.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

// Failure fractions among reasoning models, non-reasoning models, and all.
std::array<double, 3> derive_complexity_labels(std::span<const std::uint8_t> correctness,
                                               const ModelCatalog& catalog);

Vector cost_vector(const QueryRecord& record, const ModelCatalog& catalog);
Vector cost_vector(std::int64_t input_tokens, const ModelCatalog& catalog);
// Per-query division by the maximum entry.
Vector normalize_costs(std::span<const double> raw);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

// 80/10/10 with floor for validation and test, remainder to train.
DatasetSplit split_dataset(std::size_t n_records, std::uint64_t seed);

enum class GroupSampling { one_hot, independent };

struct GeneratorGroup {
  std::string name;
  std::vector<std::string> labels;
  GroupSampling sampling = GroupSampling::one_hot;
  double rate = 0.25;  // per-label activation rate for independent groups
};

struct GeneratorModel {
  ModelEntry entry;
  double base_success = 0.5;
  double difficulty_weight = 1.0;
  // "group/label" -> logit shift when that concept is active.
  std::map<std::string, double> effects;
};

struct GeneratorSpec {
  std::size_t n_records = 1000;
  std::size_t embedding_dim = 32;
  bool identity_map = false;
  double embedding_noise = 0.1;
  std::size_t difficulty_channels = 4;
  double difficulty_noise = 0.0;
  double sharpness = 1.0;
  std::int64_t min_input_tokens = 50;
  std::int64_t max_input_tokens = 2000;
  std::vector<GeneratorGroup> groups;
  std::vector<GeneratorModel> models;

  ConceptSchema schema() const;  // declared groups plus complexity
  ModelCatalog catalog() const;
  // Width of the pre-map source vector: binary concepts plus difficulty channels.
  std::size_t source_dim() const;
  void validate() const;
};

GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
nlohmann::json generator_spec_to_json(const GeneratorSpec& spec);

struct PlantedTruth {
  Matrix success_probability;  // records x models
  Vector difficulty;           // latent per record
};

struct SyntheticDataset {
  Dataset dataset;
  PlantedTruth truth;
};

// Planted per-model success probabilities for a binary concept assignment
// (indices into the full schema) and a latent difficulty.
Vector planted_success(const GeneratorSpec& spec, const ConceptSchema& schema,
                       std::span<const double> concepts, double difficulty);

SyntheticDataset synthesize_dataset(const GeneratorSpec& spec, std::uint64_t seed);

// The bundled desk-scale configuration: six models over four programming
// language specialists, k = 24 concepts.
GeneratorSpec default_generator_spec();

}  // namespace cbr
