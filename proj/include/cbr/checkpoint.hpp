#pragma once

// Versioned checkpoint container:
//   8 bytes   magic "CBRCKPT\0"
//   u32 LE    format version
//   u64 LE    metadata length
//   metadata  JSON (policy kind, schema, catalog, array shapes, training info)
//   arrays    float32 LE, in the order listed under "arrays"
//   u64 LE    fnv1a of every preceding byte
// Trainers keep parameters on the float32 grid, so save/load of a trained
// policy is bit-exact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "cbr/routers.hpp"

namespace cbr {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct TrainingMetadata {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::string cost_term = "softmax-expected-cost";
  std::string ablated_group;  // empty unless trained for an ablation

  bool operator==(const TrainingMetadata&) const = default;
};

struct Checkpoint {
  Policy policy;
  TrainingMetadata metadata;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "v<format>-<fnv1a of the serialized bytes>".
std::string checkpoint_version(std::string_view bytes);

// Metadata block as JSON, without the parameter arrays.
nlohmann::json checkpoint_info(const Checkpoint& checkpoint);

}  // namespace cbr
