#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gar/adam.hpp"
#include "gar/model.hpp"
#include "json.hpp"

namespace gar {

struct ModelCard {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
  std::string manifest_hash;  // content hash of the training manifest
  nlohmann::json training;    // fold, epochs, losses; free-form
};

nlohmann::json model_card_to_json(const ModelCard& card);
ModelCard model_card_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelCard card;
  ParamMap params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, little endian:
//   "GARCKPT\0" | u32 version | u64 card length | card JSON bytes |
//   u64 tensor count | per tensor: u64 name length, name, u64 rank,
//   u64 dims[rank], f64 values[prod(dims)]
// Tensors are written in name order, so equal parameters give equal bytes.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "<path without extension>.card.json"
std::filesystem::path model_card_path(const std::filesystem::path& checkpoint);

}  // namespace gar
