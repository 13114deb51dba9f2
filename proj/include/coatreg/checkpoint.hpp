#pragma once

// Checkpoints: a JSON manifest <path>.json and a blob <path>.bin of
// concatenated little-endian float32 tensors.
//
//   {"meta": {"iteration": n, "seed": s, "config_hash": "...", "config": {...}},
//    "tensors": [{"name": ..., "shape": [...], "offset": bytes, "length": bytes}, ...]}
//
// Optimizer moments are ordinary tensors named opt.m.<param> / opt.v.<param>.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coatreg/regnet.hpp"
#include "json.hpp"

namespace coatreg {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointMeta {
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  NetworkConfig config;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();  // free-form, e.g. training flags
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<CheckpointTensor> tensors;

  [[nodiscard]] const CheckpointTensor* find(const std::string& name) const;
  // DataError when absent or when the stored shape differs.
  [[nodiscard]] const CheckpointTensor& require(const std::string& name, const Shape& shape) const;
};

nlohmann::ordered_json config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const nlohmann::ordered_json& j);
// FNV-1a 64 of the canonical config JSON, as 16 hex digits.
std::string config_hash(const NetworkConfig& config);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters of the network, in registry order.
template <typename T>
std::vector<CheckpointTensor> network_tensors(const RegistrationNetwork<T>& network);

// Network built from the stored config with every parameter overwritten.
template <typename T>
RegistrationNetwork<T> network_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace coatreg
