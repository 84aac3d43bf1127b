#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tractcloud/nn/ops.hpp"
#include "tractcloud/tract.hpp"

namespace tractcloud {

// "WMCK" | u16 version | u32 header_len | JSON header | float64 payloads in
// header tensor order, little-endian.
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class TargetMode { raw, standardized };

std::string to_string(TargetMode mode);
TargetMode parse_target_mode(const std::string& text);

struct NamedTensor {
  std::string name;
  nn::Shape shape;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

/// Per-channel input standardization, estimated on the training split.
struct InputStats {
  std::array<double, kPointChannels> mean{0, 0, 0, 0, 0};
  std::array<double, kPointChannels> std{1, 1, 1, 1, 1};

  bool operator==(const InputStats&) const = default;
};

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::vector<nn::LayerSpec> layers;
  std::vector<NamedTensor> tensors;  // parameters and batch-norm running stats
  InputStats input;
  TargetMode target_mode = TargetMode::raw;
  double target_mean = 0.0;
  double target_std = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();

  const NamedTensor& tensor(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view blob, const std::string& what = "checkpoint");

}  // namespace tractcloud
