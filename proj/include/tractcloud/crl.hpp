#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tractcloud/checkpoint.hpp"
#include "tractcloud/pointnet.hpp"
#include "tractcloud/rng.hpp"
#include "tractcloud/tract.hpp"
#include "tractcloud/tract_io.hpp"

namespace tractcloud {

struct CrlConfig {
  std::size_t set_size = 2048;
  std::size_t repeats = 10;
  double top_fraction = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct CrlWeightMap {
  std::vector<std::uint64_t> weights;  // per point row
  std::vector<std::uint8_t> critical;
  std::vector<PointProvenance> provenance;

  std::size_t critical_count() const;
  std::uint64_t total_weight() const;
};

/// Uniform random permutation of 0..P-1 cut into ceil(P/N) chunks of N
/// (the last one possibly shorter).
std::vector<std::vector<std::uint32_t>> partition_points(std::size_t p, std::size_t n, Rng& rng);

/// Weight of each point that wins at least one max-pool channel. `argmax`
/// holds one local index per feature channel for a single set.
std::map<std::uint32_t, std::uint64_t> contributing_point_selection(std::span<const std::uint32_t> argmax,
                                                                    std::span<const std::uint32_t> set_indices);

/// ceil(fraction * P), at least 1.
std::size_t critical_count_for(std::size_t p, double top_fraction);

/// Marks the top critical_count_for(P) rows by (weight desc, row asc).
std::vector<std::uint8_t> select_critical(std::span<const std::uint64_t> weights, double top_fraction);

/// M passes of partition -> eval forward -> CPS -> accumulate. The model
/// must be the one the checkpoint was trained with; points are
/// standardized with the checkpoint's input statistics.
CrlWeightMap localize(const PointNet& model, const InputStats& input, const PointTable& table,
                      const CrlConfig& config);
CrlWeightMap localize(const Checkpoint& ckpt, const Tract& tract, const CrlConfig& config);

struct RegionBin {
  std::int32_t label_id = 0;
  std::string name;
  std::size_t count = 0;
  double percent = 0.0;
};

/// Critical points tallied by label, sorted by label id.
std::vector<RegionBin> region_histogram(const CrlWeightMap& map, const LabelTable& labels);

nlohmann::ordered_json histogram_to_json(std::span<const RegionBin> bins);

/// streamline_id,point_index,x,y,z,weight,critical
std::string weights_to_csv(const CrlWeightMap& map, const Tract& tract);

}  // namespace tractcloud
