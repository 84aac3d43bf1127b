#include "tractcloud/crl.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tractcloud/errors.hpp"

namespace tractcloud {

namespace {

constexpr std::size_t kMaxRowsPerForward = 16384;

std::string format_float(float v) {
  char buf[24];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void CrlConfig::validate() const {
  if (set_size == 0) throw ConfigError("crl: set size must be >= 1");
  if (repeats == 0) throw ConfigError("crl: repeats must be >= 1");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw ConfigError("crl: top fraction must be in (0, 1]");
}

nlohmann::ordered_json CrlConfig::to_json() const {
  return {{"set_size", set_size}, {"repeats", repeats}, {"top_fraction", top_fraction}, {"seed", seed}};
}

std::size_t CrlWeightMap::critical_count() const {
  return static_cast<std::size_t>(std::count(critical.begin(), critical.end(), std::uint8_t{1}));
}

std::uint64_t CrlWeightMap::total_weight() const {
  return std::accumulate(weights.begin(), weights.end(), std::uint64_t{0});
}

std::vector<std::vector<std::uint32_t>> partition_points(std::size_t p, std::size_t n, Rng& rng) {
  if (p == 0) throw ValidationError("partition_points: no points");
  if (n == 0) throw ConfigError("partition_points: set size must be >= 1");
  std::vector<std::uint32_t> perm(p);
  std::iota(perm.begin(), perm.end(), 0u);
  rng.shuffle(std::span<std::uint32_t>(perm));
  std::vector<std::vector<std::uint32_t>> sets;
  sets.reserve((p + n - 1) / n);
  for (std::size_t first = 0; first < p; first += n) {
    const auto last = std::min(p, first + n);
    sets.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(first), perm.begin() + static_cast<std::ptrdiff_t>(last));
  }
  return sets;
}

std::map<std::uint32_t, std::uint64_t> contributing_point_selection(std::span<const std::uint32_t> argmax,
                                                                    std::span<const std::uint32_t> set_indices) {
  std::map<std::uint32_t, std::uint64_t> out;
  for (std::size_t c = 0; c < argmax.size(); ++c) {
    const auto local = argmax[c];
    if (local >= set_indices.size()) {
      throw ConsistencyError("cps: channel " + std::to_string(c) + " argmax " + std::to_string(local) +
                             " outside a set of " + std::to_string(set_indices.size()));
    }
    ++out[set_indices[local]];
  }
  return out;
}

std::size_t critical_count_for(std::size_t p, double top_fraction) {
  const double k = std::ceil(top_fraction * static_cast<double>(p) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(k, 1.0)), 1, p);
}

std::vector<std::uint8_t> select_critical(std::span<const std::uint64_t> weights, double top_fraction) {
  const std::size_t p = weights.size();
  std::vector<std::uint8_t> mask(p, 0);
  if (p == 0) return mask;
  const std::size_t k = critical_count_for(p, top_fraction);
  std::vector<std::uint32_t> order(p);
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      return weights[a] != weights[b] ? weights[a] > weights[b] : a < b;
                    });
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1;
  return mask;
}

CrlWeightMap localize(const PointNet& model, const InputStats& input, const PointTable& table,
                      const CrlConfig& config) {
  config.validate();
  const std::size_t p = table.rows();
  if (p == 0) throw ValidationError("localize: empty point table");
  const std::size_t c = model.input_channels();
  const std::size_t f = model.feature_dim();

  CrlWeightMap map;
  map.weights.assign(p, 0);
  map.provenance = table.provenance;

  std::vector<double> standardized(table.values);
  standardize(standardized, input);

  // Forward a group of equally sized sets as one batch.
  auto run_sets = [&](std::span<const std::vector<std::uint32_t>> sets) {
    if (sets.empty()) return;
    const std::size_t n = sets.front().size();
    nn::Tensor batch = nn::Tensor::zeros({sets.size(), n, c});
    double* dst = batch.mutable_data().data();
    for (const auto& set : sets) {
      for (auto row : set) {
        std::copy_n(standardized.data() + static_cast<std::size_t>(row) * c, c, dst);
        dst += c;
      }
    }
    const auto pooled = model.global_features(batch);
    for (std::size_t b = 0; b < sets.size(); ++b) {
      const std::span<const std::uint32_t> arg(pooled.argmax.data() + b * f, f);
      for (const auto& [row, w] : contributing_point_selection(arg, sets[b])) map.weights[row] += w;
    }
  };

  for (std::size_t pass = 0; pass < config.repeats; ++pass) {
    Rng rng(derive_seed(config.seed, hash_string("crl-pass"), pass));
    const auto sets = partition_points(p, config.set_size, rng);
    const std::size_t full = p / config.set_size;
    const std::size_t per_batch = std::max<std::size_t>(1, kMaxRowsPerForward / config.set_size);
    const std::span<const std::vector<std::uint32_t>> all(sets);
    for (std::size_t first = 0; first < full; first += per_batch) {
      run_sets(all.subspan(first, std::min(per_batch, full - first)));
    }
    if (full < sets.size()) run_sets(all.subspan(full, 1));
  }

  map.critical = select_critical(map.weights, config.top_fraction);
  return map;
}

CrlWeightMap localize(const Checkpoint& ckpt, const Tract& tract, const CrlConfig& config) {
  tract.validate();
  const auto model = PointNet::from_checkpoint(ckpt);
  return localize(model, ckpt.input, flatten_points(tract), config);
}

std::vector<RegionBin> region_histogram(const CrlWeightMap& map, const LabelTable& labels) {
  if (labels.ids.size() != map.weights.size()) {
    throw ValidationError("region_histogram: " + std::to_string(labels.ids.size()) + " labels for " +
                          std::to_string(map.weights.size()) + " points");
  }
  std::map<std::int32_t, std::size_t> counts;
  std::size_t total = 0;
  for (std::size_t i = 0; i < map.critical.size(); ++i) {
    if (!map.critical[i]) continue;
    ++counts[labels.ids[i]];
    ++total;
  }
  std::vector<RegionBin> bins;
  for (const auto& [id, count] : counts) {
    bins.push_back({id, labels.name_of(id), count, 100.0 * static_cast<double>(count) / static_cast<double>(total)});
  }
  return bins;
}

nlohmann::ordered_json histogram_to_json(std::span<const RegionBin> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  auto regions = nlohmann::ordered_json::array();
  for (const auto& b : bins) {
    regions.push_back({{"label_id", b.label_id}, {"name", b.name}, {"count", b.count}, {"percent", b.percent}});
  }
  return {{"critical_points", total}, {"regions", regions}};
}

std::string weights_to_csv(const CrlWeightMap& map, const Tract& tract) {
  std::ostringstream out;
  out << "streamline_id,point_index,x,y,z,weight,critical\n";
  for (std::size_t i = 0; i < map.weights.size(); ++i) {
    const auto& pv = map.provenance[i];
    const auto& pt = tract.streamlines.at(pv.streamline_id).points.at(pv.point_index);
    out << pv.streamline_id << ',' << pv.point_index << ',' << format_float(pt[0]) << ','
        << format_float(pt[1]) << ',' << format_float(pt[2]) << ',' << map.weights[i] << ','
        << int(map.critical[i]) << '\n';
  }
  return out.str();
}

}  // namespace tractcloud
