#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tractcloud/tract.hpp"
#include "tractcloud/tract_io.hpp"

namespace tractcloud {

using Vec3d = std::array<double, 3>;

struct Region {
  Vec3d center{0.0, 0.0, 0.0};
  double radius = 1.0;  // mm
};

/// Arcuate-like synthetic cohort. Streamlines follow a circular arc
/// (temporal end at arc position 0, frontal end at 1) with Gaussian
/// cross-section jitter. FA varies smoothly along the arc; inside
/// `critical_region` each subject gets an extra offset drawn uniformly from
/// [regional_offset_min, regional_offset_max]. Scores are
///   a0 + a1 * mean_regional_fa + a2 * nos + N(0, noise_std).
struct SynthConfig {
  std::size_t subject_count = 200;
  std::size_t streamlines_min = 200;
  std::size_t streamlines_max = 600;
  std::size_t points_min = 40;
  std::size_t points_max = 80;

  Vec3d arc_center{-38.0, -15.0, 5.0};
  double arc_radius = 30.0;       // mm
  double arc_start = -1.0;        // radians, in the y-z plane
  double arc_span = 3.3;          // radians
  double center_jitter = 1.5;     // mm, per-subject translation std
  double bundle_thickness = 2.5;  // mm, cross-section std

  Region critical_region = default_region();
  double regional_offset_min = 0.05;
  double regional_offset_max = 0.20;

  double fa_base = 0.40;
  double fa_arc_amplitude = 0.05;  // fa_base + amplitude * sin(pi * t)
  double fa_subject_std = 0.02;
  double fa_streamline_std = 0.01;
  double fa_point_std = 0.005;

  double a0 = 22.0;
  double a1 = 150.0;
  double a2 = 0.05;
  double noise_std = 4.5;

  double train_fraction = 0.8;
  bool write_labels = true;
  std::uint64_t seed = 0;

  /// Ball of radius 7 mm around arc position 0.85 of the default arc.
  static Region default_region();

  /// Nominal (unjittered) centerline point at arc position t in [0, 1].
  Vec3d centerline(double t) const;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct SubjectTruth {
  std::string subject_id;
  double mean_regional_fa = 0.0;
  std::size_t nos = 0;
  double regional_offset = 0.0;
  double noise = 0.0;
  double score = 0.0;
  std::size_t region_points = 0;
  std::vector<std::uint8_t> in_region;  // per flattened point
};

struct GroundTruth {
  Region region;
  double a0 = 0.0, a1 = 0.0, a2 = 0.0;
  std::vector<SubjectTruth> subjects;

  nlohmann::ordered_json to_json() const;  // omits the per-point masks
};

struct Cohort {
  std::vector<Tract> tracts;
  std::vector<LabelTable> labels;  // empty unless write_labels
  Manifest manifest;               // paths relative to the cohort directory
  GroundTruth truth;
};

/// Deterministic for a fixed config; each subject draws from its own
/// derived seed.
Cohort generate_cohort(const SynthConfig& config);

/// Writes tracts/<id>.wmpc, labels/<id>.csv (+ .json), manifest.csv and
/// ground_truth.json under `dir`.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

/// True iff the point lies within `region.radius` of the center.
std::vector<std::uint8_t> region_mask(const Tract& tract, const Region& region);

}  // namespace tractcloud
