#include "tractcloud/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <limits>
#include <numeric>

#include "tractcloud/errors.hpp"
#include "tractcloud/rng.hpp"

namespace tractcloud {

namespace {

constexpr double kPi = std::numbers::pi;

Vec3d arc_point(const Vec3d& center, double radius, double start, double span, double t) {
  const double theta = start + span * t;
  return {center[0] + 2.0 * std::sin(kPi * t), center[1] - radius * std::cos(theta),
          center[2] + radius * std::sin(theta)};
}

// Outward unit normal of the arc within the y-z plane.
Vec3d arc_radial(double start, double span, double t) {
  const double theta = start + span * t;
  return {0.0, -std::cos(theta), std::sin(theta)};
}

double distance(const Vec3d& a, const Vec3d& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Vec3d to_vec3d(const Vec3f& p) { return {p[0], p[1], p[2]}; }

std::string subject_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sub-%04zu", index);
  return buf;
}

constexpr int kSegments = 5;
constexpr std::int32_t kRegionLabel = kSegments;

struct SubjectDraw {
  Tract tract;
  LabelTable labels;
  SubjectTruth truth;
};

SubjectDraw generate_subject(const SynthConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, hash_string("subject"), index));
  SubjectDraw out;
  out.tract.subject_id = subject_name(index);
  const Vec3d shift{rng.normal(0.0, cfg.center_jitter), rng.normal(0.0, cfg.center_jitter),
                    rng.normal(0.0, cfg.center_jitter)};
  const auto nos = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(cfg.streamlines_min),
                                                        static_cast<std::int64_t>(cfg.streamlines_max)));
  const double subject_fa = rng.normal(0.0, cfg.fa_subject_std);
  const double offset = rng.uniform(cfg.regional_offset_min, cfg.regional_offset_max);

  double regional_sum = 0.0;
  std::size_t regional_count = 0;
  for (std::size_t s = 0; s < nos; ++s) {
    const double radial_off = rng.normal(0.0, cfg.bundle_thickness);
    const double lateral_off = rng.normal(0.0, cfg.bundle_thickness);
    const double t_begin = rng.uniform(0.0, 0.05);
    const double t_end = rng.uniform(0.95, 1.0);
    const auto count = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(cfg.points_min),
                                                            static_cast<std::int64_t>(cfg.points_max)));
    const double wobble = rng.uniform(0.0, 0.5);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double streamline_fa = rng.normal(0.0, cfg.fa_streamline_std);
    const bool reversed = rng.below(2) == 1;

    Streamline sl;
    std::vector<std::int32_t> ids;
    for (std::size_t k = 0; k < count; ++k) {
      const double t = t_begin + (t_end - t_begin) * static_cast<double>(k) / static_cast<double>(count - 1);
      const auto c = arc_point(cfg.arc_center, cfg.arc_radius, cfg.arc_start, cfg.arc_span, t);
      const auto n = arc_radial(cfg.arc_start, cfg.arc_span, t);
      const double r = radial_off + wobble * std::sin(4.0 * kPi * t + phase);
      const Vec3f p{static_cast<float>(c[0] + shift[0] + lateral_off),
                    static_cast<float>(c[1] + shift[1] + r * n[1]),
                    static_cast<float>(c[2] + shift[2] + r * n[2])};
      const bool inside = distance(to_vec3d(p), cfg.critical_region.center) <= cfg.critical_region.radius;
      double fa = cfg.fa_base + cfg.fa_arc_amplitude * std::sin(kPi * t) + subject_fa + streamline_fa +
                  rng.normal(0.0, cfg.fa_point_std);
      if (inside) fa += offset;
      const auto stored = static_cast<float>(std::clamp(fa, 0.0, 1.0));
      sl.points.push_back(p);
      sl.fa.push_back(stored);
      ids.push_back(inside ? kRegionLabel : std::min<std::int32_t>(kSegments - 1, static_cast<std::int32_t>(t * kSegments)));
      if (inside) {
        regional_sum += stored;
        ++regional_count;
      }
    }
    if (reversed) {
      std::reverse(sl.points.begin(), sl.points.end());
      std::reverse(sl.fa.begin(), sl.fa.end());
      std::reverse(ids.begin(), ids.end());
    }
    out.tract.streamlines.push_back(std::move(sl));
    out.labels.ids.insert(out.labels.ids.end(), ids.begin(), ids.end());
  }
  if (regional_count == 0) {
    throw ConfigError("subject " + out.tract.subject_id + " has no points inside the critical region");
  }
  for (int i = 0; i < kSegments; ++i) out.labels.names[i] = "arc_segment_" + std::to_string(i);
  out.labels.names[kRegionLabel] = "planted_region";

  auto& truth = out.truth;
  truth.subject_id = out.tract.subject_id;
  truth.nos = nos;
  truth.regional_offset = offset;
  truth.mean_regional_fa = regional_sum / static_cast<double>(regional_count);
  truth.region_points = regional_count;
  truth.noise = cfg.noise_std > 0.0 ? rng.normal(0.0, cfg.noise_std) : 0.0;
  truth.score = cfg.a0 + cfg.a1 * truth.mean_regional_fa + cfg.a2 * static_cast<double>(nos) + truth.noise;
  truth.in_region = region_mask(out.tract, cfg.critical_region);
  return out;
}

nlohmann::ordered_json vec_json(const Vec3d& v) { return nlohmann::ordered_json::array({v[0], v[1], v[2]}); }

}  // namespace

Region SynthConfig::default_region() {
  return {arc_point({-38.0, -15.0, 5.0}, 30.0, -1.0, 3.3, 0.85), 7.0};
}

Vec3d SynthConfig::centerline(double t) const { return arc_point(arc_center, arc_radius, arc_start, arc_span, t); }

void SynthConfig::validate() const {
  if (subject_count < 1) throw ConfigError("subject count must be at least 1");
  if (streamlines_min < 1 || streamlines_min > streamlines_max) {
    throw ConfigError("streamline range must be nonempty with a positive minimum");
  }
  if (points_min < 2 || points_min > points_max) {
    throw ConfigError("points-per-streamline range must be nonempty with a minimum of at least 2");
  }
  if (!(critical_region.radius > 0.0)) throw ConfigError("critical region radius must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be nonnegative");
  if (!(arc_radius > 0.0) || !(arc_span > 0.0)) throw ConfigError("arc radius and span must be positive");
  if (!(bundle_thickness >= 0.0) || !(center_jitter >= 0.0)) {
    throw ConfigError("bundle thickness and center jitter must be nonnegative");
  }
  if (!(regional_offset_min >= 0.0 && regional_offset_max >= regional_offset_min)) {
    throw ConfigError("regional offsets must satisfy 0 <= min <= max");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must lie in (0, 1]");

  // The region must reach the bundle envelope around the nominal centerline.
  double nearest = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 2000; ++i) nearest = std::min(nearest, distance(centerline(i / 2000.0), critical_region.center));
  const double envelope = 3.0 * bundle_thickness + 3.0 * center_jitter + 2.5;
  if (nearest > critical_region.radius + envelope) {
    throw ConfigError("critical region lies outside the bundle envelope (" + std::to_string(nearest) +
                      " mm from the centerline)");
  }
}

nlohmann::ordered_json SynthConfig::to_json() const {
  return {{"subject_count", subject_count},
          {"streamlines_min", streamlines_min},
          {"streamlines_max", streamlines_max},
          {"points_min", points_min},
          {"points_max", points_max},
          {"arc_center", vec_json(arc_center)},
          {"arc_radius", arc_radius},
          {"arc_start", arc_start},
          {"arc_span", arc_span},
          {"center_jitter", center_jitter},
          {"bundle_thickness", bundle_thickness},
          {"region_center", vec_json(critical_region.center)},
          {"region_radius", critical_region.radius},
          {"regional_offset_min", regional_offset_min},
          {"regional_offset_max", regional_offset_max},
          {"fa_base", fa_base},
          {"fa_arc_amplitude", fa_arc_amplitude},
          {"fa_subject_std", fa_subject_std},
          {"fa_streamline_std", fa_streamline_std},
          {"fa_point_std", fa_point_std},
          {"a0", a0},
          {"a1", a1},
          {"a2", a2},
          {"noise_std", noise_std},
          {"train_fraction", train_fraction},
          {"write_labels", write_labels},
          {"seed", seed}};
}

nlohmann::ordered_json GroundTruth::to_json() const {
  nlohmann::ordered_json out;
  out["region"] = {{"center", vec_json(region.center)}, {"radius", region.radius}};
  out["coefficients"] = {{"a0", a0}, {"a1", a1}, {"a2", a2}};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& s : subjects) {
    rows.push_back({{"subject_id", s.subject_id},
                    {"mean_regional_fa", s.mean_regional_fa},
                    {"nos", s.nos},
                    {"regional_offset", s.regional_offset},
                    {"noise", s.noise},
                    {"score", s.score},
                    {"region_points", s.region_points}});
  }
  out["subjects"] = std::move(rows);
  return out;
}

Cohort generate_cohort(const SynthConfig& config) {
  config.validate();
  Cohort cohort;
  cohort.truth.region = config.critical_region;
  cohort.truth.a0 = config.a0;
  cohort.truth.a1 = config.a1;
  cohort.truth.a2 = config.a2;

  std::vector<std::size_t> order(config.subject_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(config.seed, hash_string("split")));
  split_rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(config.subject_count))));
  std::vector<Split> splits(config.subject_count, Split::test);
  for (std::size_t i = 0; i < std::min(n_train, order.size()); ++i) splits[order[i]] = Split::train;

  for (std::size_t i = 0; i < config.subject_count; ++i) {
    auto draw = generate_subject(config, i);
    ManifestRow row;
    row.subject_id = draw.tract.subject_id;
    row.tract_path = "tracts/" + row.subject_id + ".wmpc";
    row.score = draw.truth.score;
    row.split = splits[i];
    if (config.write_labels) {
      row.labels_path = "labels/" + row.subject_id + ".csv";
      cohort.labels.push_back(std::move(draw.labels));
    }
    cohort.manifest.rows.push_back(std::move(row));
    cohort.truth.subjects.push_back(std::move(draw.truth));
    cohort.tracts.push_back(std::move(draw.tract));
  }
  return cohort;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < cohort.tracts.size(); ++i) {
    const auto& row = cohort.manifest.rows[i];
    write_tract(cohort.tracts[i], dir / row.tract_path);
    if (row.labels_path && i < cohort.labels.size()) write_labels(cohort.labels[i], dir / *row.labels_path);
  }
  write_manifest(cohort.manifest, dir / "manifest.csv");
  write_text_file(dir / "ground_truth.json", cohort.truth.to_json().dump(2) + "\n");
}

std::vector<std::uint8_t> region_mask(const Tract& tract, const Region& region) {
  std::vector<std::uint8_t> mask;
  mask.reserve(tract.point_count());
  for (const auto& sl : tract.streamlines) {
    for (const auto& p : sl.points) mask.push_back(distance(to_vec3d(p), region.center) <= region.radius ? 1 : 0);
  }
  return mask;
}

}  // namespace tractcloud
