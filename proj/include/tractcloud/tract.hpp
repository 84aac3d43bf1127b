#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace tractcloud {

using Vec3f = std::array<float, 3>;

/// One streamline: an ordered polyline (millimetres) with FA per point.
/// Values are float32 so a tract round-trips through WMPC bit for bit.
struct Streamline {
  std::vector<Vec3f> points;
  std::vector<float> fa;

  bool operator==(const Streamline&) const = default;
};

struct Tract {
  std::string subject_id;
  std::vector<Streamline> streamlines;

  /// Number of streamlines, the subject-level NoS measurement.
  std::size_t nos() const { return streamlines.size(); }
  std::size_t point_count() const;

  /// Throws ValidationError on the first violated invariant.
  void validate() const;

  bool operator==(const Tract&) const = default;
};

inline constexpr std::size_t kPointChannels = 5;  // x, y, z, fa, nos

struct PointProvenance {
  std::uint32_t streamline_id = 0;
  std::uint32_t point_index = 0;

  bool operator==(const PointProvenance&) const = default;
};

/// Flattened P x 5 table; rows follow streamline order, then point order.
struct PointTable {
  std::vector<double> values;  // row-major P x 5
  std::vector<PointProvenance> provenance;

  std::size_t rows() const { return provenance.size(); }
  const double* row(std::size_t i) const { return values.data() + i * kPointChannels; }
};

PointTable flatten_points(const Tract& tract);

}  // namespace tractcloud
