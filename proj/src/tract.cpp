#include "tractcloud/tract.hpp"

#include <cmath>

#include "tractcloud/errors.hpp"

namespace tractcloud {

std::size_t Tract::point_count() const {
  std::size_t n = 0;
  for (const auto& s : streamlines) n += s.points.size();
  return n;
}

void Tract::validate() const {
  if (streamlines.empty()) {
    throw ValidationError("tract '" + subject_id + "' has no streamlines");
  }
  std::size_t row = 0;
  for (std::size_t s = 0; s < streamlines.size(); ++s) {
    const auto& sl = streamlines[s];
    if (sl.points.size() < 2) {
      throw ValidationError("streamline " + std::to_string(s) + " has " +
                            std::to_string(sl.points.size()) + " points; at least 2 required");
    }
    if (sl.fa.size() != sl.points.size()) {
      throw ValidationError("streamline " + std::to_string(s) + " has " +
                            std::to_string(sl.points.size()) + " points but " +
                            std::to_string(sl.fa.size()) + " FA values");
    }
    for (std::size_t i = 0; i < sl.points.size(); ++i, ++row) {
      const auto& p = sl.points[i];
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
        throw ValidationError("non-finite coordinate at streamline " + std::to_string(s) +
                              ", point " + std::to_string(i) + " (row " + std::to_string(row) + ")");
      }
      const float fa = sl.fa[i];
      if (!(fa >= 0.0f && fa <= 1.0f)) {
        throw ValidationError("FA " + std::to_string(fa) + " outside [0, 1] at streamline " +
                              std::to_string(s) + ", point " + std::to_string(i) + " (row " +
                              std::to_string(row) + ")");
      }
    }
  }
}

PointTable flatten_points(const Tract& tract) {
  tract.validate();
  PointTable table;
  const std::size_t total = tract.point_count();
  table.values.reserve(total * kPointChannels);
  table.provenance.reserve(total);
  const double nos = static_cast<double>(tract.nos());
  for (std::size_t s = 0; s < tract.streamlines.size(); ++s) {
    const auto& sl = tract.streamlines[s];
    for (std::size_t i = 0; i < sl.points.size(); ++i) {
      table.values.insert(table.values.end(),
                          {static_cast<double>(sl.points[i][0]), static_cast<double>(sl.points[i][1]),
                           static_cast<double>(sl.points[i][2]), static_cast<double>(sl.fa[i]), nos});
      table.provenance.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(i)});
    }
  }
  return table;
}

}  // namespace tractcloud
