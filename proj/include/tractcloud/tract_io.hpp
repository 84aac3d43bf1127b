#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tractcloud/tract.hpp"

namespace tractcloud {

// WMPC v1, little-endian:
//   "WMPC" | u16 version=1 | u16 reserved=0 | u32 streamline_count
//   per streamline: u32 point_count, then point_count x {f32 x, y, z, fa}
inline constexpr std::uint16_t kTractFormatVersion = 1;

/// subject_id is taken from the file stem.
Tract read_tract(const std::filesystem::path& path);
void write_tract(const Tract& tract, const std::filesystem::path& path);

enum class Split { train, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestRow {
  std::string subject_id;
  std::filesystem::path tract_path;
  double score = 0.0;
  Split split = Split::train;
  std::optional<std::filesystem::path> labels_path;
};

/// CSV `subject_id,path,score,split[,labels]` with a header row. Relative
/// paths are resolved against the manifest's directory on read.
struct Manifest {
  std::vector<ManifestRow> rows;

  std::vector<ManifestRow> split(Split which) const;
  const ManifestRow* find(const std::string& subject_id) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Per-point anatomical labels in flatten_points order. On disk: CSV
/// `point_row,label_id` plus a sibling `.json` object mapping ids to names.
struct LabelTable {
  std::vector<std::int32_t> ids;
  std::map<std::int32_t, std::string> names;

  std::string name_of(std::int32_t id) const;
};

LabelTable read_labels(const std::filesystem::path& csv_path, std::size_t expected_point_count);
void write_labels(const LabelTable& labels, const std::filesystem::path& csv_path);

// Shared helpers for the CSV/JSON writers.
std::string format_double(double value);
void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace tractcloud
