#include "tractcloud/tract_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "tractcloud/errors.hpp"

namespace tractcloud {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

double parse_double(const std::string& text, const std::string& where) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError(where + ": '" + text + "' is not a number");
  return value;
}

long long parse_int(const std::string& text, const std::string& where) {
  long long value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError(where + ": '" + text + "' is not an integer");
  return value;
}

fs::path labels_json_path(const fs::path& csv_path) {
  auto p = csv_path;
  return p.replace_extension(".json");
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_text_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tract read_tract(const fs::path& path) {
  const std::string blob = read_text_file(path);
  detail::ByteReader in(blob, "tract file '" + path.string() + "'");
  if (in.bytes(4) != "WMPC") throw FormatError("'" + path.string() + "' is not a WMPC tract file (bad magic)");
  const auto version = in.uint<std::uint16_t>();
  if (version != kTractFormatVersion) {
    throw VersionError("'" + path.string() + "' has WMPC version " + std::to_string(version) +
                       "; this build reads version " + std::to_string(kTractFormatVersion));
  }
  in.uint<std::uint16_t>();  // reserved
  const auto count = in.uint<std::uint32_t>();

  Tract tract;
  tract.subject_id = path.stem().string();
  tract.streamlines.reserve(std::min<std::size_t>(count, in.remaining() / 4));
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto points = in.uint<std::uint32_t>();
    if (static_cast<std::uint64_t>(points) * 16 > in.remaining()) {
      throw FormatError("tract file '" + path.string() + "': streamline " + std::to_string(s) + " claims " +
                        std::to_string(points) + " points but only " + std::to_string(in.remaining()) +
                        " bytes remain");
    }
    Streamline sl;
    sl.points.resize(points);
    sl.fa.resize(points);
    for (std::uint32_t i = 0; i < points; ++i) {
      sl.points[i] = {in.f32(), in.f32(), in.f32()};
      sl.fa[i] = in.f32();
    }
    tract.streamlines.push_back(std::move(sl));
  }
  if (in.remaining() != 0) {
    throw FormatError("tract file '" + path.string() + "' has " + std::to_string(in.remaining()) +
                      " trailing bytes");
  }
  tract.validate();
  return tract;
}

void write_tract(const Tract& tract, const fs::path& path) {
  tract.validate();
  detail::ByteWriter out;
  out.bytes("WMPC");
  out.uint<std::uint16_t>(kTractFormatVersion);
  out.uint<std::uint16_t>(0);
  out.uint<std::uint32_t>(static_cast<std::uint32_t>(tract.streamlines.size()));
  for (const auto& sl : tract.streamlines) {
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(sl.points.size()));
    for (std::size_t i = 0; i < sl.points.size(); ++i) {
      out.f32(sl.points[i][0]);
      out.f32(sl.points[i][1]);
      out.f32(sl.points[i][2]);
      out.f32(sl.fa[i]);
    }
  }
  write_text_file(path, out.buffer());
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw ValidationError("split must be 'train' or 'test', got '" + text + "'");
}

std::vector<ManifestRow> Manifest::split(Split which) const {
  std::vector<ManifestRow> out;
  for (const auto& row : rows) {
    if (row.split == which) out.push_back(row);
  }
  return out;
}

const ManifestRow* Manifest::find(const std::string& subject_id) const {
  for (const auto& row : rows) {
    if (row.subject_id == subject_id) return &row;
  }
  return nullptr;
}

Manifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("manifest '" + path.string() + "' does not exist");
  const auto lines = read_lines(path);
  if (lines.empty()) throw ValidationError("manifest '" + path.string() + "' is empty");
  const auto header = split_csv_line(lines[0]);
  const bool has_labels = header.size() == 5;
  if (header.size() < 4 || header.size() > 5 || header[0] != "subject_id" || header[1] != "path" ||
      header[2] != "score" || header[3] != "split" || (has_labels && header[4] != "labels")) {
    throw ValidationError("manifest '" + path.string() +
                          "' header must be subject_id,path,score,split[,labels]");
  }
  const fs::path base = path.parent_path();
  Manifest manifest;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv_line(lines[i]);
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    if (fields.size() != header.size()) {
      throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    }
    ManifestRow row;
    row.subject_id = fields[0];
    if (row.subject_id.empty() || !seen.insert(row.subject_id).second) {
      throw ValidationError(where + ": subject id '" + row.subject_id + "' is empty or duplicated");
    }
    row.tract_path = base / fields[1];
    row.score = parse_double(fields[2], where);
    if (!std::isfinite(row.score)) throw ValidationError(where + ": score is not finite");
    row.split = parse_split(fields[3]);
    if (has_labels && !fields[4].empty()) row.labels_path = base / fields[4];
    manifest.rows.push_back(std::move(row));
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  bool any_labels = false;
  for (const auto& row : manifest.rows) any_labels = any_labels || row.labels_path.has_value();
  std::string out = any_labels ? "subject_id,path,score,split,labels\n" : "subject_id,path,score,split\n";
  for (const auto& row : manifest.rows) {
    out += row.subject_id + "," + row.tract_path.generic_string() + "," + format_double(row.score) + "," +
           to_string(row.split);
    if (any_labels) out += "," + (row.labels_path ? row.labels_path->generic_string() : std::string());
    out += "\n";
  }
  write_text_file(path, out);
}

std::string LabelTable::name_of(std::int32_t id) const {
  auto it = names.find(id);
  return it != names.end() ? it->second : "label_" + std::to_string(id);
}

LabelTable read_labels(const fs::path& csv_path, std::size_t expected_point_count) {
  const auto lines = read_lines(csv_path);
  if (lines.empty() || lines[0] != "point_row,label_id") {
    throw ValidationError("label file '" + csv_path.string() + "' must start with header point_row,label_id");
  }
  LabelTable labels;
  const std::size_t count = lines.size() - 1;
  if (count != expected_point_count) {
    throw ValidationError("label file '" + csv_path.string() + "' has " + std::to_string(count) +
                          " rows but the tract has " + std::to_string(expected_point_count) + " points");
  }
  labels.ids.reserve(count);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv_line(lines[i]);
    const std::string where = csv_path.string() + ":" + std::to_string(i + 1);
    if (fields.size() != 2) throw ValidationError(where + ": expected 2 fields");
    if (parse_int(fields[0], where) != static_cast<long long>(i - 1)) {
      throw ValidationError(where + ": point_row " + fields[0] + " out of order (expected " +
                            std::to_string(i - 1) + ")");
    }
    labels.ids.push_back(static_cast<std::int32_t>(parse_int(fields[1], where)));
  }
  const auto json_path = labels_json_path(csv_path);
  if (fs::exists(json_path)) {
    const auto names = nlohmann::json::parse(read_text_file(json_path));
    for (const auto& [key, value] : names.items()) {
      labels.names[static_cast<std::int32_t>(parse_int(key, json_path.string()))] = value.get<std::string>();
    }
  }
  return labels;
}

void write_labels(const LabelTable& labels, const fs::path& csv_path) {
  std::string out = "point_row,label_id\n";
  for (std::size_t i = 0; i < labels.ids.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(labels.ids[i]) + "\n";
  }
  write_text_file(csv_path, out);
  nlohmann::ordered_json names = nlohmann::ordered_json::object();
  for (const auto& [id, name] : labels.names) names[std::to_string(id)] = name;
  write_text_file(labels_json_path(csv_path), names.dump(2) + "\n");
}

}  // namespace tractcloud
