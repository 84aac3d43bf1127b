#include "tractcloud/checkpoint.hpp"

#include "binary_io.hpp"
#include "tractcloud/errors.hpp"
#include "tractcloud/tract_io.hpp"

namespace tractcloud {

using nlohmann::ordered_json;

std::string to_string(TargetMode mode) { return mode == TargetMode::raw ? "raw" : "standardized"; }

TargetMode parse_target_mode(const std::string& text) {
  if (text == "raw") return TargetMode::raw;
  if (text == "standardized") return TargetMode::standardized;
  throw ConfigError("target mode must be 'raw' or 'standardized', got '" + text + "'");
}

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ConsistencyError("checkpoint has no tensor named '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ordered_json header;
  ordered_json layers = ordered_json::array();
  for (const auto& spec : ckpt.layers) {
    layers.push_back({{"kind", nn::to_string(spec.kind)},
                      {"in_dim", spec.in_dim},
                      {"out_dim", spec.out_dim},
                      {"bn_momentum", spec.bn_momentum},
                      {"bn_eps", spec.bn_eps}});
  }
  header["layers"] = std::move(layers);
  ordered_json tensors = ordered_json::array();
  for (const auto& t : ckpt.tensors) {
    if (nn::numel(t.shape) != t.values.size()) {
      throw ShapeError("tensor '" + t.name + "' shape " + nn::to_string(t.shape) + " does not match " +
                       std::to_string(t.values.size()) + " values");
    }
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  header["tensors"] = std::move(tensors);
  header["input_mean"] = ckpt.input.mean;
  header["input_std"] = ckpt.input.std;
  header["target_mode"] = to_string(ckpt.target_mode);
  header["target_mean"] = ckpt.target_mean;
  header["target_std"] = ckpt.target_std;
  header["seed"] = ckpt.seed;
  header["eval_seed"] = ckpt.eval_seed;
  header["config"] = ckpt.config;
  const std::string text = header.dump();

  detail::ByteWriter out;
  out.bytes("WMCK");
  out.uint<std::uint16_t>(ckpt.version);
  out.uint<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  out.bytes(text);
  for (const auto& t : ckpt.tensors) {
    for (double v : t.values) out.f64(v);
  }
  return out.buffer();
}

Checkpoint deserialize_checkpoint(std::string_view blob, const std::string& what) {
  detail::ByteReader in(blob, what);
  if (in.bytes(4) != "WMCK") throw FormatError(what + " is not a WMCK checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = in.uint<std::uint16_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError(what + " has checkpoint version " + std::to_string(ckpt.version) +
                       "; this build reads version " + std::to_string(kCheckpointVersion) +
                       " (upgrade needed)");
  }
  const auto header_len = in.uint<std::uint32_t>();
  ordered_json header;
  try {
    header = ordered_json::parse(in.bytes(header_len));
    for (const auto& spec : header.at("layers")) {
      ckpt.layers.push_back({nn::parse_layer_kind(spec.at("kind").get<std::string>()),
                             spec.at("in_dim").get<std::size_t>(), spec.at("out_dim").get<std::size_t>(),
                             spec.at("bn_momentum").get<double>(), spec.at("bn_eps").get<double>()});
    }
    for (const auto& t : header.at("tensors")) {
      ckpt.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<nn::Shape>(), {}});
    }
    ckpt.input.mean = header.at("input_mean").get<std::array<double, kPointChannels>>();
    ckpt.input.std = header.at("input_std").get<std::array<double, kPointChannels>>();
    ckpt.target_mode = parse_target_mode(header.at("target_mode").get<std::string>());
    ckpt.target_mean = header.at("target_mean").get<double>();
    ckpt.target_std = header.at("target_std").get<double>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.eval_seed = header.at("eval_seed").get<std::uint64_t>();
    ckpt.config = header.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header: " + e.what());
  }

  std::size_t expected = 0;
  for (const auto& t : ckpt.tensors) expected += nn::numel(t.shape);
  if (in.remaining() != expected * sizeof(double)) {
    throw ShapeError(what + ": header shapes need " + std::to_string(expected * sizeof(double)) +
                     " payload bytes, found " + std::to_string(in.remaining()));
  }
  for (auto& t : ckpt.tensors) {
    t.values.resize(nn::numel(t.shape));
    for (auto& v : t.values) v = in.f64();
  }
  for (const auto& spec : ckpt.layers) spec.validate();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path), "checkpoint '" + path.string() + "'");
}

}  // namespace tractcloud
