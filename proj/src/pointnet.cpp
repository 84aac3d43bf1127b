#include "tractcloud/pointnet.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tractcloud/errors.hpp"
#include "tractcloud/rng.hpp"

namespace tractcloud {

using nn::LayerKind;
using nn::LayerSpec;
using nn::Tensor;

namespace {

constexpr double kStdFloor = 1e-8;

bool is_affine(LayerKind kind) { return kind == LayerKind::shared_linear || kind == LayerKind::linear; }

}  // namespace

void ModelConfig::validate() const {
  if (mlp_widths.empty() || head_widths.empty()) throw ConfigError("model needs MLP and head widths");
  if (head_widths.back() != 1) throw ConfigError("last head width must be 1 (scalar regression output)");
  if (input_channels < 1) throw ConfigError("model needs at least one input channel");
  for (auto w : mlp_widths) {
    if (w < 1) throw ConfigError("MLP widths must be positive");
  }
  for (auto w : head_widths) {
    if (w < 1) throw ConfigError("head widths must be positive");
  }
}

std::vector<LayerSpec> build_layer_specs(const ModelConfig& config) {
  config.validate();
  std::vector<LayerSpec> specs;
  std::size_t width = config.input_channels;
  auto norm_relu = [&](std::size_t w) {
    specs.push_back({LayerKind::batchnorm, w, w, config.bn_momentum, config.bn_eps});
    specs.push_back({LayerKind::relu, w, w});
  };
  for (auto w : config.mlp_widths) {
    specs.push_back({LayerKind::shared_linear, width, w});
    norm_relu(w);
    width = w;
  }
  specs.push_back({LayerKind::maxpool_points, width, width});
  for (std::size_t i = 0; i < config.head_widths.size(); ++i) {
    const auto w = config.head_widths[i];
    specs.push_back({LayerKind::linear, width, w});
    if (i + 1 < config.head_widths.size()) norm_relu(w);
    width = w;
  }
  return specs;
}

PointNet::PointNet(std::vector<LayerSpec> layers) : specs_(std::move(layers)) {
  bool pooled = false;
  std::size_t width = 0;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& spec = specs_[i];
    spec.validate();
    Layer layer{spec, {}, {}, {}};
    switch (spec.kind) {
      case LayerKind::shared_linear:
      case LayerKind::linear:
        if ((spec.kind == LayerKind::linear) != pooled) {
          throw ConfigError("layer " + std::to_string(i) + ": " + nn::to_string(spec.kind) +
                            (pooled ? " after" : " before") + " the max-pool");
        }
        if (width != 0 && spec.in_dim != width) {
          throw ConfigError("layer " + std::to_string(i) + " expects width " + std::to_string(spec.in_dim) +
                            " but receives " + std::to_string(width));
        }
        layer.weight = Tensor::zeros({spec.in_dim, spec.out_dim}, true);
        layer.bias = Tensor::zeros({spec.out_dim}, true);
        width = spec.out_dim;
        break;
      case LayerKind::batchnorm:
        if (spec.in_dim != width) throw ConfigError("batchnorm width mismatch at layer " + std::to_string(i));
        layer.weight = Tensor::filled({spec.in_dim}, 1.0, true);
        layer.bias = Tensor::zeros({spec.in_dim}, true);
        layer.stats = nn::BatchNormStats::identity(spec.in_dim, spec.bn_momentum, spec.bn_eps);
        break;
      case LayerKind::maxpool_points:
        if (pooled) throw ConfigError("more than one max-pool layer");
        pooled = true;
        break;
      case LayerKind::relu:
        break;
    }
    layers_.push_back(std::move(layer));
  }
  if (!pooled || width != 1 || specs_.empty() || specs_.back().kind != LayerKind::linear) {
    throw ConfigError("architecture must pool points and end in a width-1 linear layer");
  }
}

PointNet::PointNet(const ModelConfig& config, std::uint64_t seed) : PointNet(build_layer_specs(config)) {
  Rng rng(derive_seed(seed, hash_string("pointnet-init")));
  for (auto& layer : layers_) {
    if (!is_affine(layer.spec.kind)) continue;
    const double fan_in = static_cast<double>(layer.spec.in_dim);
    const double w_bound = std::sqrt(6.0 / fan_in);
    const double b_bound = 1.0 / std::sqrt(fan_in);
    for (auto& w : layer.weight.mutable_data()) w = rng.uniform(-w_bound, w_bound);
    for (auto& b : layer.bias.mutable_data()) b = rng.uniform(-b_bound, b_bound);
  }
}

PointNet PointNet::from_checkpoint(const Checkpoint& ckpt) {
  PointNet net(ckpt.layers);
  net.load_state(ckpt.tensors);
  return net;
}

std::size_t PointNet::feature_dim() const {
  for (const auto& spec : specs_) {
    if (spec.kind == LayerKind::maxpool_points) return spec.in_dim;
  }
  return 0;
}

std::size_t PointNet::input_channels() const { return specs_.front().in_dim; }

void PointNet::check_input(const Tensor& batch) const {
  if (batch.rank() != 3 || batch.dim(2) != input_channels()) {
    throw ShapeError("PointNet expects B x N x " + std::to_string(input_channels()) + " input, got " +
                     nn::to_string(batch.shape()));
  }
}

template <typename BatchNormFn>
ForwardTrace PointNet::run(const Tensor& batch, bool stop_at_pool, BatchNormFn&& bn) const {
  check_input(batch);
  ForwardTrace trace;
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    switch (layer.spec.kind) {
      case LayerKind::shared_linear:
        x = nn::shared_linear(x, layer.weight, layer.bias);
        break;
      case LayerKind::linear:
        x = nn::linear(x, layer.weight, layer.bias);
        break;
      case LayerKind::relu:
        x = nn::relu(x);
        break;
      case LayerKind::batchnorm:
        x = bn(i, x);
        break;
      case LayerKind::maxpool_points: {
        auto pooled = nn::maxpool_points(x);
        trace.argmax = std::move(pooled.argmax);
        trace.feature_dim = layer.spec.in_dim;
        x = std::move(pooled.pooled);
        if (stop_at_pool) {
          trace.prediction = x;
          return trace;
        }
        break;
      }
    }
  }
  trace.prediction = nn::reshape(x, {x.dim(0)});
  return trace;
}

ForwardTrace PointNet::forward(const Tensor& batch, nn::Mode mode) {
  return run(batch, false, [this, mode](std::size_t i, const Tensor& x) {
    auto& layer = layers_[i];
    return nn::batchnorm(x, layer.weight, layer.bias, layer.stats, mode);
  });
}

ForwardTrace PointNet::infer(const Tensor& batch) const {
  nn::NoGradGuard guard;
  return run(batch, false, [this](std::size_t i, const Tensor& x) {
    const auto& layer = layers_[i];
    return nn::batchnorm(x, layer.weight, layer.bias, layer.stats);
  });
}

nn::MaxPoolResult PointNet::global_features(const Tensor& batch) const {
  nn::NoGradGuard guard;
  auto trace = run(batch, true, [this](std::size_t i, const Tensor& x) {
    const auto& layer = layers_[i];
    return nn::batchnorm(x, layer.weight, layer.bias, layer.stats);
  });
  return {std::move(trace.prediction), std::move(trace.argmax)};
}

std::vector<Tensor> PointNet::parameters() const {
  std::vector<Tensor> params;
  for (const auto& layer : layers_) {
    if (layer.weight.defined()) {
      params.push_back(layer.weight);
      params.push_back(layer.bias);
    }
  }
  return params;
}

void PointNet::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

std::vector<NamedTensor> PointNet::state() const {
  std::vector<NamedTensor> out;
  auto add = [&out](std::string name, const Tensor& t) {
    out.push_back({std::move(name), t.shape(), {t.data().begin(), t.data().end()}});
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (is_affine(layer.spec.kind)) {
      add(prefix + "weight", layer.weight);
      add(prefix + "bias", layer.bias);
    } else if (layer.spec.kind == LayerKind::batchnorm) {
      add(prefix + "gamma", layer.weight);
      add(prefix + "beta", layer.bias);
      out.push_back({prefix + "running_mean", {layer.stats.running_mean.size()}, layer.stats.running_mean});
      out.push_back({prefix + "running_var", {layer.stats.running_var.size()}, layer.stats.running_var});
    }
  }
  return out;
}

void PointNet::load_state(std::span<const NamedTensor> tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto fetch = [&](const std::string& name, std::size_t count) -> const std::vector<double>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConsistencyError("state is missing tensor '" + name + "'");
    if (it->second->values.size() != count) {
      throw ShapeError("tensor '" + name + "' has " + std::to_string(it->second->values.size()) +
                       " values, architecture needs " + std::to_string(count));
    }
    return it->second->values;
  };
  auto assign = [&](Tensor& t, const std::string& name) {
    const auto& values = fetch(name, t.numel());
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& layer = layers_[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (is_affine(layer.spec.kind)) {
      assign(layer.weight, prefix + "weight");
      assign(layer.bias, prefix + "bias");
    } else if (layer.spec.kind == LayerKind::batchnorm) {
      assign(layer.weight, prefix + "gamma");
      assign(layer.bias, prefix + "beta");
      layer.stats.running_mean = fetch(prefix + "running_mean", layer.spec.in_dim);
      layer.stats.running_var = fetch(prefix + "running_var", layer.spec.in_dim);
    }
  }
}

void PointNet::set_output_bias(double value) {
  auto b = layers_.back().bias.mutable_data();
  std::fill(b.begin(), b.end(), value);
}

InputStats estimate_input_stats(std::span<const PointTable* const> tables) {
  InputStats stats;
  std::array<double, kPointChannels> sum{}, sq{};
  std::size_t rows = 0;
  for (const auto* t : tables) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      for (std::size_t c = 0; c < kPointChannels; ++c) sum[c] += t->row(r)[c];
    }
    rows += t->rows();
  }
  if (rows == 0) throw ValidationError("cannot estimate input statistics from zero points");
  for (std::size_t c = 0; c < kPointChannels; ++c) stats.mean[c] = sum[c] / static_cast<double>(rows);
  for (const auto* t : tables) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      for (std::size_t c = 0; c < kPointChannels; ++c) {
        const double d = t->row(r)[c] - stats.mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < kPointChannels; ++c) {
    stats.std[c] = std::max(std::sqrt(sq[c] / static_cast<double>(rows)), kStdFloor);
  }
  return stats;
}

void standardize(std::span<double> rows, const InputStats& stats) {
  if (rows.size() % kPointChannels != 0) {
    throw ShapeError("standardize expects a multiple of " + std::to_string(kPointChannels) + " values");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t c = i % kPointChannels;
    rows[i] = (rows[i] - stats.mean[c]) / std::max(stats.std[c], kStdFloor);
  }
}

}  // namespace tractcloud
