#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tractcloud/checkpoint.hpp"
#include "tractcloud/nn/ops.hpp"
#include "tractcloud/nn/tensor.hpp"

namespace tractcloud {

/// PointNet without the spatial-transform sub-networks: per-point shared
/// MLP, max-pool to a global feature, fully connected head to one scalar.
/// No dropout.
struct ModelConfig {
  std::vector<std::size_t> mlp_widths{64, 64, 64, 128, 1024};
  std::vector<std::size_t> head_widths{512, 256, 1};
  std::size_t input_channels = kPointChannels;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  std::size_t feature_dim() const { return mlp_widths.back(); }
  void validate() const;
};

/// shared-linear/batchnorm/relu per MLP width, maxpool-points, then
/// linear/batchnorm/relu per hidden head width and a bare output linear.
std::vector<nn::LayerSpec> build_layer_specs(const ModelConfig& config);

struct ForwardTrace {
  nn::Tensor prediction;              // B, in model target units
  std::vector<std::uint32_t> argmax;  // B x feature_dim
  std::size_t feature_dim = 0;
};

class PointNet {
 public:
  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), biases uniform in
  /// +-1/sqrt(fan_in), batch-norm gamma 1 / beta 0, identity running stats.
  PointNet(const ModelConfig& config, std::uint64_t seed);

  /// Architecture from specs with every parameter zero (gamma 1).
  explicit PointNet(std::vector<nn::LayerSpec> layers);

  static PointNet from_checkpoint(const Checkpoint& ckpt);

  /// batch is B x N x C, already standardized. Train mode updates the
  /// batch-norm running statistics.
  ForwardTrace forward(const nn::Tensor& batch, nn::Mode mode);

  /// Eval-mode forward with no graph recorded; safe to call concurrently.
  ForwardTrace infer(const nn::Tensor& batch) const;

  /// Eval-mode pass up to the max-pool only.
  nn::MaxPoolResult global_features(const nn::Tensor& batch) const;

  std::vector<nn::Tensor> parameters() const;
  void zero_grad();

  const std::vector<nn::LayerSpec>& layers() const { return specs_; }
  std::size_t feature_dim() const;
  std::size_t input_channels() const;

  /// Parameters and running statistics under stable names.
  std::vector<NamedTensor> state() const;
  void load_state(std::span<const NamedTensor> tensors);

  void set_output_bias(double value);

 private:
  struct Layer {
    nn::LayerSpec spec;
    nn::Tensor weight;  // linear: in x out; batchnorm: gamma
    nn::Tensor bias;    // linear: out; batchnorm: beta
    nn::BatchNormStats stats;
  };

  template <typename BatchNormFn>
  ForwardTrace run(const nn::Tensor& batch, bool stop_at_pool, BatchNormFn&& bn) const;

  void check_input(const nn::Tensor& batch) const;

  std::vector<nn::LayerSpec> specs_;
  std::vector<Layer> layers_;
};

/// Per-channel mean/std over every row of every table (std floored at 1e-8).
InputStats estimate_input_stats(std::span<const PointTable* const> tables);

/// In place (x - mean) / max(std, 1e-8) on a row-major k x 5 buffer.
void standardize(std::span<double> rows, const InputStats& stats);

}  // namespace tractcloud
