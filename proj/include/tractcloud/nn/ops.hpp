#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tractcloud/nn/tensor.hpp"

namespace tractcloud::nn {

enum class Mode { train, eval };

/// While alive, ops on this thread record no graph (inference only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

enum class LayerKind { shared_linear, linear, relu, batchnorm, maxpool_points };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  double bn_momentum = 0.9;  // weight kept on the old running value
  double bn_eps = 1e-5;

  void validate() const;
  bool operator==(const LayerSpec&) const = default;
};

/// Running statistics of one batch-norm layer.
struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  static BatchNormStats identity(std::size_t channels, double momentum = 0.9,
                                 double eps = 1e-5);
};

/// y[..., :] = x[..., :] . W + b over the last axis. x must be B x N x Cin.
/// Each output row is computed with a fixed FMA order over Cin, so a point's
/// features never depend on which other points share the batch.
Tensor shared_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Same kernel for B x Cin inputs.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);

/// Normalizes every channel (last axis) over all leading positions. Train
/// mode uses biased batch statistics and folds them into the running stats;
/// eval mode is a per-channel affine map of the running stats.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormStats& stats, Mode mode);
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 const BatchNormStats& stats);  // eval mode

struct MaxPoolResult {
  Tensor pooled;                      // B x C
  std::vector<std::uint32_t> argmax;  // B x C, lowest point index on ties
};

MaxPoolResult maxpool_points(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace tractcloud::nn
