#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tractcloud/nn/tensor.hpp"

namespace tractcloud::nn {

struct AdamaxConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-3;  // coupled L2: added to the gradient
};

struct AdamaxState {
  AdamaxConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> inf_norm;
};

/// One Adamax update over `params`, reading each tensor's accumulated
/// gradient (an absent gradient counts as zero):
///   g' = g + wd * theta
///   m  = beta1 * m + (1 - beta1) * g'
///   u  = max(beta2 * u, |g'|)
///   theta -= lr / (1 - beta1^t) * m / (u + eps)
/// Moment buffers are created on the first call.
void adamax_step(std::span<Tensor> params, AdamaxState& state);

}  // namespace tractcloud::nn
