#include "tractcloud/nn/adamax.hpp"

#include <algorithm>
#include <cmath>

#include "tractcloud/errors.hpp"

namespace tractcloud::nn {

void adamax_step(std::span<Tensor> params, AdamaxState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.inf_norm.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ConsistencyError("adamax state tracks " + std::to_string(state.first_moment.size()) +
                           " tensors but got " + std::to_string(params.size()));
  }
  const auto& cfg = state.config;
  ++state.step;
  const double step_size = cfg.lr / (1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].mutable_data();
    const auto grad = params[p].grad();
    auto& m = state.first_moment[p];
    auto& u = state.inf_norm[p];
    if (m.size() != theta.size()) throw ConsistencyError("adamax state shape drifted");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i]) + cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      u[i] = std::max(cfg.beta2 * u[i], std::abs(g));
      theta[i] -= step_size * m[i] / (u[i] + cfg.eps);
    }
  }
}

}  // namespace tractcloud::nn
