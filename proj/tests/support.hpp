#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tractcloud/nn/tensor.hpp"
#include "tractcloud/rng.hpp"
#include "tractcloud/tract.hpp"

namespace tractcloud::testing {

inline nn::Tensor random_tensor(nn::Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                                double hi = 1.0) {
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return nn::Tensor(std::move(shape), std::move(v), requires_grad);
}

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double relative_error(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central differences of the scalar `loss` against every element of every
// input, compared with the gradients left by one backward pass.
inline double max_gradient_error(std::vector<nn::Tensor> inputs, const std::function<nn::Tensor()>& loss,
                                 double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

// Straight streamline helper: n points from a to b, FA ramp fa0 -> fa1.
inline Streamline straight_streamline(Vec3f a, Vec3f b, std::size_t n, float fa0 = 0.3f, float fa1 = 0.6f) {
  Streamline s;
  for (std::size_t i = 0; i < n; ++i) {
    const float t = n == 1 ? 0.0f : static_cast<float>(i) / static_cast<float>(n - 1);
    s.points.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])});
    s.fa.push_back(fa0 + t * (fa1 - fa0));
  }
  return s;
}

inline Tract random_tract(Rng& rng, std::size_t streamlines, std::size_t min_pts, std::size_t max_pts,
                          const std::string& id = "sub") {
  Tract t{id, {}};
  for (std::size_t s = 0; s < streamlines; ++s) {
    const auto n = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(min_pts),
                                                        static_cast<std::int64_t>(max_pts)));
    Streamline sl;
    Vec3f p{static_cast<float>(rng.uniform(-5, 5)), static_cast<float>(rng.uniform(-5, 5)),
            static_cast<float>(rng.uniform(-5, 5))};
    for (std::size_t i = 0; i < n; ++i) {
      sl.points.push_back(p);
      sl.fa.push_back(static_cast<float>(rng.uniform(0.2, 0.7)));
      for (auto& c : p) c += static_cast<float>(rng.uniform(0.2, 1.5));
    }
    t.streamlines.push_back(std::move(sl));
  }
  return t;
}

}  // namespace tractcloud::testing
