#include "tractcloud/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <utility>

#include "tractcloud/errors.hpp"

namespace tractcloud::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

using detail::Node;

thread_local bool t_grad_enabled = true;

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->leaf = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

// out[r, :] = b + sum_k x[r, k] * W[k, :], with k ascending and fused
// multiply-adds, identically for every row regardless of tiling.
void affine_rows(const double* x, const double* w, const double* b, double* out,
                 std::size_t rows, std::size_t cin, std::size_t cout) {
  constexpr std::size_t kRowTile = 4;
  constexpr std::size_t kColTile = 32;
  double acc[kRowTile][kColTile];
  for (std::size_t r = 0; r < rows; r += kRowTile) {
    const std::size_t rt = std::min(kRowTile, rows - r);
    for (std::size_t j0 = 0; j0 < cout; j0 += kColTile) {
      const std::size_t ct = std::min(kColTile, cout - j0);
      for (std::size_t i = 0; i < kRowTile; ++i) {
        for (std::size_t j = 0; j < kColTile; ++j) acc[i][j] = j < ct ? b[j0 + j] : 0.0;
      }
      if (rt == kRowTile && ct == kColTile) {
        for (std::size_t k = 0; k < cin; ++k) {
          const double* wk = w + k * cout + j0;
          for (std::size_t i = 0; i < kRowTile; ++i) {
            const double xv = x[(r + i) * cin + k];
            for (std::size_t j = 0; j < kColTile; ++j) acc[i][j] = std::fma(xv, wk[j], acc[i][j]);
          }
        }
      } else {
        for (std::size_t k = 0; k < cin; ++k) {
          const double* wk = w + k * cout + j0;
          for (std::size_t i = 0; i < rt; ++i) {
            const double xv = x[(r + i) * cin + k];
            for (std::size_t j = 0; j < ct; ++j) acc[i][j] = std::fma(xv, wk[j], acc[i][j]);
          }
        }
      }
      for (std::size_t i = 0; i < rt; ++i) {
        std::memcpy(out + (r + i) * cout + j0, acc[i], ct * sizeof(double));
      }
    }
  }
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias, Shape out_shape,
              std::size_t rows) {
  const std::size_t cin = weight.dim(0);
  const std::size_t cout = weight.dim(1);
  std::vector<double> out(rows * cout);
  affine_rows(x.data().data(), weight.data().data(), bias.data().data(), out.data(), rows, cin,
              cout);
  Node* xn = x.node().get();
  Node* wn = weight.node().get();
  Node* bn = bias.node().get();
  return make_result(std::move(out_shape), std::move(out), {x, weight, bias},
                     [xn, wn, bn, rows, cin, cout](Node& self) {
                       ConstMap dy(self.grad.data(), rows, cout);
                       if (xn->requires_grad) {
                         Map dx(xn->grad_buffer().data(), rows, cin);
                         dx.noalias() += dy * ConstMap(wn->data.data(), cin, cout).transpose();
                       }
                       if (wn->requires_grad) {
                         Map dw(wn->grad_buffer().data(), cin, cout);
                         dw.noalias() += ConstMap(xn->data.data(), rows, cin).transpose() * dy;
                       }
                       if (bn->requires_grad) {
                         auto& db = bn->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < cout; ++j) db[j] += dy(r, j);
                         }
                       }
                     });
}

void check_affine_operands(const Tensor& x, const Tensor& weight, const Tensor& bias,
                           const char* op) {
  if (weight.rank() != 2 || bias.rank() != 1 || x.shape().back() != weight.dim(0) ||
      bias.dim(0) != weight.dim(1)) {
    throw ShapeError(std::string(op) + ": input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()) + " and bias " + to_string(bias.shape()));
  }
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::shared_linear: return "shared-linear";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::maxpool_points: return "maxpool-points";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (auto kind : {LayerKind::shared_linear, LayerKind::linear, LayerKind::relu,
                    LayerKind::batchnorm, LayerKind::maxpool_points}) {
    if (to_string(kind) == name) return kind;
  }
  throw FormatError("unknown layer kind '" + name + "'");
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::shared_linear:
    case LayerKind::linear:
      if (in_dim < 1 || out_dim < 1) {
        throw ConfigError(to_string(kind) + " layer needs in_dim, out_dim >= 1");
      }
      break;
    case LayerKind::batchnorm:
      if (in_dim < 1 || in_dim != out_dim) throw ConfigError("batchnorm needs in_dim == out_dim >= 1");
      if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0) || !(bn_eps > 0.0)) {
        throw ConfigError("batchnorm momentum must lie in [0, 1] and eps be positive");
      }
      break;
    case LayerKind::relu:
    case LayerKind::maxpool_points:
      break;
  }
}

BatchNormStats BatchNormStats::identity(std::size_t channels, double momentum, double eps) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), momentum, eps};
}

Tensor shared_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3) throw ShapeError("shared_linear expects B x N x C input, got " + to_string(x.shape()));
  check_affine_operands(x, weight, bias, "shared_linear");
  return affine(x, weight, bias, {x.dim(0), x.dim(1), weight.dim(1)}, x.dim(0) * x.dim(1));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2) throw ShapeError("linear expects B x C input, got " + to_string(x.shape()));
  check_affine_operands(x, weight, bias, "linear");
  return affine(x, weight, bias, {x.dim(0), weight.dim(1)}, x.dim(0));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Node* xn = x.node().get();
  return make_result(x.shape(), std::move(out), {x}, [xn](Node& self) {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xn->data[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

namespace {

std::size_t check_batchnorm_operands(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                     const BatchNormStats& stats) {
  const std::size_t channels = x.shape().back();
  if (gamma.numel() != channels || beta.numel() != channels ||
      stats.running_mean.size() != channels || stats.running_var.size() != channels) {
    throw ShapeError("batchnorm: input " + to_string(x.shape()) + " has " + std::to_string(channels) +
                     " channels but parameters/stats have " + std::to_string(gamma.numel()) + "/" +
                     std::to_string(stats.running_mean.size()));
  }
  return channels;
}

}  // namespace

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const BatchNormStats& stats) {
  const std::size_t channels = check_batchnorm_operands(x, gamma, beta, stats);
  const auto xs = x.data();
  const auto g = gamma.data();
  const auto bt = beta.data();
  std::vector<double> out(x.numel());
  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();
  std::vector<double> invstd(channels);
  for (std::size_t c = 0; c < channels; ++c) invstd[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
  const auto& rm = stats.running_mean;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % channels;
    out[i] = (xs[i] - rm[c]) * invstd[c] * g[c] + bt[c];
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xn, gn, bn, channels, invstd, rm](Node& self) {
                       const auto& dy = self.grad;
                       if (xn->requires_grad) {
                         auto& dx = xn->grad_buffer();
                         for (std::size_t i = 0; i < dy.size(); ++i) {
                           const std::size_t c = i % channels;
                           dx[i] += dy[i] * gn->data[c] * invstd[c];
                         }
                       }
                       if (gn->requires_grad) {
                         auto& dg = gn->grad_buffer();
                         for (std::size_t i = 0; i < dy.size(); ++i) {
                           const std::size_t c = i % channels;
                           dg[c] += dy[i] * (xn->data[i] - rm[c]) * invstd[c];
                         }
                       }
                       if (bn->requires_grad) {
                         auto& db = bn->grad_buffer();
                         for (std::size_t i = 0; i < dy.size(); ++i) db[i % channels] += dy[i];
                       }
                     });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                 Mode mode) {
  if (mode == Mode::eval) return batchnorm(x, gamma, beta, static_cast<const BatchNormStats&>(stats));
  const std::size_t channels = check_batchnorm_operands(x, gamma, beta, stats);
  const std::size_t rows = x.numel() / channels;
  const auto xs = x.data();
  const auto g = gamma.data();
  const auto bt = beta.data();
  std::vector<double> out(x.numel());
  Node* xn = x.node().get();
  Node* gn = gamma.node().get();
  Node* bn = beta.node().get();

  // Two-pass batch statistics.
  std::vector<double> mu(channels, 0.0), var(channels, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) mu[c] += xs[r * channels + c];
  }
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = xs[r * channels + c] - mu[c];
      var[c] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(rows);

  std::vector<double> invstd(channels);
  for (std::size_t c = 0; c < channels; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + stats.eps);
  std::vector<double> xhat(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      xhat[i] = (xs[i] - mu[c]) * invstd[c];
      out[i] = xhat[i] * g[c] + bt[c];
    }
  }

  const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  for (std::size_t c = 0; c < channels; ++c) {
    stats.running_mean[c] = stats.momentum * stats.running_mean[c] + (1.0 - stats.momentum) * mu[c];
    stats.running_var[c] = stats.momentum * stats.running_var[c] + (1.0 - stats.momentum) * var[c] * unbias;
  }

  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, channels, invstd, xhat = std::move(xhat)](Node& self) {
        const auto& dy = self.grad;
        std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
        for (std::size_t i = 0; i < dy.size(); ++i) {
          const std::size_t c = i % channels;
          sum_dy[c] += dy[i];
          sum_dy_xhat[c] += dy[i] * xhat[i];
        }
        if (xn->requires_grad) {
          auto& dx = xn->grad_buffer();
          const double inv_rows = 1.0 / static_cast<double>(rows);
          for (std::size_t i = 0; i < dy.size(); ++i) {
            const std::size_t c = i % channels;
            dx[i] += gn->data[c] * invstd[c] * inv_rows *
                     (static_cast<double>(rows) * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
          }
        }
        if (gn->requires_grad) {
          auto& dg = gn->grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (bn->requires_grad) {
          auto& db = bn->grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) db[c] += sum_dy[c];
        }
      });
}

MaxPoolResult maxpool_points(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("maxpool_points expects B x N x C input, got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0), points = x.dim(1), channels = x.dim(2);
  const auto xs = x.data();
  std::vector<double> pooled(batch * channels);
  std::vector<std::uint32_t> argmax(batch * channels, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = xs.data() + b * points * channels;
    double* best = pooled.data() + b * channels;
    std::uint32_t* arg = argmax.data() + b * channels;
    std::memcpy(best, base, channels * sizeof(double));
    for (std::size_t n = 1; n < points; ++n) {
      const double* row = base + n * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        if (row[c] > best[c]) {
          best[c] = row[c];
          arg[c] = static_cast<std::uint32_t>(n);
        }
      }
    }
  }
  Node* xn = x.node().get();
  auto pooled_tensor =
      make_result({batch, channels}, std::move(pooled), {x},
                  [xn, argmax, points, channels](Node& self) {
                    auto& dx = xn->grad_buffer();
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      const std::size_t b = i / channels, c = i % channels;
                      dx[(b * points + argmax[i]) * channels + c] += self.grad[i];
                    }
                  });
  return {std::move(pooled_tensor), std::move(argmax)};
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape from " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Node* xn = x.node().get();
  return make_result(std::move(shape), std::move(out), {x}, [xn](Node& self) {
    auto& dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    for (Node* n : {an, bn}) {
      if (!n->requires_grad) continue;
      auto& d = n->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& d = an->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& d = bn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Node* an = a.node().get();
  Node* bn = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& d = an->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& d = bn->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  Node* xn = x.node().get();
  return make_result(x.shape(), std::move(out), {x}, [xn, factor](Node& self) {
    auto& d = xn->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  Node* xn = x.node().get();
  return make_result(x.shape(), std::move(out), {x}, [xn](Node& self) {
    auto& d = xn->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * xn->data[i] * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Node* xn = x.node().get();
  return make_result({1}, {total}, {x}, [xn](Node& self) {
    auto& d = xn->grad_buffer();
    for (auto& v : d) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace tractcloud::nn
