#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tractcloud/tract.hpp"
#include "tractcloud/tract_io.hpp"

namespace tractcloud {

enum class FeatureKind { mean, along_tract };
enum class RegressorKind { lr, enr };

std::string to_string(FeatureKind kind);
std::string to_string(RegressorKind kind);
FeatureKind parse_feature_kind(const std::string& text);  // "mean" | "afq"
RegressorKind parse_regressor_kind(const std::string& text);  // "lr" | "enr"

inline constexpr std::size_t kProfileNodes = 100;

struct FeatureVector {
  FeatureKind kind = FeatureKind::mean;
  std::string subject_id;
  std::vector<double> values;  // mean: [fa, nos]; along-tract: nodes FA values then nos
};

/// [mean FA over all points, streamline count].
FeatureVector mean_features(const Tract& tract);

struct ResampledStreamline {
  std::vector<std::array<double, 3>> points;
  std::vector<double> fa;
};

/// Positions at equal arc-length steps from the first to the last point,
/// position and FA linearly interpolated. Zero length is a ValidationError.
ResampledStreamline resample_streamline(const Streamline& s, std::size_t nodes);

/// Along-tract profile: resample, orient every streamline against the
/// running mean endpoints, flip the whole bundle so the mean end lies
/// further along the dominant axis than the mean start, average FA per node,
/// append the streamline count.
FeatureVector tract_profile(const Tract& tract, std::size_t nodes = kProfileNodes);

struct LinearModel {
  std::vector<double> coefficients;  // on standardized features
  double intercept = 0.0;            // on standardized features
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;  // population std, 1 for constant columns
  std::optional<double> alpha;        // elastic net only
  std::optional<double> l1_ratio;
  bool converged = true;
  std::size_t iterations = 0;

  double predict(std::span<const double> x) const;
  /// Coefficients and intercept mapped back to the raw feature scale.
  std::vector<double> raw_coefficients() const;
  double raw_intercept() const;
};

/// Row-major design matrix.
struct Design {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

Design make_design(std::span<const FeatureVector> features);

/// Least squares on standardized features via the normal equations with a
/// small ridge (`jitter`). With jitter 0 a rank-deficient system raises
/// SingularMatrixError. Fewer rows than columns uses the minimum-norm
/// pseudo-inverse solution.
LinearModel fit_ols(const Design& x, std::span<const double> y, double jitter = 1e-10);

/// Minimizes (1/2n)|y - b - Zw|^2 + alpha*l1*|w|_1 + alpha*(1-l1)/2*|w|^2 on
/// standardized Z by cyclic coordinate descent. Stops when the largest
/// coefficient change is below tol; `converged` records whether it did.
LinearModel fit_elastic_net(const Design& x, std::span<const double> y, double alpha, double l1_ratio,
                            std::size_t max_iter = 10000, double tol = 1e-8);

/// Max KKT violation of an elastic-net fit on (x, y).
double elastic_net_kkt_residual(const LinearModel& model, const Design& x, std::span<const double> y);

struct BaselineReport {
  std::string method;  // e.g. "afq+enr"
  double mae = 0.0;
  double mae_std = 0.0;
  double r = 0.0;
  std::size_t n_test = 0;
  nlohmann::ordered_json hyperparams = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

struct BaselineOptions {
  std::uint64_t seed = 0;  // drives the internal validation split
  std::vector<double> alphas;  // empty: default log grid 1e-4 .. 10
  std::vector<double> l1_ratios{0.1, 0.5, 0.9};
  double validation_fraction = 0.2;
};

std::vector<double> default_alpha_grid();

FeatureVector extract_features(const Tract& tract, FeatureKind kind);

/// Fits on train, reports MAE and r on test. ENR hyperparameters are chosen
/// by validation MSE on a seeded internal split of the training rows, then
/// refit on all training rows.
BaselineReport run_baseline(std::span<const FeatureVector> train_x, std::span<const double> train_y,
                            std::span<const FeatureVector> test_x, std::span<const double> test_y,
                            RegressorKind model, const BaselineOptions& options = {});

BaselineReport run_baseline(const Manifest& manifest, FeatureKind kind, RegressorKind model,
                            const BaselineOptions& options = {});

}  // namespace tractcloud
