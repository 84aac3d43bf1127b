#include "tractcloud/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "tractcloud/errors.hpp"
#include "tractcloud/metrics.hpp"
#include "tractcloud/parallel.hpp"
#include "tractcloud/rng.hpp"

namespace tractcloud {

namespace {

using Vec3 = std::array<double, 3>;

double dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Vec3 to_vec(const Vec3f& p) { return {p[0], p[1], p[2]}; }

// Standardized, centered copy of x (column-major) plus the stats.
struct Standardized {
  Eigen::MatrixXd z;
  std::vector<double> mean;
  std::vector<double> scale;
  Eigen::VectorXd yc;
  double y_mean = 0.0;
};

Standardized standardize_design(const Design& x, std::span<const double> y) {
  if (x.rows == 0 || x.cols == 0) throw ValidationError("baseline fit: empty design matrix");
  if (y.size() != x.rows) {
    throw ValidationError("baseline fit: " + std::to_string(y.size()) + " targets for " + std::to_string(x.rows) +
                          " rows");
  }
  Standardized s;
  const auto n = static_cast<double>(x.rows);
  s.mean.assign(x.cols, 0.0);
  s.scale.assign(x.cols, 1.0);
  for (std::size_t c = 0; c < x.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) m += x.at(r, c);
    m /= n;
    double v = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) v += (x.at(r, c) - m) * (x.at(r, c) - m);
    const double sd = std::sqrt(v / n);
    s.mean[c] = m;
    s.scale[c] = sd > 0.0 ? sd : 1.0;
  }
  s.z.resize(static_cast<Eigen::Index>(x.rows), static_cast<Eigen::Index>(x.cols));
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      s.z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (x.at(r, c) - s.mean[c]) / s.scale[c];
    }
  }
  s.y_mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  s.yc.resize(static_cast<Eigen::Index>(x.rows));
  for (std::size_t r = 0; r < x.rows; ++r) s.yc(static_cast<Eigen::Index>(r)) = y[r] - s.y_mean;
  return s;
}

LinearModel model_from(const Standardized& s, const Eigen::VectorXd& beta) {
  LinearModel m;
  m.coefficients.assign(beta.data(), beta.data() + beta.size());
  m.intercept = s.y_mean;
  m.feature_mean = s.mean;
  m.feature_scale = s.scale;
  return m;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

std::string to_string(FeatureKind kind) { return kind == FeatureKind::mean ? "mean" : "afq"; }
std::string to_string(RegressorKind kind) { return kind == RegressorKind::lr ? "lr" : "enr"; }

FeatureKind parse_feature_kind(const std::string& text) {
  if (text == "mean") return FeatureKind::mean;
  if (text == "afq" || text == "along-tract") return FeatureKind::along_tract;
  throw ConfigError("unknown feature kind '" + text + "' (expected mean or afq)");
}

RegressorKind parse_regressor_kind(const std::string& text) {
  if (text == "lr") return RegressorKind::lr;
  if (text == "enr") return RegressorKind::enr;
  throw ConfigError("unknown model '" + text + "' (expected lr or enr)");
}

FeatureVector mean_features(const Tract& tract) {
  tract.validate();
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : tract.streamlines) {
    for (float f : s.fa) sum += f;
    count += s.fa.size();
  }
  return {FeatureKind::mean, tract.subject_id, {sum / static_cast<double>(count), static_cast<double>(tract.nos())}};
}

ResampledStreamline resample_streamline(const Streamline& s, std::size_t nodes) {
  if (s.points.size() < 2) throw ValidationError("resample: streamline needs at least 2 points");
  if (nodes < 2) throw ConfigError("resample: need at least 2 nodes");
  std::vector<double> cum(s.points.size(), 0.0);
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    cum[i] = cum[i - 1] + dist(to_vec(s.points[i - 1]), to_vec(s.points[i]));
  }
  const double length = cum.back();
  if (!(length > 0.0)) throw ValidationError("resample: zero-length streamline");

  ResampledStreamline out;
  out.points.resize(nodes);
  out.fa.resize(nodes);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < nodes; ++k) {
    const double target = length * static_cast<double>(k) / static_cast<double>(nodes - 1);
    while (seg + 2 < cum.size() && cum[seg + 1] < target) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double t = span > 0.0 ? std::clamp((target - cum[seg]) / span, 0.0, 1.0) : 0.0;
    const auto a = to_vec(s.points[seg]);
    const auto b = to_vec(s.points[seg + 1]);
    for (int d = 0; d < 3; ++d) out.points[k][d] = a[d] + t * (b[d] - a[d]);
    out.fa[k] = s.fa[seg] + t * (static_cast<double>(s.fa[seg + 1]) - s.fa[seg]);
  }
  return out;
}

FeatureVector tract_profile(const Tract& tract, std::size_t nodes) {
  tract.validate();
  Vec3 start_sum{0, 0, 0}, end_sum{0, 0, 0};
  std::vector<double> fa_sum(nodes, 0.0);
  std::size_t aligned = 0;
  for (const auto& s : tract.streamlines) {
    auto r = resample_streamline(s, nodes);
    if (aligned > 0) {
      Vec3 ms, me;
      for (int d = 0; d < 3; ++d) {
        ms[d] = start_sum[d] / static_cast<double>(aligned);
        me[d] = end_sum[d] / static_cast<double>(aligned);
      }
      const double keep = dist(r.points.front(), ms) + dist(r.points.back(), me);
      const double flip = dist(r.points.back(), ms) + dist(r.points.front(), me);
      if (flip < keep) {
        std::reverse(r.points.begin(), r.points.end());
        std::reverse(r.fa.begin(), r.fa.end());
      }
    }
    for (int d = 0; d < 3; ++d) {
      start_sum[d] += r.points.front()[d];
      end_sum[d] += r.points.back()[d];
    }
    for (std::size_t k = 0; k < nodes; ++k) fa_sum[k] += r.fa[k];
    ++aligned;
  }

  // Canonical direction: mean end further along the dominant axis.
  int axis = 0;
  for (int d = 1; d < 3; ++d) {
    if (std::abs(end_sum[d] - start_sum[d]) > std::abs(end_sum[axis] - start_sum[axis])) axis = d;
  }
  if (end_sum[axis] < start_sum[axis]) std::reverse(fa_sum.begin(), fa_sum.end());

  FeatureVector fv{FeatureKind::along_tract, tract.subject_id, {}};
  fv.values.reserve(nodes + 1);
  for (double v : fa_sum) fv.values.push_back(v / static_cast<double>(aligned));
  fv.values.push_back(static_cast<double>(tract.nos()));
  return fv;
}

FeatureVector extract_features(const Tract& tract, FeatureKind kind) {
  return kind == FeatureKind::mean ? mean_features(tract) : tract_profile(tract);
}

double LinearModel::predict(std::span<const double> x) const {
  if (x.size() != coefficients.size()) {
    throw ShapeError("linear model expects " + std::to_string(coefficients.size()) + " features, got " +
                     std::to_string(x.size()));
  }
  double y = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) y += coefficients[j] * (x[j] - feature_mean[j]) / feature_scale[j];
  return y;
}

std::vector<double> LinearModel::raw_coefficients() const {
  std::vector<double> out(coefficients.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = coefficients[j] / feature_scale[j];
  return out;
}

double LinearModel::raw_intercept() const {
  double b = intercept;
  for (std::size_t j = 0; j < coefficients.size(); ++j) b -= coefficients[j] * feature_mean[j] / feature_scale[j];
  return b;
}

Design make_design(std::span<const FeatureVector> features) {
  Design d;
  if (features.empty()) return d;
  d.cols = features.front().values.size();
  d.rows = features.size();
  d.values.reserve(d.rows * d.cols);
  for (const auto& f : features) {
    if (f.values.size() != d.cols) throw ShapeError("make_design: ragged feature vectors");
    d.values.insert(d.values.end(), f.values.begin(), f.values.end());
  }
  return d;
}

LinearModel fit_ols(const Design& x, std::span<const double> y, double jitter) {
  if (jitter < 0.0) throw ConfigError("fit_ols: jitter must be >= 0");
  const auto s = standardize_design(x, y);
  const auto p = s.z.cols();
  Eigen::VectorXd beta;
  if (s.z.rows() < p) {
    beta = s.z.completeOrthogonalDecomposition().solve(s.yc);
  } else {
    if (jitter == 0.0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(s.z);
      if (qr.rank() < p) {
        throw SingularMatrixError("fit_ols: design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                  std::to_string(p) + " columns");
      }
    }
    Eigen::MatrixXd a = s.z.transpose() * s.z;
    a.diagonal().array() += jitter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) throw SingularMatrixError("fit_ols: normal equations not solvable");
    beta = ldlt.solve(s.z.transpose() * s.yc);
  }
  return model_from(s, beta);
}

LinearModel fit_elastic_net(const Design& x, std::span<const double> y, double alpha, double l1_ratio,
                            std::size_t max_iter, double tol) {
  if (!(alpha >= 0.0)) throw ConfigError("fit_elastic_net: alpha must be >= 0");
  if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) throw ConfigError("fit_elastic_net: l1_ratio must be in [0, 1]");
  const auto s = standardize_design(x, y);
  const auto n = static_cast<double>(s.z.rows());
  const auto p = s.z.cols();
  const double l1 = alpha * l1_ratio;
  const double l2 = alpha * (1.0 - l1_ratio);
  Eigen::VectorXd norm2 = s.z.colwise().squaredNorm().transpose() / n;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd resid = s.yc;

  bool converged = false;
  std::size_t iter = 0;
  while (iter < max_iter) {
    ++iter;
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double denom = norm2(j) + l2;
      const double old = beta(j);
      double updated = 0.0;
      if (denom > 0.0) {
        const double rho = s.z.col(j).dot(resid) / n + norm2(j) * old;
        updated = soft_threshold(rho, l1) / denom;
      }
      if (updated != old) {
        resid -= (updated - old) * s.z.col(j);
        beta(j) = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    if (max_change < tol) {
      converged = true;
      break;
    }
  }
  auto m = model_from(s, beta);
  m.alpha = alpha;
  m.l1_ratio = l1_ratio;
  m.converged = converged;
  m.iterations = iter;
  return m;
}

double elastic_net_kkt_residual(const LinearModel& model, const Design& x, std::span<const double> y) {
  const auto s = standardize_design(x, y);
  const auto n = static_cast<double>(s.z.rows());
  const double alpha = model.alpha.value_or(0.0);
  const double l1 = alpha * model.l1_ratio.value_or(1.0);
  const double l2 = alpha - l1;
  Eigen::Map<const Eigen::VectorXd> beta(model.coefficients.data(), static_cast<Eigen::Index>(model.coefficients.size()));
  const Eigen::VectorXd resid = s.yc - s.z * beta;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < s.z.cols(); ++j) {
    const double g = s.z.col(j).dot(resid) / n - l2 * beta(j);
    const double v = beta(j) != 0.0 ? std::abs(g - l1 * (beta(j) > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g) - l1);
    worst = std::max(worst, v);
  }
  return worst;
}

nlohmann::ordered_json BaselineReport::to_json() const {
  return {{"method", method}, {"mae", mae},       {"mae_std", mae_std},
          {"r", r},           {"n_test", n_test}, {"hyperparams", hyperparams}};
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(std::pow(10.0, -4.0 + 0.5 * i));
  return grid;
}

namespace {

Design select_rows(const Design& x, std::span<const std::size_t> rows) {
  Design d;
  d.cols = x.cols;
  d.rows = rows.size();
  for (auto r : rows) d.values.insert(d.values.end(), x.row(r).begin(), x.row(r).end());
  return d;
}

}  // namespace

BaselineReport run_baseline(std::span<const FeatureVector> train_x, std::span<const double> train_y,
                            std::span<const FeatureVector> test_x, std::span<const double> test_y,
                            RegressorKind model, const BaselineOptions& options) {
  if (train_x.size() < 2) throw ValidationError("baseline: need at least 2 training subjects");
  if (test_x.empty()) throw ValidationError("baseline: no test subjects");
  if (train_x.size() != train_y.size() || test_x.size() != test_y.size()) {
    throw ValidationError("baseline: feature and score counts differ");
  }
  const auto kind = train_x.front().kind;
  const auto xtr = make_design(train_x);
  const auto xte = make_design(test_x);
  if (xte.cols != xtr.cols) throw ShapeError("baseline: train and test feature lengths differ");

  BaselineReport report;
  report.method = to_string(kind) + "+" + to_string(model);
  LinearModel fitted;
  if (model == RegressorKind::lr) {
    fitted = fit_ols(xtr, train_y);
    report.hyperparams = {{"jitter", 1e-10}};
  } else {
    std::vector<std::size_t> order(xtr.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, hash_string("baseline-split")));
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(options.validation_fraction * static_cast<double>(xtr.rows))), 1,
        xtr.rows - 1);
    std::vector<std::size_t> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(fit_rows.begin(), fit_rows.end());
    const auto xfit = select_rows(xtr, fit_rows);
    std::vector<double> yfit;
    for (auto r : fit_rows) yfit.push_back(train_y[r]);

    const auto alphas = options.alphas.empty() ? default_alpha_grid() : options.alphas;
    double best = std::numeric_limits<double>::infinity();
    double best_alpha = alphas.front(), best_l1 = options.l1_ratios.front();
    for (double l1 : options.l1_ratios) {
      for (double a : alphas) {
        const auto m = fit_elastic_net(xfit, yfit, a, l1, 10000, 1e-7);
        double mse = 0.0;
        for (auto r : val_rows) {
          const double e = m.predict(xtr.row(r)) - train_y[r];
          mse += e * e;
        }
        if (mse < best) {
          best = mse;
          best_alpha = a;
          best_l1 = l1;
        }
      }
    }
    fitted = fit_elastic_net(xtr, train_y, best_alpha, best_l1, 10000, 1e-8);
    report.hyperparams = {{"alpha", best_alpha},
                          {"l1_ratio", best_l1},
                          {"validation_mse", best / static_cast<double>(n_val)},
                          {"converged", fitted.converged}};
  }

  std::vector<double> pred(xte.rows);
  for (std::size_t r = 0; r < xte.rows; ++r) pred[r] = fitted.predict(xte.row(r));
  const auto ev = evaluate(pred, test_y);
  report.mae = ev.mae;
  report.mae_std = ev.mae_std;
  report.r = ev.pearson_r;
  report.n_test = ev.n;
  return report;
}

BaselineReport run_baseline(const Manifest& manifest, FeatureKind kind, RegressorKind model,
                            const BaselineOptions& options) {
  const auto& rows = manifest.rows;
  std::vector<FeatureVector> features(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { features[i] = extract_features(read_tract(rows[i].tract_path), kind); });
  std::vector<FeatureVector> trx, tex;
  std::vector<double> try_, tey;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].split == Split::train) {
      trx.push_back(std::move(features[i]));
      try_.push_back(rows[i].score);
    } else {
      tex.push_back(std::move(features[i]));
      tey.push_back(rows[i].score);
    }
  }
  return run_baseline(trx, try_, tex, tey, model, options);
}

}  // namespace tractcloud
