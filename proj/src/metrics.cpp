#include "tractcloud/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tractcloud/errors.hpp"

namespace tractcloud {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_len, const char* what) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()) + " differ");
  }
  if (a.size() < min_len) {
    throw ValidationError(std::string(what) + " needs at least " + std::to_string(min_len) + " values");
  }
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

MaeResult mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, 1, "mae");
  const auto n = static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
  const double m = sum / n;
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = std::abs(pred[i] - truth[i]) - m;
    sq += d * d;
  }
  return {m, std::sqrt(sq / n)};
}

PearsonResult pearson_r(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, 2, "pearson_r");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  // sqrt of each factor (not of the product) keeps r(a, b) == r(b, a) exactly.
  const double r = sab / (std::sqrt(saa) * std::sqrt(sbb));
  return {std::clamp(r, -1.0, 1.0), false};
}

EvalReport evaluate(std::span<const double> pred, std::span<const double> truth) {
  const auto m = mae(pred, truth);
  EvalReport report{m.mean, m.std, 0.0, false, pred.size()};
  if (pred.size() >= 2) {
    const auto r = pearson_r(pred, truth);
    report.pearson_r = r.r;
    report.degenerate = r.degenerate;
  } else {
    report.degenerate = true;
  }
  return report;
}

}  // namespace tractcloud
