#pragma once

#include <cstddef>
#include <span>

namespace tractcloud {

struct MaeResult {
  double mean = 0.0;
  double std = 0.0;  // population std of |pred - truth|
};

/// Throws ValidationError on empty or unequal inputs.
MaeResult mae(std::span<const double> pred, std::span<const double> truth);

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;  // a constant input; r is reported as 0
};

/// Needs length >= 2.
PearsonResult pearson_r(std::span<const double> a, std::span<const double> b);

struct EvalReport {
  double mae = 0.0;
  double mae_std = 0.0;
  double pearson_r = 0.0;
  bool degenerate = false;
  std::size_t n = 0;
};

EvalReport evaluate(std::span<const double> pred, std::span<const double> truth);

}  // namespace tractcloud
