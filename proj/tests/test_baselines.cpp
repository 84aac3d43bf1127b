#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "support.hpp"
#include "tractcloud/baselines.hpp"
#include "tractcloud/errors.hpp"

using namespace tractcloud;

namespace {

Design random_design(Rng& rng, std::size_t rows, std::size_t cols) {
  Design d;
  d.rows = rows;
  d.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) d.values.push_back(rng.normal() * (1.0 + double(i % cols)));
  return d;
}

std::vector<double> linear_target(const Design& x, Rng& rng, double noise) {
  std::vector<double> y(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double v = 3.0;
    for (std::size_t c = 0; c < x.cols; ++c) v += (c % 3 == 0 ? 0.0 : 0.5 * double(c)) * x.at(r, c);
    y[r] = v + noise * rng.normal();
  }
  return y;
}

}  // namespace

TEST_CASE("mean features") {
  Tract t{"m",
          {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 3, 0.5f, 0.5f),
           testing::straight_streamline({0, 1, 0}, {1, 1, 0}, 2, 0.5f, 0.5f),
           testing::straight_streamline({0, 2, 0}, {1, 2, 0}, 4, 0.5f, 0.5f)}};
  const auto f = mean_features(t);
  CHECK(f.values.size() == 2);
  CHECK(f.values[0] == doctest::Approx(0.5));
  CHECK(f.values[1] == 3.0);
}

TEST_CASE("profile of a straight ramp") {
  Tract t{"r", {testing::straight_streamline({0, 0, 0}, {10, 0, 0}, 7, 0.0f, 1.0f)}};
  const auto f = tract_profile(t);
  REQUIRE(f.values.size() == 101);
  for (std::size_t k = 0; k < 100; ++k) CHECK(f.values[k] == doctest::Approx(k / 99.0).epsilon(1e-6));
  CHECK(f.values[100] == 1.0);

  Tract twice{"r2", {t.streamlines[0], t.streamlines[0]}};
  const auto g = tract_profile(twice);
  for (std::size_t k = 0; k < 100; ++k) CHECK(g.values[k] == doctest::Approx(f.values[k]).epsilon(1e-12));
}

TEST_CASE("resampling keeps equal arc-length steps") {
  Rng rng(4);
  const auto t = testing::random_tract(rng, 4, 3, 12);
  for (const auto& s : t.streamlines) {
    const auto r = resample_streamline(s, 100);
    double length = 0;
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) d2 += std::pow(double(s.points[i][c]) - s.points[i - 1][c], 2);
      length += std::sqrt(d2);
    }
    double chords = 0;
    for (std::size_t k = 1; k < r.points.size(); ++k) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) d2 += std::pow(r.points[k][c] - r.points[k - 1][c], 2);
      chords += std::sqrt(d2);
    }
    CHECK(chords <= length + 1e-9);
    CHECK(r.points.front()[0] == doctest::Approx(s.points.front()[0]));
    CHECK(r.points.back()[2] == doctest::Approx(s.points.back()[2]));
    CHECK(r.fa.back() == doctest::Approx(s.fa.back()));
  }
  Streamline zero;
  zero.points = {{1, 1, 1}, {1, 1, 1}};
  zero.fa = {0.2f, 0.3f};
  CHECK_THROWS_AS(resample_streamline(zero, 100), ValidationError);
}

TEST_CASE("profile ignores streamline direction") {
  Rng rng(5);
  Tract t{"d", {}};
  for (int i = 0; i < 6; ++i) {
    const float y = static_cast<float>(rng.uniform(-1, 1));
    t.streamlines.push_back(
        testing::straight_streamline({0, y, 0}, {20, y + 1.0f, 3}, 5 + i, 0.2f + 0.01f * i, 0.7f));
  }
  const auto base = tract_profile(t);
  for (std::size_t flip = 0; flip < t.streamlines.size(); ++flip) {
    auto r = t;
    std::reverse(r.streamlines[flip].points.begin(), r.streamlines[flip].points.end());
    std::reverse(r.streamlines[flip].fa.begin(), r.streamlines[flip].fa.end());
    const auto p = tract_profile(r);
    for (std::size_t k = 0; k < 101; ++k) CHECK(p.values[k] == doctest::Approx(base.values[k]).epsilon(1e-9));
  }
}

TEST_CASE("ols basics") {
  Design x{{1, 2, 3, 4, 5}, 5, 1};
  const std::vector<double> y{2, 4, 6, 8, 10};
  const auto m = fit_ols(x, y);
  CHECK(m.raw_coefficients()[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(std::abs(m.raw_intercept()) < 1e-9);

  const std::vector<double> flat(5, 7.0);
  const auto c = fit_ols(x, flat);
  CHECK(std::abs(c.coefficients[0]) < 1e-12);
  CHECK(c.intercept == doctest::Approx(7.0));

  Design dup{{1, 1, 2, 2, 3, 3, 4, 4}, 4, 2};
  CHECK_THROWS_AS(fit_ols(dup, std::vector<double>{1, 2, 3, 4}, 0.0), SingularMatrixError);
  CHECK_NOTHROW(fit_ols(dup, std::vector<double>{1, 2, 3, 4}));
}

TEST_CASE("ols residuals are orthogonal to the features") {
  Rng rng(6);
  const auto x = random_design(rng, 40, 5);
  const auto y = linear_target(x, rng, 0.3);
  const auto m = fit_ols(x, y);
  std::vector<double> resid(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) resid[r] = y[r] - m.predict(x.row(r));
  for (std::size_t c = 0; c < x.cols; ++c) {
    double dot = 0;
    for (std::size_t r = 0; r < x.rows; ++r) dot += resid[r] * (x.at(r, c) - m.feature_mean[c]) / m.feature_scale[c];
    CHECK(std::abs(dot) < 1e-8);
  }
}

TEST_CASE("underdetermined ols takes the minimum-norm solution") {
  Rng rng(7);
  const auto x = random_design(rng, 4, 9);
  const auto y = linear_target(x, rng, 0.1);
  const auto m = fit_ols(x, y);
  for (std::size_t r = 0; r < x.rows; ++r) CHECK(m.predict(x.row(r)) == doctest::Approx(y[r]).epsilon(1e-9));
}

TEST_CASE("elastic net limits") {
  Rng rng(8);
  const auto x = random_design(rng, 60, 4);
  const auto y = linear_target(x, rng, 0.5);
  const auto ols = fit_ols(x, y);
  const auto en0 = fit_elastic_net(x, y, 0.0, 0.5, 100000, 1e-12);
  CHECK(en0.converged);
  for (std::size_t j = 0; j < 4; ++j) CHECK(en0.coefficients[j] == doctest::Approx(ols.coefficients[j]).epsilon(1e-6));

  const auto big = fit_elastic_net(x, y, 1e6, 1.0);
  for (double c : big.coefficients) CHECK(c == 0.0);
  CHECK(big.intercept == doctest::Approx(ols.intercept));

  for (double a : {0.01, 0.3, 2.0}) {
    for (double l1 : {0.1, 0.5, 1.0}) {
      const auto m = fit_elastic_net(x, y, a, l1, 100000, 1e-10);
      CHECK(m.converged);
      CHECK(elastic_net_kkt_residual(m, x, y) < 1e-8);
    }
  }
  CHECK_THROWS_AS(fit_elastic_net(x, y, -1.0, 0.5), ConfigError);
  CHECK_THROWS_AS(fit_elastic_net(x, y, 1.0, 1.5), ConfigError);
}

TEST_CASE("lasso sparsity is monotone in alpha") {
  Rng rng(9);
  const auto x = random_design(rng, 50, 8);
  const auto y = linear_target(x, rng, 1.0);
  std::size_t prev = 9;
  for (double a : default_alpha_grid()) {
    const auto m = fit_elastic_net(x, y, a, 1.0, 100000, 1e-10);
    const auto nz = static_cast<std::size_t>(std::count_if(m.coefficients.begin(), m.coefficients.end(),
                                                           [](double c) { return c != 0.0; }));
    CHECK(nz <= prev);
    prev = nz;
  }
}

TEST_CASE("run_baseline reports and is deterministic") {
  Rng rng(10);
  std::vector<FeatureVector> tr, te;
  std::vector<double> ytr, yte;
  for (int i = 0; i < 60; ++i) {
    FeatureVector f{FeatureKind::mean, "s" + std::to_string(i), {rng.uniform(0.3, 0.6), double(rng.between(50, 150))}};
    const double y = 10 + 40 * f.values[0] + 0.05 * f.values[1] + rng.normal();
    (i < 45 ? tr : te).push_back(f);
    (i < 45 ? ytr : yte).push_back(y);
  }
  const auto lr = run_baseline(tr, ytr, te, yte, RegressorKind::lr);
  CHECK(lr.method == "mean+lr");
  CHECK(lr.n_test == 15);
  CHECK(lr.r > 0.5);
  const auto en1 = run_baseline(tr, ytr, te, yte, RegressorKind::enr);
  const auto en2 = run_baseline(tr, ytr, te, yte, RegressorKind::enr);
  CHECK(en1.to_json() == en2.to_json());
  CHECK(en1.hyperparams.contains("alpha"));
  CHECK(parse_feature_kind("afq") == FeatureKind::along_tract);
  CHECK_THROWS_AS(parse_regressor_kind("rf"), ConfigError);
}
