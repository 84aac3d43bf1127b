#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "support.hpp"
#include "tractcloud/crl.hpp"
#include "tractcloud/errors.hpp"

using namespace tractcloud;

namespace {

PointNet tiny_net() {
  ModelConfig c;
  c.mlp_widths = {8, 16};
  c.head_widths = {8, 1};
  return PointNet(c, 11);
}

}  // namespace

TEST_CASE("partition sizes and coverage") {
  Rng rng(1);
  const auto sets = partition_points(5, 2, rng);
  REQUIRE(sets.size() == 3);
  CHECK(sets[0].size() == 2);
  CHECK(sets[1].size() == 2);
  CHECK(sets[2].size() == 1);
  for (std::size_t p : {1u, 7u, 100u, 257u}) {
    for (std::size_t n : {1u, 3u, 64u, 300u}) {
      const auto s = partition_points(p, n, rng);
      CHECK(s.size() == (p + n - 1) / n);
      std::set<std::uint32_t> seen;
      std::size_t total = 0;
      for (const auto& set : s) {
        total += set.size();
        seen.insert(set.begin(), set.end());
      }
      CHECK(total == p);
      CHECK(seen.size() == p);
      CHECK(*seen.rbegin() == p - 1);
    }
  }
  CHECK_THROWS_AS(partition_points(0, 2, rng), ValidationError);
}

TEST_CASE("contributing point selection counts channels") {
  const std::vector<std::uint32_t> argmax{0, 2, 2, 1};
  const std::vector<std::uint32_t> ids{40, 41, 42};
  const auto w = contributing_point_selection(argmax, ids);
  CHECK(w.size() == 3);
  CHECK(w.at(40) == 1);
  CHECK(w.at(41) == 1);
  CHECK(w.at(42) == 2);

  const std::vector<std::uint32_t> same(16, 1);
  const auto one = contributing_point_selection(same, ids);
  CHECK(one.size() == 1);
  CHECK(one.at(41) == 16);

  const std::vector<std::uint32_t> bad{0, 3};
  CHECK_THROWS_AS(contributing_point_selection(bad, ids), ConsistencyError);
}

TEST_CASE("critical selection uses the ceil rule and row tie-break") {
  CHECK(critical_count_for(100, 0.05) == 5);
  CHECK(critical_count_for(101, 0.05) == 6);
  CHECK(critical_count_for(3, 0.05) == 1);
  CHECK(critical_count_for(20, 1.0) == 20);
  const std::vector<std::uint64_t> w{1, 5, 3, 5, 0, 3};
  const auto mask = select_critical(w, 0.5);  // 3 points
  CHECK(mask == std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0});
}

TEST_CASE("localize conserves weight and is deterministic") {
  Rng rng(2);
  const auto net = tiny_net();
  InputStats stats;
  for (auto [p, n, m] : {std::tuple{37u, 8u, 3u}, {64u, 64u, 2u}, {10u, 64u, 1u}, {100u, 7u, 4u}}) {
    const auto tract = testing::random_tract(rng, 5, p / 5, p / 5, "x");
    const auto table = flatten_points(tract);
    CrlConfig cfg{n, m, 0.05, 3};
    const auto map = localize(net, stats, table, cfg);
    const std::size_t points = table.rows();
    CHECK(map.weights.size() == points);
    CHECK(map.total_weight() == m * 16 * ((points + n - 1) / n));
    CHECK(map.critical_count() == critical_count_for(points, 0.05));
    std::uint64_t min_crit = ~0ull, max_other = 0;
    for (std::size_t i = 0; i < points; ++i) {
      if (map.critical[i]) {
        min_crit = std::min(min_crit, map.weights[i]);
      } else {
        max_other = std::max(max_other, map.weights[i]);
      }
    }
    CHECK(max_other <= min_crit);
    const auto again = localize(net, stats, table, cfg);
    CHECK(again.weights == map.weights);
  }
}

TEST_CASE("config validation") {
  CrlConfig c;
  c.top_fraction = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = CrlConfig{};
  c.repeats = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = CrlConfig{};
  c.top_fraction = 1.0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("region histogram") {
  CrlWeightMap map;
  map.weights.assign(8, 0);
  map.critical = {1, 0, 1, 1, 0, 1, 1, 0};
  map.provenance.resize(8);
  LabelTable labels;
  labels.ids = {2, 2, 2, 7, 7, 7, 2, 9};
  labels.names = {{2, "rmf"}, {7, "wm"}};
  const auto bins = region_histogram(map, labels);
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].label_id == 2);
  CHECK(bins[0].count == 3);
  CHECK(bins[0].percent == doctest::Approx(60.0));
  CHECK(bins[1].name == "wm");
  CHECK(bins[1].percent == doctest::Approx(40.0));

  labels.ids.assign(8, 4);
  const auto single = region_histogram(map, labels);
  REQUIRE(single.size() == 1);
  CHECK(single[0].percent == 100.0);

  labels.ids.pop_back();
  CHECK_THROWS_AS(region_histogram(map, labels), ValidationError);

  const auto j = histogram_to_json(bins);
  CHECK(j["critical_points"] == 5);
  CHECK(j["regions"][1]["name"] == "wm");
}

TEST_CASE("weight csv") {
  Tract t{"c", {testing::straight_streamline({0, 0, 0}, {3, 0, 0}, 4)}};
  CrlWeightMap map;
  map.weights = {0, 7, 2, 0};
  map.critical = {0, 1, 0, 0};
  map.provenance = flatten_points(t).provenance;
  const auto csv = weights_to_csv(map, t);
  CHECK(csv.rfind("streamline_id,point_index,x,y,z,weight,critical\n", 0) == 0);
  CHECK(csv.find("0,1,1,0,0,7,1\n") != std::string::npos);
}
