#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "tractcloud/errors.hpp"
#include "tractcloud/tract_io.hpp"

using namespace tractcloud;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "tractcloud_test_tract_io";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("WMPC round trip is exact") {
  Rng rng(3);
  auto tract = testing::random_tract(rng, 7, 2, 20, "subj01");
  const auto path = scratch("subj01.wmpc");
  write_tract(tract, path);
  const auto back = read_tract(path);
  CHECK(back == tract);
  CHECK(back.subject_id == "subj01");
}

TEST_CASE("WMPC header layout") {
  Tract t{"a", {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 2)}};
  const auto path = scratch("a.wmpc");
  write_tract(t, path);
  const auto bytes = read_bytes(path);
  REQUIRE(bytes.size() == 4 + 2 + 2 + 4 + 4 + 2 * 16);
  CHECK(bytes.substr(0, 4) == "WMPC");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 1);
}

TEST_CASE("WMPC format errors") {
  Tract t{"b", {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 3)}};
  const auto path = scratch("b.wmpc");
  write_tract(t, path);
  const auto good = read_bytes(path);

  write_bytes(path, "XXXX" + good.substr(4));
  CHECK_THROWS_AS(read_tract(path), FormatError);

  auto v2 = good;
  v2[4] = 2;
  write_bytes(path, v2);
  CHECK_THROWS_AS(read_tract(path), VersionError);

  write_bytes(path, good.substr(0, good.size() - 3));
  CHECK_THROWS_AS(read_tract(path), FormatError);

  write_bytes(path, good + "zz");
  CHECK_THROWS_AS(read_tract(path), FormatError);

  CHECK_THROWS_AS(read_tract(scratch("missing.wmpc")), IoError);
}

TEST_CASE("tract validation") {
  Tract empty{"e", {}};
  CHECK_THROWS_AS(empty.validate(), ValidationError);

  Tract one{"o", {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 1)}};
  CHECK_THROWS_AS(one.validate(), ValidationError);

  Tract bad_fa{"f", {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 4)}};
  bad_fa.streamlines[0].fa[2] = 1.5f;
  CHECK_THROWS_AS(bad_fa.validate(), ValidationError);
  CHECK_THROWS_AS(write_tract(bad_fa, scratch("f.wmpc")), ValidationError);

  Tract nan_pt{"n", {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 4)}};
  nan_pt.streamlines[0].points[1][2] = std::nanf("");
  CHECK_THROWS_AS(nan_pt.validate(), ValidationError);
}

TEST_CASE("flatten_points replicates NoS and keeps provenance") {
  Tract t{"p",
          {testing::straight_streamline({0, 0, 0}, {1, 0, 0}, 3), testing::straight_streamline({0, 1, 0}, {0, 2, 0}, 2)}};
  const auto table = flatten_points(t);
  REQUIRE(table.rows() == 5);
  CHECK(table.row(4)[4] == 2.0);
  CHECK(table.row(0)[4] == 2.0);
  CHECK(table.row(3)[1] == 1.0);
  CHECK(table.row(2)[3] == doctest::Approx(0.6));
  CHECK(table.provenance[3] == PointProvenance{1, 0});
  CHECK(table.provenance[2] == PointProvenance{0, 2});
}

TEST_CASE("manifest parsing") {
  const auto dir = scratch("m1");
  fs::create_directories(dir);
  write_bytes(dir / "manifest.csv", "subject_id,path,score,split\ns1,t/s1.wmpc,10.5,train\ns2,t/s2.wmpc,9,test\n");
  const auto m = read_manifest(dir / "manifest.csv");
  REQUIRE(m.rows.size() == 2);
  CHECK(m.rows[0].tract_path == dir / "t/s1.wmpc");
  CHECK(m.rows[1].split == Split::test);
  CHECK(m.split(Split::train).size() == 1);
  CHECK(m.find("s2")->score == 9.0);
  CHECK(m.find("zz") == nullptr);

  write_bytes(dir / "dup.csv", "subject_id,path,score,split\ns1,a,1,train\ns1,b,2,test\n");
  CHECK_THROWS_AS(read_manifest(dir / "dup.csv"), ValidationError);
  write_bytes(dir / "hdr.csv", "id,path,score,split\ns1,a,1,train\n");
  CHECK_THROWS_AS(read_manifest(dir / "hdr.csv"), ValidationError);
  write_bytes(dir / "split.csv", "subject_id,path,score,split\ns1,a,1,val\n");
  CHECK_THROWS_AS(read_manifest(dir / "split.csv"), ValidationError);
  write_bytes(dir / "nan.csv", "subject_id,path,score,split\ns1,a,nan,train\n");
  CHECK_THROWS_AS(read_manifest(dir / "nan.csv"), ValidationError);
  CHECK_THROWS_AS(read_manifest(dir / "nope.csv"), IoError);
}

TEST_CASE("manifest round trip with labels column") {
  const auto dir = scratch("m2");
  Manifest m;
  m.rows.push_back({"s1", dir / "tracts/s1.wmpc", 12.25, Split::train, dir / "labels/s1.csv"});
  m.rows.push_back({"s2", dir / "tracts/s2.wmpc", -3.5, Split::test, dir / "labels/s2.csv"});
  write_manifest(m, dir / "manifest.csv");
  const auto back = read_manifest(dir / "manifest.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].score == -3.5);
  CHECK(back.rows[0].labels_path.has_value());
  CHECK(fs::weakly_canonical(*back.rows[0].labels_path) == fs::weakly_canonical(dir / "labels/s1.csv"));
}

TEST_CASE("label files") {
  LabelTable labels;
  labels.ids = {0, 0, 3, 3, 3};
  labels.names = {{0, "cortex"}, {3, "white_matter"}};
  const auto path = scratch("lab.csv");
  write_labels(labels, path);
  const auto back = read_labels(path, 5);
  CHECK(back.ids == labels.ids);
  CHECK(back.name_of(3) == "white_matter");
  CHECK(back.name_of(9) == "label_9");
  try {
    read_labels(path, 6);
    FAIL("expected a count mismatch");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('5') != std::string::npos);
    CHECK(msg.find('6') != std::string::npos);
  }
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-12, 12345.678}) CHECK(std::stod(format_double(v)) == v);
}
