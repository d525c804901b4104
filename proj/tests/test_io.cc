#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "twinfuse/error.hpp"
#include "twinfuse/json_io.hpp"
#include "twinfuse/markers.hpp"
#include "twinfuse/ply.hpp"

using namespace twinfuse;
using namespace twinfuse::testing;

namespace {

PointCloud colored_cloud(std::size_t n) {
  SynthRng rng(1, "ply-cloud");
  PointCloud c = make_cloud(random_points(rng, n, 5.0), "scan");
  for (std::size_t i = 0; i < n; ++i) {
    c.colors.push_back({static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(2 * i),
                        static_cast<std::uint8_t>(255 - i)});
  }
  return c;
}

void expect_float_equal(const PointCloud& a, const PointCloud& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(static_cast<float>(a.points[i][k]), static_cast<float>(b.points[i][k]));
    }
  }
  EXPECT_EQ(a.colors, b.colors);
}

}  // namespace

TEST(Ply, BinaryRoundTrip) {
  const PointCloud c = colored_cloud(100);
  std::stringstream s;
  write_ply(s, c);
  const PointCloud back = read_ply(s, "scan");
  expect_float_equal(c, back);
  EXPECT_EQ(back.frame, "scan");
}

TEST(Ply, AsciiRoundTrip) {
  const PointCloud c = colored_cloud(50);
  std::stringstream s;
  write_ply(s, c, PlyEncoding::kAscii);
  expect_float_equal(c, read_ply(s));
}

TEST(Ply, ReadsDoublesAndSkipsExtraProperties) {
  std::stringstream s;
  s << "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\n"
       "property double x\nproperty double y\nproperty double z\nproperty float nx\n"
       "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
       "0.1 0.2 0.3 9\n1 2 3 9\n";
  const PointCloud c = read_ply(s);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[0], Vec3(0.1, 0.2, 0.3));
  EXPECT_FALSE(c.has_colors());
}

TEST(Ply, MalformedInputsAreParseErrors) {
  for (const char* text : {"nope\n", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
                           "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                           "property float z\nend_header\n1 2 3\n"}) {
    std::stringstream s(text);
    try {
      read_ply(s);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParse);
    }
  }
}

TEST(Ply, MissingFileNamesPath) {
  try {
    read_ply("/nonexistent/cloud.ply");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/cloud.ply"), std::string::npos);
  }
}

TEST(Json, TransformRoundTripIsExact) {
  SynthRng rng(2, "json-tf");
  for (int i = 0; i < 20; ++i) {
    const RigidTransform t = random_transform(rng, 4.0);
    const Json j = Json::parse(transform_to_json(t).dump());
    const RigidTransform back = transform_from_json(j, "t");
    EXPECT_EQ(back.translation(), t.translation());
    EXPECT_EQ(back.rotation().coeffs(), t.rotation().coeffs());
  }
}

TEST(Json, TransformKeepsStoredQuaternion) {
  const Json j = {{"t_m", {0, 0, 0}}, {"q_wxyz", {1.1, 0, 0, 0}}};
  EXPECT_FALSE(transform_from_json(j, "t").is_valid());
  EXPECT_THROW(transform_from_json(Json{{"t_m", {0, 0}}, {"q_wxyz", {1, 0, 0, 0}}}, "t"), Error);
  EXPECT_THROW(transform_from_json(Json{{"t_m", {0, 0, 0}}}, "t"), Error);
}

TEST(Markers, FileRoundTrip) {
  TempDir dir("markers");
  MarkerSet s{"scan01", {{"M01", Vec3(0.1, 0.2, 0.3)}, {"M02", Vec3(-1, 2, 1e-7)}}};
  write_marker_set(dir.path() / "m.json", s);
  const MarkerSet back = read_marker_set(dir.path() / "m.json");
  EXPECT_EQ(back.frame, "scan01");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.markers[1].position, s.markers[1].position);
  EXPECT_EQ(*back.find("M01"), s.markers[0].position);
  EXPECT_FALSE(back.find("M99").has_value());
}

TEST(Markers, DuplicateIdsRejected) {
  const MarkerSet s{"f", {{"A", Vec3::Zero()}, {"A", Vec3::Ones()}}};
  EXPECT_THROW(check_marker_set(s), Error);
}

TEST(Markers, ApplyChecksFrame) {
  const MarkerSet s{"a", {{"A", Vec3::Zero()}}};
  const MarkerSet moved = apply(RigidTransform::translation_only(Vec3(1, 0, 0), "a", "b"), s);
  EXPECT_EQ(moved.frame, "b");
  EXPECT_EQ(moved.markers[0].position, Vec3(1, 0, 0));
  EXPECT_THROW(apply(RigidTransform::identity("c", "d"), s), Error);
}
