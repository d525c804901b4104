#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "test_support.hpp"
#include "twinfuse/error.hpp"
#include "twinfuse/fusion.hpp"
#include "twinfuse/kdtree.hpp"

using namespace twinfuse;
using namespace twinfuse::testing;

namespace {

MarkerSet lettered(std::size_t n, SynthRng& rng, std::string frame) {
  MarkerSet s;
  s.frame = std::move(frame);
  for (std::size_t i = 0; i < n; ++i) {
    s.markers.push_back({std::string(1, static_cast<char>('A' + i)), random_points(rng, 1, 3.0)[0]});
  }
  return s;
}

// Every scan sees the same world cloud so registered clouds overlap.
ScanRecord scan_from(const std::string& name, const MarkerSet& world, const RigidTransform& scan_from_world,
                     std::size_t cloud_points, SynthRng& rng) {
  static const std::vector<Vec3> world_cloud = [] {
    SynthRng cloud_rng(99, "world-cloud");
    return random_points(cloud_rng, 200, 2.0);
  }();
  (void)rng;
  ScanRecord s;
  s.name = name;
  s.markers = apply(scan_from_world.with_frames(world.frame, name), world);
  const std::vector<Vec3> subset(world_cloud.begin(),
                                 world_cloud.begin() + std::min(cloud_points, world_cloud.size()));
  s.cloud = make_cloud(apply(scan_from_world, std::span<const Vec3>(subset)), name);
  return s;
}

bool is_subset(const PointCloud& out, const PointCloud& in) {
  std::multiset<std::tuple<double, double, double>> pool;
  for (const Vec3& p : in.points) pool.emplace(p.x(), p.y(), p.z());
  for (const Vec3& p : out.points) {
    auto it = pool.find({p.x(), p.y(), p.z()});
    if (it == pool.end()) return false;
    pool.erase(it);
  }
  return true;
}

}  // namespace

TEST(MatchMarkers, Intersections) {
  SynthRng rng(1, "match");
  const MarkerSet five = lettered(5, rng, "a");
  EXPECT_EQ(match_markers(five, five).size(), 5u);

  const MarkerSet all = lettered(21, rng, "ref");
  MarkerSet some = all;
  some.frame = "scan";
  some.markers.resize(14);
  std::reverse(some.markers.begin(), some.markers.end());
  const auto pairs = match_markers(some, all);
  ASSERT_EQ(pairs.size(), 14u);
  EXPECT_TRUE(std::is_sorted(pairs.begin(), pairs.end(),
                             [](const MarkerPair& a, const MarkerPair& b) { return a.id < b.id; }));

  MarkerSet disjoint{"x", {{"Z1", Vec3::Zero()}, {"Z2", Vec3::Ones()}, {"Z3", Vec3::UnitX()}}};
  try {
    match_markers(disjoint, all);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientCorrespondences);
  }
}

TEST(RegisterScan, IdenticalMarkersGiveIdentity) {
  SynthRng rng(2, "reg-id");
  MarkerSet ref = lettered(8, rng, "ref");
  ScanRecord s{"s", make_cloud({Vec3::Zero()}, "ref"), ref};
  const ScanRegistration r = register_scan(s, ref);
  EXPECT_LT(r.transform.translation().norm(), 1e-12);
  EXPECT_LT(rotation_angle(r.transform.rotation()), 1e-7);
  EXPECT_LT(r.rmse_mm, 1e-9);
  EXPECT_EQ(r.markers_used, 8u);
}

TEST(RegisterScan, RejectsFrameMismatch) {
  SynthRng rng(3, "reg-frame");
  MarkerSet ref = lettered(4, rng, "ref");
  ScanRecord s{"s", make_cloud({Vec3::Zero()}, "cloudframe"), ref};
  try {
    register_scan(s, ref);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFrameMismatch);
  }
}

TEST(RegisterScan, RmseInvariantUnderCommonMotion) {
  SynthRng rng(4, "reg-inv");
  for (int trial = 0; trial < 20; ++trial) {
    MarkerSet ref = lettered(13, rng, "ref");
    MarkerSet src = ref;
    src.frame = "s";
    for (Marker& m : src.markers) m.position = random_transform(rng).rotation() * m.position + rng.gaussian3(0.003);
    const ScanRecord scan{"s", make_cloud({Vec3::Zero()}, "s"), src};
    const double base = register_scan(scan, ref).rmse_mm;

    const RigidTransform move = random_transform(rng, 5.0);
    MarkerSet ref2 = apply(move.with_frames("ref", "ref"), ref);
    ScanRecord scan2 = scan;
    scan2.markers = apply(move.with_frames("s", "s"), src);
    EXPECT_NEAR(register_scan(scan2, ref2).rmse_mm, base, 1e-9 * 1000.0);
  }
}

TEST(RegisterScan, RecoversPoseFromThirteenNoisyMarkers) {
  // Room-scale layout: markers spread over an 8 m x 6 m room, the scanner
  // inside it. The reference positions are exact; the scan carries noise.
  const double sigma = 0.0025;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthRng rng(seed, "reg-pose");
    MarkerSet ref;
    ref.frame = "ref";
    for (int i = 0; i < 13; ++i) {
      ref.markers.push_back({"M" + std::to_string(i),
                             Vec3(rng.uniform(-3.2, 3.2), rng.uniform(-2.4, 2.4), rng.uniform(0.3, 2.4))});
    }
    const Vec3 scanner(rng.uniform(-2.4, 2.4), rng.uniform(-1.8, 1.8), rng.uniform(1.0, 1.6));
    const RigidTransform ref_from_scan(
        Quat(Eigen::AngleAxisd(rng.uniform(-kPi, kPi), Vec3::UnitZ())), scanner, "s", "ref");
    ScanRecord scan;
    scan.name = "s";
    scan.cloud = make_cloud({Vec3::Zero()}, "s");
    scan.markers = apply(invert(ref_from_scan), ref);
    for (Marker& m : scan.markers.markers) m.position += rng.gaussian3(sigma);
    const ScanRegistration r = register_scan(scan, ref);
    EXPECT_LT(1000.0 * translation_error(r.transform, ref_from_scan), 3.0) << seed;
    EXPECT_LT(deg(rotation_angle_between(r.transform, ref_from_scan)), 0.2) << seed;
  }
}

TEST(RegisterScan, NoisyThirteenMarkerScansMatchNoiseModel) {
  // Synthetic scans where both the reference and the registered scan carry
  // independent per-axis noise: each residual component has variance
  // 2 sigma^2 and the fit removes 6 of the 3N degrees of freedom.
  SynthConfig config;
  config.visible_min = 13;
  config.visible_max = 13;
  const double n = 13.0;
  const double expected_mm = 1000.0 * config.scan_sigma_m * std::sqrt(2.0 * (3.0 * n - 6.0) / n);
  std::vector<double> rmse;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    config.seed = seed;
    const GroundTruthBundle b = generate(config);
    const std::string ref = reference_scan_name(b);
    const auto r = std::find_if(b.scans.begin(), b.scans.end(),
                                [&](const SynthScan& s) { return s.record.name == ref; });
    for (const SynthScan& s : b.scans) {
      if (s.record.name == ref) continue;
      rmse.push_back(register_scan(s.record, r->record.markers).rmse_mm);
    }
  }
  const double m = mean(rmse);
  EXPECT_GE(m, 4.0);
  EXPECT_LE(m, 9.0);
  EXPECT_NEAR(m, expected_mm, 0.05 * expected_mm);
}

TEST(FuseScans, SingleScanPassesThrough) {
  SynthRng rng(5, "single");
  const MarkerSet world = lettered(5, rng, "w");
  const std::vector<ScanRecord> scans{scan_from("only", world, random_transform(rng, 1.0, "w", "only"), 40, rng)};
  const FusionResult r = fuse_scans(scans);
  EXPECT_EQ(r.cloud.points, scans[0].cloud.points);
  EXPECT_TRUE(r.report.rows.empty());
  EXPECT_EQ(r.report.reference_name, "only");
  EXPECT_NE(fusion_report_table(r.report).find("No registrations"), std::string::npos);
}

TEST(FuseScans, MarkerCountsPickFourteenMarkerReference) {
  SynthRng rng(6, "table1");
  const MarkerSet world = lettered(21, rng, "w");
  const std::vector<std::size_t> counts{12, 13, 13, 14, 12, 13, 12, 13};
  std::vector<ScanRecord> scans;
  std::size_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    MarkerSet visible = world;
    visible.markers.resize(counts[i]);
    const std::string name = "scan" + std::to_string(i + 1);
    scans.push_back(scan_from(name, visible, random_transform(rng, 2.0, "w", name), 30 + i, rng));
    total += scans.back().cloud.size();
  }
  const FusionResult r = fuse_scans(scans);
  EXPECT_EQ(r.report.reference_name, "scan4");
  EXPECT_EQ(r.report.reference_markers, 14u);
  ASSERT_EQ(r.report.rows.size(), 7u);
  EXPECT_EQ(r.cloud.size(), total);
  EXPECT_EQ(r.cloud.frame, "scan4");
  std::vector<std::size_t> used;
  for (const FusionRow& row : r.report.rows) used.push_back(row.markers_used);
  EXPECT_EQ(used, (std::vector<std::size_t>{12, 13, 13, 12, 13, 12, 13}));
  for (const FusionRow& row : r.report.rows) EXPECT_LT(row.rmse_mm, 1e-6);

  const std::string table = fusion_report_table(r.report);
  EXPECT_NE(table.find("# Markers"), std::string::npos);
  EXPECT_NE(table.find("RMSE (mm)"), std::string::npos);
  EXPECT_NE(table.find("0.00"), std::string::npos);
}

TEST(FuseScans, TieGoesToFirstScan) {
  SynthRng rng(7, "tie");
  const MarkerSet world = lettered(6, rng, "w");
  std::vector<ScanRecord> scans;
  for (const char* n : {"a", "b", "c"}) scans.push_back(scan_from(n, world, random_transform(rng, 1.0, "w", n), 5, rng));
  EXPECT_EQ(fuse_scans(scans).report.reference_name, "a");
}

TEST(FuseScans, Deterministic) {
  const GroundTruthBundle b = generate(SynthConfig{});
  std::vector<ScanRecord> scans;
  for (const SynthScan& s : b.scans) scans.push_back(s.record);
  const FusionResult r1 = fuse_scans(scans);
  const FusionResult r2 = fuse_scans(scans);
  EXPECT_EQ(r1.cloud.points, r2.cloud.points);
  EXPECT_EQ(fusion_report_to_json(r1.report).dump(), fusion_report_to_json(r2.report).dump());
}

TEST(FuseScans, SyntheticRoomPosesWithinTolerance) {
  const GroundTruthBundle b = generate(SynthConfig{});
  std::vector<ScanRecord> scans;
  for (const SynthScan& s : b.scans) scans.push_back(s.record);
  const FusionResult r = fuse_scans(scans);
  EXPECT_EQ(r.report.reference_name, reference_scan_name(b));
  ASSERT_EQ(r.report.rows.size(), 7u);
  const EstimateSet truth = truth_entities(b);
  for (const FusionRow& row : r.report.rows) {
    EXPECT_GE(row.markers_used, 12u);
    EXPECT_LE(row.markers_used, 14u);
    const RigidTransform& t = truth.poses.at("scan/" + row.name);
    EXPECT_LT(1000.0 * translation_error(row.transform, t), 5.0) << row.name;
    EXPECT_LT(deg(rotation_angle_between(row.transform, t)), 0.3) << row.name;
  }
}

TEST(FusedMarkers, AveragesRegisteredObservations) {
  SynthRng rng(8, "fused-markers");
  const MarkerSet world = lettered(6, rng, "w");
  std::vector<ScanRecord> scans;
  for (const char* n : {"a", "b"}) scans.push_back(scan_from(n, world, random_transform(rng, 1.0, "w", n), 5, rng));
  const FusionResult r = fuse_scans(scans);
  const MarkerSet fused = fused_markers(scans, r.report);
  EXPECT_EQ(fused.frame, "a");
  ASSERT_EQ(fused.size(), 6u);
  for (const Marker& m : fused.markers) {
    EXPECT_LT((m.position - *scans[0].markers.find(m.id)).norm(), 1e-9);
  }
}

TEST(FinalizeReference, FloorCenteredRoomIsIdentity) {
  const GroundTruthBundle b = generate(SynthConfig{});
  PointCloud room = b.room;
  room.frame = "fused";
  const FinalizedReference f = finalize_reference(room);
  EXPECT_LT(1000.0 * f.transform.translation().norm(), 2.0);
  EXPECT_LT(deg(rotation_angle(f.transform.rotation())), 0.1);
  EXPECT_EQ(f.cloud.frame, kReferenceFrame);
  EXPECT_EQ(f.cloud.size(), room.size());
}

TEST(FinalizeReference, RecoversRoomOffset) {
  const GroundTruthBundle b = generate(SynthConfig{});
  const RigidTransform offset = RigidTransform::translation_only(Vec3(1, 2, 0.5), "world", "fused");
  PointCloud room = b.room;
  room.frame = "world";
  const FinalizedReference f = finalize_reference(apply(offset, room));
  const RigidTransform expected = invert(offset).with_frames("fused", kReferenceFrame);
  EXPECT_LT(1000.0 * translation_error(f.transform, expected), 5.0);

  // Floor points end up near z = 0.
  std::size_t floor = 0;
  std::size_t tight = 0;
  for (const Vec3& p : f.cloud.points) {
    if (std::abs(p.z()) <= 0.010) {
      ++floor;
      if (std::abs(p.z()) <= 0.015) ++tight;
    }
  }
  EXPECT_GT(floor, 0u);
  EXPECT_GE(static_cast<double>(tight), 0.99 * floor);
}

TEST(FinalizeReference, FusedSyntheticScansFloorWithinTolerance) {
  const GroundTruthBundle b = generate(SynthConfig{});
  std::vector<ScanRecord> scans;
  for (const SynthScan& s : b.scans) scans.push_back(s.record);
  const FusionResult r = fuse_scans(scans);
  const FinalizedReference f = finalize_reference(r.cloud);
  // Reference scan frame -> world is known; the floor frame should match
  // the world frame up to the floor centroid, which sits at the origin.
  const std::string ref = r.report.reference_name;
  const auto it = std::find_if(b.scans.begin(), b.scans.end(),
                               [&](const SynthScan& s) { return s.record.name == ref; });
  ASSERT_NE(it, b.scans.end());
  const RigidTransform& world_from_ref = it->world_from_scan;
  std::size_t floor_inliers = 0;
  std::size_t within = 0;
  for (const Vec3& p : f.cloud.points) {
    if (std::abs(p.z()) < 0.03) {
      ++floor_inliers;
      if (std::abs(p.z()) <= 0.015) ++within;
    }
  }
  EXPECT_GE(static_cast<double>(within), 0.99 * floor_inliers);
  EXPECT_LT(1000.0 * (f.transform.translation() - world_from_ref.translation()).norm(), 5.0);
  EXPECT_LT(deg(rotation_angle(f.transform.rotation() * world_from_ref.rotation().conjugate())), 0.3);
}

TEST(FinalizeReference, NoFloorIsDegenerate) {
  const PointCloud tiny = make_cloud({Vec3::Zero(), Vec3::UnitX()}, "f");
  try {
    finalize_reference(tiny);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateGeometry);
  }
}

TEST(Crop, Semantics) {
  SynthRng rng(9, "crop");
  const PointCloud c = make_cloud(random_points(rng, 200), "f");
  const Aabb all{Vec3::Constant(-1), Vec3::Constant(1)};
  EXPECT_EQ(crop_aabb(c, std::vector<Aabb>{all}).points, c.points);

  const PointCloud two = make_cloud({Vec3(0.5, 0.5, 0.5), Vec3(2, 2, 2)}, "f");
  const PointCloud kept = crop_aabb(two, std::vector<Aabb>{{Vec3::Zero(), Vec3::Ones()}});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept.points[0], Vec3(0.5, 0.5, 0.5));

  const PointCloud edge = make_cloud({Vec3::Ones()}, "f");
  EXPECT_EQ(crop_aabb(edge, std::vector<Aabb>{{Vec3::Zero(), Vec3::Ones()}}).size(), 1u);
  EXPECT_THROW(crop_aabb(c, std::vector<Aabb>{{Vec3::Ones(), Vec3::Zero()}}), Error);
}

TEST(Crop, OutputIsSubsetForRandomBoxes) {
  SynthRng rng(10, "crop-prop");
  const PointCloud c = make_cloud(random_points(rng, 500), "f");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Aabb> boxes;
    for (int k = 0; k < 3; ++k) {
      const Vec3 a = random_points(rng, 1)[0];
      const Vec3 b = random_points(rng, 1)[0];
      boxes.push_back({a.cwiseMin(b), a.cwiseMax(b)});
    }
    const PointCloud out = crop_aabb(c, boxes);
    EXPECT_TRUE(is_subset(out, c));
    std::size_t expected = 0;
    for (const Vec3& p : c.points) {
      if (std::any_of(boxes.begin(), boxes.end(), [&](const Aabb& b) { return b.contains(p); })) ++expected;
    }
    EXPECT_EQ(out.size(), expected);
  }
}

TEST(Voxel, CubeCornersCollapseToCentroid) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) pts.emplace_back(0.01 + 0.01 * (i & 1), 0.01 + 0.01 * ((i >> 1) & 1), 0.01 + 0.01 * (i >> 2));
  const PointCloud out = voxel_downsample(make_cloud(pts), 0.1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_LT((out.points[0] - Vec3::Constant(0.015)).norm(), 1e-15);
}

TEST(Voxel, FineGridLeavesCloudUnchanged) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) pts.emplace_back(0.1 * i + 0.05, 0.1 * j + 0.05, 0.05);
  const PointCloud out = voxel_downsample(make_cloud(pts), 0.1);
  EXPECT_EQ(out.points, pts);
}

TEST(Voxel, OutputCloseToInputAndNotLarger) {
  SynthRng rng(11, "voxel-prop");
  for (double voxel : {0.05, 0.2, 0.5}) {
    PointCloud c = make_cloud(random_points(rng, 800), "f");
    for (std::size_t i = 0; i < c.size(); ++i) c.colors.push_back({10, 20, static_cast<std::uint8_t>(i % 256)});
    const PointCloud out = voxel_downsample(c, voxel);
    EXPECT_LE(out.size(), c.size());
    EXPECT_EQ(out.colors.size(), out.size());
    for (const Vec3& p : out.points) EXPECT_LE(brute_nearest(c.points, p), voxel * std::sqrt(3.0) / 2.0 + 1e-12);
  }
  EXPECT_THROW(voxel_downsample(make_cloud({Vec3::Zero()}), 0.0), Error);
}

TEST(Outliers, LonePointRemoved) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      for (int k = 0; k < 3; ++k) pts.emplace_back(0.01 * i, 0.01 * j, 0.01 * k);
  const PointCloud regular = make_cloud(pts);
  pts.emplace_back(1.0, 0.0, 0.0);
  const PointCloud out = remove_statistical_outliers(make_cloud(pts), 8, 2.0);
  EXPECT_EQ(out.size(), pts.size() - 1);
  EXPECT_TRUE(std::none_of(out.points.begin(), out.points.end(), [](const Vec3& p) { return p.x() > 0.5; }));
}

TEST(Outliers, RegularLatticeKeepsEverything) {
  // A periodic lattice: every point has the same neighborhood.
  std::vector<Vec3> pts;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) pts.emplace_back(0.0, 0.0, 0.0);
  pts.clear();
  for (int i = 0; i < 30; ++i) pts.emplace_back(std::cos(2 * kPi * i / 30), std::sin(2 * kPi * i / 30), 0.0);
  const PointCloud c = make_cloud(pts);
  EXPECT_EQ(remove_statistical_outliers(c, 4, 2.0).size(), c.size());
}

TEST(Outliers, SubsetAndParameterChecks) {
  SynthRng rng(12, "outliers");
  const PointCloud c = make_cloud(random_points(rng, 300), "f");
  EXPECT_TRUE(is_subset(remove_statistical_outliers(c), c));
  EXPECT_THROW(remove_statistical_outliers(c, 0, 2.0), Error);
  EXPECT_THROW(remove_statistical_outliers(c, 8, 0.0), Error);
  EXPECT_THROW(remove_statistical_outliers(make_cloud(random_points(rng, 5)), 8, 2.0), Error);
}
