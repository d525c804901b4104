#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "test_support.hpp"
#include "twinfuse/error.hpp"
#include "twinfuse/kdtree.hpp"
#include "twinfuse/tracking.hpp"

using namespace twinfuse;
using namespace twinfuse::testing;

namespace {

PoseTrack constant_track(const RigidTransform& pose, int n) {
  PoseTrack t;
  t.frame = "world";
  for (int i = 0; i < n; ++i) t.samples.push_back({i / 30.0, pose});
  return t;
}

}  // namespace

TEST(SphereFit, ExactPointsRecoverCenter) {
  SynthRng rng(1, "sphere-exact");
  const Vec3 c(0.001, 0.002, 0.003);
  const std::vector<Vec3> pts = hemisphere(rng, c, 0.0015, Vec3(0.2, -0.3, 1.0), 100, 0.0);
  const SphereFit f = fit_sphere_fixed_radius(pts, 0.0015);
  EXPECT_LT((f.center - c).norm(), 1e-9);
  EXPECT_LT(f.rms_residual_m, 1e-12);
  EXPECT_EQ(kDefaultMarkerRadiusM, 0.0015);
}

TEST(SphereFit, NoisyHemispheresOverHundredSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthRng rng(seed, "sphere-noise");
    const Vec3 c = random_points(rng, 1, 0.5)[0];
    const Vec3 axis = rng.rotation() * Vec3::UnitZ();
    const std::vector<Vec3> pts = hemisphere(rng, c, 0.0015, axis, 150, 0.00005);
    EXPECT_LT(1000.0 * (fit_sphere_fixed_radius(pts).center - c).norm(), 0.1) << seed;
  }
}

TEST(SphereFit, RejectsTooFewPoints) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  EXPECT_THROW(fit_sphere_fixed_radius(pts), Error);
}

TEST(MarkerArray, ExactCentersGiveIdentity) {
  const MarkerArrayGeometry a = asymmetric_array();
  std::vector<Vec3> centers;
  for (const Marker& m : a.markers.markers) centers.push_back(m.position);
  const ArrayRegistration r = register_marker_array(centers, a);
  EXPECT_LT(r.model_from_array.translation().norm(), 1e-12);
  EXPECT_LT(rotation_angle(r.model_from_array.rotation()), 1e-7);
  EXPECT_LT(r.rmse_mm, 1e-9);
  EXPECT_EQ(r.assignment, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(MarkerArray, RecoversPoseUnderShuffleAndNoise) {
  const MarkerArrayGeometry a = asymmetric_array();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthRng rng(seed, "array-noise");
    const RigidTransform truth = random_transform(rng, 0.5, "array", "model");
    std::vector<std::size_t> order{0, 1, 2, 3, 4};
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    std::vector<Vec3> centers;
    for (std::size_t j : order) centers.push_back(truth * a.markers.markers[j].position + rng.gaussian3(0.00005 / std::sqrt(3.0)));
    const ArrayRegistration r = register_marker_array(centers, a);
    EXPECT_EQ(r.assignment, order);
    EXPECT_LT(1000.0 * translation_error(r.model_from_array, truth), 0.1) << seed;
    // Noise applied straight to five centers over a ~6 cm baseline gives a
    // rotation error of about sigma / (baseline * sqrt(5)) ~ 0.04 deg.
    EXPECT_LT(deg(rotation_angle_between(r.model_from_array, truth)), 0.15) << seed;
  }
}

TEST(MarkerArray, RecoversPoseFromNoisyHemisphereScans) {
  const MarkerArrayGeometry a = asymmetric_array();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthRng rng(seed, "array-hemi");
    const RigidTransform truth = random_transform(rng, 0.5, "array", "model");
    const Vec3 normal = truth.rotation() * Vec3::UnitZ();
    std::vector<Vec3> centers;
    for (const Marker& m : a.markers.markers) {
      const std::vector<Vec3> pts = hemisphere(rng, truth * m.position, a.radius_m, normal, 150, 0.00005);
      centers.push_back(fit_sphere_fixed_radius(pts, a.radius_m).center);
    }
    const ArrayRegistration r = register_marker_array(centers, a);
    EXPECT_LT(1000.0 * translation_error(r.model_from_array, truth), 0.1) << seed;
    EXPECT_LT(deg(rotation_angle_between(r.model_from_array, truth)), 0.05) << seed;
  }
}

TEST(MarkerArray, SymmetricSquareIsAmbiguous) {
  MarkerArrayGeometry a;
  a.markers.frame = "array";
  a.markers.markers = {{"A", Vec3(0, 0, 0)}, {"B", Vec3(0.05, 0, 0)}, {"C", Vec3(0.05, 0.05, 0)}, {"D", Vec3(0, 0.05, 0)}};
  std::vector<Vec3> centers;
  for (const Marker& m : a.markers.markers) centers.push_back(m.position);
  try {
    register_marker_array(centers, a);
    FAIL();
  } catch (const MarkerAmbiguityError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAmbiguity);
    EXPECT_GT(e.candidates().size(), 1u);
  }
}

TEST(MarkerArray, InconsistentCentersFail) {
  const MarkerArrayGeometry a = asymmetric_array();
  std::vector<Vec3> centers;
  for (const Marker& m : a.markers.markers) centers.push_back(m.position * 2.0);
  try {
    register_marker_array(centers, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCorrespondence);
  }
}

TEST(Icp, IdenticalCloudsStayAtIdentity) {
  PointCloud c = make_cloud(drill_surface(0.002, 1), "model");
  PointCloud s = c;
  s.frame = "scan";
  const IcpResult r = icp(s, c, RigidTransform::identity("scan", "model"));
  EXPECT_EQ(r.rms_m, 0.0);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_LT(r.transform.translation().norm(), 1e-12);
  EXPECT_EQ(r.inliers, c.size());
}

TEST(Icp, RecoversFiveMillimeterDisplacement) {
  // Independently sampled model and scan surfaces, so no point has an
  // exact partner.
  const PointCloud model = make_cloud(drill_surface(0.001, 11), "model");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthRng rng(seed, "icp-shift");
    const Vec3 shift = (rng.gaussian3(1.0)).normalized() * 0.005;
    const RigidTransform truth = RigidTransform::translation_only(shift, "scan", "model");
    const PointCloud scan = apply(invert(truth), make_cloud(drill_surface(0.001, 100 + seed), "model"));
    const IcpResult r = icp(scan, model, RigidTransform::identity("scan", "model"));
    EXPECT_LT(1000.0 * translation_error(r.transform, truth), 0.1) << seed;
  }
}

TEST(Icp, NoOverlapAtInitialGuess) {
  const PointCloud model = make_cloud(drill_surface(0.004, 1), "model");
  const PointCloud scan = make_cloud(drill_surface(0.004, 2), "scan");
  const RigidTransform far = RigidTransform::translation_only(Vec3(5, 0, 0), "scan", "model");
  try {
    icp(scan, model, far);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoOverlap);
  }
}

TEST(Icp, RmsNonIncreasingOnRandomizedRuns) {
  const PointCloud model = make_cloud(drill_surface(0.003, 5), "model");
  const std::vector<Vec3> base = drill_surface(0.003, 6);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthRng rng(seed, "icp-mono");
    const RigidTransform perturb(
        Quat(Eigen::AngleAxisd(rad(rng.uniform(-5, 5)), rng.gaussian3(1.0).normalized())),
        rng.gaussian3(0.004), "model", "scan");
    std::vector<Vec3> pts = apply(perturb, std::span<const Vec3>(base));
    for (Vec3& p : pts) p += rng.gaussian3(0.0002);
    const PointCloud scan = make_cloud(pts, "scan");
    IcpParams params;
    params.max_correspondence_m = rng.uniform(0.005, 0.02);
    const IcpResult r = icp(scan, model, RigidTransform::identity("scan", "model"), params);
    ASSERT_GE(r.rms_trace.size(), 1u);
    for (std::size_t i = 1; i < r.rms_trace.size(); ++i) EXPECT_LE(r.rms_trace[i], r.rms_trace[i - 1]) << seed;
    EXPECT_EQ(r.rms_trace.back(), r.rms_m);

    // Recompute the inlier RMS at the returned transform by brute force.
    double sum = 0.0;
    std::size_t inliers = 0;
    for (const Vec3& p : scan.points) {
      const double d = brute_nearest(model.points, r.transform * p);
      if (d <= params.max_correspondence_m) {
        sum += d * d;
        ++inliers;
      }
    }
    EXPECT_EQ(inliers, r.inliers);
    EXPECT_NEAR(std::sqrt(sum / inliers), r.rms_m, 1e-12);
  }
}

TEST(SmoothTrack, WindowOneAndConstantTrackUnchanged) {
  SynthRng rng(3, "smooth");
  PoseTrack t;
  t.frame = "world";
  for (int i = 0; i < 10; ++i) t.samples.push_back({i * 0.1, random_transform(rng)});
  const PoseTrack same = smooth_track(t, 1);
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    EXPECT_EQ(same.samples[i].pose.translation(), t.samples[i].pose.translation());
  }
  const RigidTransform pose = random_transform(rng);
  for (int window : {3, 5, 9, 31}) {
    const PoseTrack out = smooth_track(constant_track(pose, 12), window);
    for (const PoseSample& s : out.samples) {
      EXPECT_LT(translation_error(s.pose, pose), 1e-12);
      EXPECT_LT(rotation_angle_between(s.pose, pose), 1e-7);
    }
  }
  EXPECT_THROW(smooth_track(t, 4), Error);
  EXPECT_THROW(smooth_track(t, 0), Error);
}

TEST(SmoothTrack, AlternatingJitterAveragesOut) {
  const Vec3 mean(0.1, 0.2, 0.3);
  PoseTrack t;
  t.frame = "world";
  for (int i = 0; i < 20; ++i) {
    const double s = (i % 2 == 0) ? 0.001 : -0.001;
    t.samples.push_back({i / 30.0, RigidTransform::translation_only(mean + Vec3(s, -s, s))});
  }
  const PoseTrack out = smooth_track(t, 3);
  for (std::size_t i = 1; i + 1 < out.samples.size(); ++i) {
    // Mean of (s, -s, s) over three samples is +-s/3 per axis.
    EXPECT_LT((out.samples[i].pose.translation() - mean).cwiseAbs().maxCoeff(), 0.00034);
  }
}

TEST(SmoothTrack, HandlesQuaternionSignFlips) {
  const Quat q(Eigen::AngleAxisd(0.4, Vec3::UnitY()));
  PoseTrack t;
  t.frame = "world";
  for (int i = 0; i < 7; ++i) {
    Quat s = q;
    if (i % 2) s.coeffs() = -s.coeffs();
    t.samples.push_back({i * 0.1, RigidTransform(s, Vec3::Zero())});
  }
  for (const PoseSample& s : smooth_track(t, 5).samples) {
    EXPECT_LT(rotation_angle(s.pose.rotation() * q.conjugate()), 1e-9);
  }
}

TEST(PoseTrackCsv, RoundTripIsExact) {
  SynthRng rng(4, "csv");
  PoseTrack t;
  t.frame = "world";
  for (int i = 0; i < 30; ++i) t.samples.push_back({i / 30.0 + 1e-7, random_transform(rng, 2.0, "tool", "world")});
  std::stringstream s;
  write_pose_track(s, t);
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "t_s,tx_m,ty_m,tz_m,qw,qx,qy,qz");
  const PoseTrack back = read_pose_track(s, "world", "tool", "mem");
  ASSERT_EQ(back.samples.size(), t.samples.size());
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].t, t.samples[i].t);
    EXPECT_EQ(back.samples[i].pose.translation(), t.samples[i].pose.translation());
    EXPECT_EQ(back.samples[i].pose.rotation().coeffs(), t.samples[i].pose.rotation().coeffs());
    EXPECT_EQ(back.samples[i].pose.from_frame(), "tool");
  }
}

TEST(PoseTrackCsv, BadInputs) {
  std::stringstream header("t,x\n");
  EXPECT_THROW(read_pose_track(header, "w", "n", "mem"), Error);
  std::stringstream bad("t_s,tx_m,ty_m,tz_m,qw,qx,qy,qz\n0,1,2,3,1,0,0,zz\n");
  EXPECT_THROW(read_pose_track(bad, "w", "n", "mem"), Error);
  PoseTrack t;
  t.samples = {{1.0, RigidTransform()}, {0.5, RigidTransform()}};
  EXPECT_THROW(check_pose_track(t), Error);
}

TEST(MarkerArrayFile, RoundTrip) {
  TempDir dir("array");
  MarkerArrayGeometry a = asymmetric_array();
  a.radius_m = 0.002;
  write_marker_array(dir.path() / "a.json", a);
  const MarkerArrayGeometry back = read_marker_array(dir.path() / "a.json");
  EXPECT_EQ(back.radius_m, 0.002);
  ASSERT_EQ(back.markers.size(), 5u);
  EXPECT_EQ(back.markers.markers[3].position, a.markers.markers[3].position);
}
