#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <utility>

#include "test_support.hpp"
#include "twinfuse/camera.hpp"
#include "twinfuse/mocap.hpp"
#include "twinfuse/scene.hpp"
#include "twinfuse/tracking.hpp"

// Synthetic fixtures shared by the unit tests and the acceptance binary.
namespace twinfuse::testing {

// Brute-force directional mean with the same cutoff rule, in mm.
inline double oracle_directional(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double cutoff,
                          std::size_t* filtered) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const Vec3& p : a) {
    const double d = brute_nearest(b, p);
    if (d > cutoff) {
      ++*filtered;
      continue;
    }
    sum += d;
    ++used;
  }
  return 1000.0 * sum / static_cast<double>(used);
}

// Camera on a circle of radius `range` around the origin, looking at it.
inline CameraModel ring_camera(const std::string& id, double angle, double range, double height,
                        const CameraIntrinsics& in) {
  return look_at_camera(id, in, Vec3(range * std::cos(angle), range * std::sin(angle), height),
                        Vec3::Zero());
}

// Room-scale marker layout: points spread over +-1.5 m around the target,
// drawn until `n` of them land inside the image.
inline std::vector<Vec3> markers_in_image(SynthRng& rng, const CameraModel& cam, std::size_t n) {
  std::vector<Vec3> out;
  const RigidTransform cfw = invert(cam.world_from_camera);
  while (out.size() < n) {
    const Vec3 p(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.0, 1.0));
    if ((cfw * p).z() <= 0.5) continue;
    const Pixel uv = project(cam, p);
    if (uv.x() < 0 || uv.y() < 0 || uv.x() >= cam.intrinsics.width || uv.y() >= cam.intrinsics.height) continue;
    out.push_back(p);
  }
  return out;
}

inline std::vector<TimedPosition> wandering_track(double rate, double duration, double shift) {
  std::vector<TimedPosition> out;
  for (int i = 0; i * (1.0 / rate) <= duration; ++i) {
    const double t = i / rate;
    const double s = t + shift;
    out.push_back({t, Vec3(0.3 * std::sin(1.3 * s) + 0.1 * std::sin(4.1 * s), 0.2 * std::cos(2.2 * s),
                           0.05 * s * s)});
  }
  return out;
}

// Points on the cap of a sphere around `axis`, polar angle up to 90 deg.
inline std::vector<Vec3> hemisphere(SynthRng& rng, const Vec3& center, double radius, const Vec3& axis,
                             std::size_t n, double sigma) {
  const Quat to_axis = Quat::FromTwoVectors(Vec3::UnitZ(), axis.normalized());
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.uniform();  // uniform area on the cap
    const double phi = rng.uniform(0, 2 * kPi);
    const double r = std::sqrt(1.0 - z * z);
    out.push_back(center + to_axis * (radius * Vec3(r * std::cos(phi), r * std::sin(phi), z)) +
                  rng.gaussian3(sigma));
  }
  return out;
}

inline MarkerArrayGeometry asymmetric_array() {
  MarkerArrayGeometry a;
  a.markers.frame = "array";
  a.markers.markers = {{"A1", Vec3(0, 0, 0)},
                       {"A2", Vec3(0.04, 0, 0)},
                       {"A3", Vec3(0.012, 0.03, 0)},
                       {"A4", Vec3(0.052, 0.038, 0.006)},
                       {"A5", Vec3(0.02, 0.065, 0.01)}};
  return a;
}

inline const Vec3 kTable(0.0, 0.0, 0.9);

inline std::vector<CameraModel> rig(double range) {
  std::vector<CameraModel> cams;
  for (int i = 0; i < 5; ++i) {
    const double a = kPi / 2 + 2 * kPi * i / 5;
    cams.push_back(look_at_camera("cam" + std::to_string(i + 1), default_intrinsics(),
                                  kTable + Vec3(range * std::cos(a), range * std::sin(a), 1.2), kTable));
  }
  return cams;
}

inline std::array<Vec3, kSkeletonJoints> person_at(const Vec3& feet, double phase) {
  std::array<Vec3, kSkeletonJoints> j = stick_figure(phase);
  for (Vec3& p : j) p += feet;
  return j;
}

inline PersonKeypoints render(const CameraModel& cam, const std::array<Vec3, kSkeletonJoints>& joints,
                       SynthRng* rng, double sigma_px) {
  PersonKeypoints p;
  for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
    Pixel uv = project(cam, joints[j]);
    if (rng) uv += sigma_px * Pixel(rng->gaussian(), rng->gaussian());
    p.joint(j) = {uv.x(), uv.y(), 0.9};
  }
  return p;
}

inline std::vector<Keypoint2DFrame> frames_for(const std::vector<CameraModel>& cams,
                                        const std::vector<std::array<Vec3, kSkeletonJoints>>& people,
                                        double t, SynthRng* rng = nullptr, double sigma_px = 0.0) {
  std::vector<Keypoint2DFrame> frames;
  for (const CameraModel& c : cams) {
    Keypoint2DFrame f{c.id, t, {}};
    for (const auto& person : people) f.persons.push_back(render(c, person, rng, sigma_px));
    frames.push_back(std::move(f));
  }
  return frames;
}

inline double mean_joint_error(const Skeleton3DFrame& s, const std::array<Vec3, kSkeletonJoints>& truth) {
  double sum = 0.0;
  for (std::size_t j = 0; j < kSkeletonJoints; ++j) sum += (s.joints[j].position - truth[j]).norm();
  return sum / kSkeletonJoints;
}

inline std::vector<Skeleton3DFrame> jittered_static(SynthRng& rng, std::size_t n, double sigma) {
  const auto truth = person_at(Vec3::Zero(), 0.0);
  std::vector<Skeleton3DFrame> track(n);
  for (std::size_t f = 0; f < n; ++f) {
    track[f].t = f / 30.0;
    for (std::size_t j = 0; j < kSkeletonJoints; ++j) track[f].joints[j] = {truth[j] + rng.gaussian3(sigma), 0.5, true};
  }
  return track;
}

inline double joint_std(const std::vector<Skeleton3DFrame>& track, std::size_t j, std::size_t from, std::size_t to) {
  Vec3 m = Vec3::Zero();
  for (std::size_t f = from; f < to; ++f) m += track[f].joints[j].position;
  m /= static_cast<double>(to - from);
  double var = 0.0;
  for (std::size_t f = from; f < to; ++f) var += (track[f].joints[j].position - m).squaredNorm();
  return std::sqrt(var / static_cast<double>(to - from));
}

// Coordinates representable in float32 so that PLY storage is lossless.
inline Vec3 float_point(SynthRng& rng) {
  return Vec3(static_cast<float>(rng.uniform(-3, 3)), static_cast<float>(rng.uniform(-3, 3)),
              static_cast<float>(rng.uniform(0, 3)));
}

inline TwinScene random_scene(std::uint64_t seed) {
  SynthRng rng(seed, "scene");
  std::vector<StaticNode> statics;
  const std::size_t n_static = 1 + rng.index(3);
  for (std::size_t i = 0; i < n_static; ++i) {
    StaticNode n;
    n.name = "static " + std::to_string(i);
    const std::string frame = "s" + std::to_string(i);
    n.pose = random_transform(rng, 2.0, frame, kReferenceFrame);
    if (i == 0 || rng.uniform() < 0.5) {
      PointCloud c;
      c.frame = frame;
      const std::size_t pts = 1 + rng.index(50);
      for (std::size_t k = 0; k < pts; ++k) c.points.push_back(float_point(rng));
      if (rng.uniform() < 0.5) {
        for (std::size_t k = 0; k < pts; ++k) c.colors.push_back({static_cast<std::uint8_t>(k), 7, 200});
      }
      n.cloud = std::move(c);
    }
    if (!n.cloud || rng.uniform() < 0.5) n.asset = "meshes/table_" + std::to_string(i) + ".obj";
    statics.push_back(std::move(n));
  }
  std::vector<DynamicNode> dynamics;
  const std::size_t n_dyn = 1 + rng.index(2);
  for (std::size_t i = 0; i < n_dyn; ++i) {
    DynamicNode n;
    n.name = "tool/" + std::to_string(i);
    n.asset = rng.uniform() < 0.5 ? "drill.ply" : "";
    n.track.frame = kReferenceFrame;
    double t = rng.uniform(-1, 1);
    const std::size_t samples = 2 + rng.index(20);
    for (std::size_t k = 0; k < samples; ++k) {
      n.track.samples.push_back({t, random_transform(rng, 1.0, "tool" + std::to_string(i), kReferenceFrame)});
      t += rng.uniform(0.01, 0.1);
    }
    dynamics.push_back(std::move(n));
  }
  std::vector<SkeletonNode> skeletons;
  if (rng.uniform() < 0.8) {
    SkeletonNode n;
    n.name = "surgeon";
    double t = rng.uniform(0, 1);
    for (std::size_t f = 0; f < 2 + rng.index(5); ++f) {
      Skeleton3DFrame frame;
      frame.t = t;
      for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
        if (rng.uniform() < 0.1) {
          frame.joints[j] = {Vec3::Constant(std::numeric_limits<double>::quiet_NaN()), 0.0, false};
        } else {
          frame.joints[j] = {random_points(rng, 1, 2.0)[0], rng.uniform(0, 2), true};
        }
      }
      n.frames.push_back(frame);
      t += 1.0 / 30.0;
    }
    skeletons.push_back(std::move(n));
  }
  return assemble(std::move(statics), std::move(dynamics), std::move(skeletons));
}

inline bool has_kind(const std::vector<Violation>& v, ViolationKind kind) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.kind == kind; });
}

using Mutation = std::pair<ViolationKind, void (*)(TwinScene&)>;

inline const std::vector<Mutation>& mutations() {
  static const std::vector<Mutation> all = {
      {ViolationKind::kDuplicateName, [](TwinScene& s) { s.dynamic_nodes[0].name = s.static_nodes[0].name; }},
      {ViolationKind::kFrameMismatch,
       [](TwinScene& s) { s.static_nodes[0].pose = s.static_nodes[0].pose.with_frames(s.static_nodes[0].pose.from_frame(), "elsewhere"); }},
      {ViolationKind::kFrameMismatch, [](TwinScene& s) { s.dynamic_nodes[0].track.frame = "tracker"; }},
      {ViolationKind::kFrameMismatch, [](TwinScene& s) { s.static_nodes[0].cloud->frame = "wrong"; }},
      {ViolationKind::kNonMonotonicTimestamps,
       [](TwinScene& s) {
         auto& smp = s.dynamic_nodes[0].track.samples;
         std::swap(smp[0].t, smp[1].t);
       }},
      {ViolationKind::kNonUnitQuaternion,
       [](TwinScene& s) {
         const RigidTransform& p = s.static_nodes[0].pose;
         Quat q = p.rotation();
         q.coeffs() *= 1.1;
         s.static_nodes[0].pose = RigidTransform::unchecked(q, p.translation(), p.from_frame(), p.to_frame());
       }},
      {ViolationKind::kNonUnitQuaternion,
       [](TwinScene& s) {
         PoseSample& smp = s.dynamic_nodes[0].track.samples.back();
         Quat q = smp.pose.rotation();
         q.coeffs() *= 0.5;
         smp.pose = RigidTransform::unchecked(q, smp.pose.translation(), smp.pose.from_frame(), smp.pose.to_frame());
       }},
      {ViolationKind::kMissingAsset,
       [](TwinScene& s) {
         s.static_nodes[0].asset.clear();
         s.static_nodes[0].cloud.reset();
       }},
      {ViolationKind::kTimeRange, [](TwinScene& s) { s.time_range->second += 1.0; }},
      {ViolationKind::kTimeRange, [](TwinScene& s) { s.dynamic_nodes[0].track.samples.back().t += 10.0; }},
  };
  return all;
}

}  // namespace twinfuse::testing
