#include "twinfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "twinfuse/error.hpp"
#include "twinfuse/ply.hpp"

namespace twinfuse {
namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string numbered(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

}  // namespace

SynthRng::SynthRng(std::uint64_t seed, std::string_view stream)
    : engine_(splitmix64(splitmix64(seed) ^ fnv1a(stream))) {}

double SynthRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SynthRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SynthRng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * kPi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * kPi * u2);
}

Vec3 SynthRng::gaussian3(double sigma) {
  const double x = gaussian();
  const double y = gaussian();
  const double z = gaussian();
  return sigma * Vec3(x, y, z);
}

std::size_t SynthRng::index(std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

Quat SynthRng::rotation() {
  const double u1 = uniform();
  const double u2 = uniform();
  const double u3 = uniform();
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  return Quat(b * std::cos(2 * kPi * u3), a * std::sin(2 * kPi * u2),
              a * std::cos(2 * kPi * u2), b * std::sin(2 * kPi * u3));
}

void check_synth_config(const SynthConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kParameter, what); };
  if (c.marker_count < 1 || c.scan_count < 1 || c.camera_count < 1) {
    fail("marker, scan and camera counts must be >= 1");
  }
  if (c.visible_min < 1 || c.visible_min > c.visible_max || c.visible_max > c.marker_count) {
    fail("visibility range must satisfy 1 <= min <= max <= marker_count");
  }
  if (!(c.scan_sigma_m >= 0) || !(c.pixel_sigma_px >= 0) || !(c.tracker_sigma_m >= 0) ||
      !(c.hemisphere_sigma_m >= 0)) {
    fail("noise levels must be >= 0");
  }
  if (!(c.room_extent_m.minCoeff() > 2.0) || !(c.room_spacing_m > 0) ||
      c.room_spacing_m > 0.5) {
    fail("room extents must exceed 2 m and spacing lie in (0, 0.5] m");
  }
  if (!(c.duration_s > 0) || !(c.rate_hz > 0) || !std::isfinite(c.clock_offset_s)) {
    fail("duration and rate must be > 0");
  }
}

Json synth_config_to_json(const SynthConfig& c) {
  return Json{{"seed", c.seed},
              {"room_extent_m", vec3_to_json(c.room_extent_m)},
              {"room_spacing_m", c.room_spacing_m},
              {"marker_count", c.marker_count},
              {"scan_count", c.scan_count},
              {"visible_min", c.visible_min},
              {"visible_max", c.visible_max},
              {"camera_count", c.camera_count},
              {"scan_sigma_m", c.scan_sigma_m},
              {"pixel_sigma_px", c.pixel_sigma_px},
              {"tracker_sigma_m", c.tracker_sigma_m},
              {"hemisphere_sigma_m", c.hemisphere_sigma_m},
              {"clock_offset_s", c.clock_offset_s},
              {"duration_s", c.duration_s},
              {"rate_hz", c.rate_hz}};
}

SynthConfig synth_config_from_json(const Json& j, const std::string& context) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, context + ": expected an object");
  SynthConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = json_get<std::decay_t<decltype(field)>>(j, key, context);
  };
  opt("seed", c.seed);
  if (j.contains("room_extent_m")) {
    c.room_extent_m = vec3_from_json(j["room_extent_m"], context + ".room_extent_m");
  }
  opt("room_spacing_m", c.room_spacing_m);
  opt("marker_count", c.marker_count);
  opt("scan_count", c.scan_count);
  opt("visible_min", c.visible_min);
  opt("visible_max", c.visible_max);
  opt("camera_count", c.camera_count);
  opt("scan_sigma_m", c.scan_sigma_m);
  opt("pixel_sigma_px", c.pixel_sigma_px);
  opt("tracker_sigma_m", c.tracker_sigma_m);
  opt("hemisphere_sigma_m", c.hemisphere_sigma_m);
  opt("clock_offset_s", c.clock_offset_s);
  opt("duration_s", c.duration_s);
  opt("rate_hz", c.rate_hz);
  return c;
}

CameraIntrinsics default_intrinsics() {
  CameraIntrinsics intr;
  intr.fx = 600.0;
  intr.fy = 600.0;
  intr.cx = 640.0;
  intr.cy = 360.0;
  intr.distortion = {-0.05, 0.01, 0.0, 0.0, 0.0};
  intr.width = 1280;
  intr.height = 720;
  return intr;
}

CameraModel look_at_camera(const std::string& id, const CameraIntrinsics& intrinsics,
                           const Vec3& position, const Vec3& target) {
  const Vec3 z = (target - position).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r << x, y, z;
  return CameraModel{id, intrinsics,
                     RigidTransform::from_matrix(r, position, id, kReferenceFrame)};
}

std::vector<Vec3> drill_surface(double s, std::uint64_t seed) {
  SynthRng rng(seed, "drill-surface");
  std::vector<Vec3> pts;
  auto count = [&](double area) {
    return static_cast<int>(std::ceil(area / (s * s)));
  };
  // Barrel along +x, tapering toward the chuck end. Sampled by rejection so
  // that the density per unit area stays uniform along the taper.
  const double length = 0.16;
  const double r0 = 0.025;
  const double r1 = 0.015;
  auto radius_at = [&](double x) { return r0 + (r1 - r0) * x / length; };
  for (int i = 0, n = count(kPi * (r0 + r1) * length); i < n;) {
    const double x = rng.uniform(0.0, length);
    const double a = rng.uniform(0.0, 2 * kPi);
    if (rng.uniform() * r0 > radius_at(x)) continue;
    pts.emplace_back(x, radius_at(x) * std::cos(a), radius_at(x) * std::sin(a));
    ++i;
  }
  for (double x : {0.0, length}) {
    const double r = radius_at(x);
    for (int i = 0, n = count(kPi * r * r); i < n; ++i) {
      const double rho = r * std::sqrt(rng.uniform());
      const double a = rng.uniform(0.0, 2 * kPi);
      pts.emplace_back(x, rho * std::cos(a), rho * std::sin(a));
    }
  }
  // Grip hanging below the barrel; the top face is hidden inside it.
  const Vec3 lo(0.03, -0.0125, -0.12);
  const Vec3 hi(0.06, 0.0125, -0.02);
  auto face = [&](int fixed, double value, int a, int b) {
    for (int i = 0, n = count((hi[a] - lo[a]) * (hi[b] - lo[b])); i < n; ++i) {
      Vec3 p;
      p[fixed] = value;
      p[a] = rng.uniform(lo[a], hi[a]);
      p[b] = rng.uniform(lo[b], hi[b]);
      pts.push_back(p);
    }
  };
  face(0, lo.x(), 1, 2);
  face(0, hi.x(), 1, 2);
  face(1, lo.y(), 0, 2);
  face(1, hi.y(), 0, 2);
  face(2, lo.z(), 0, 1);
  return pts;
}

std::array<Vec3, kSkeletonJoints> stick_figure(double phase) {
  std::array<Vec3, kSkeletonJoints> j;
  j[0] = {0.0, 0.09, 1.62};
  j[1] = {0.0, 0.0, 1.45};
  j[2] = {0.19, 0.0, 1.43};
  j[3] = {0.22, 0.05, 1.15};
  j[5] = {-0.19, 0.0, 1.43};
  j[6] = {-0.22, 0.05, 1.15};
  j[8] = {0.0, 0.0, 0.95};
  j[9] = {0.10, 0.0, 0.95};
  j[10] = {0.11, 0.02, 0.50};
  j[11] = {0.11, 0.0, 0.08};
  j[12] = {-0.10, 0.0, 0.95};
  j[13] = {-0.11, 0.02, 0.50};
  j[14] = {-0.11, 0.0, 0.08};
  j[15] = {0.035, 0.08, 1.66};
  j[16] = {-0.035, 0.08, 1.66};
  j[17] = {0.075, 0.0, 1.63};
  j[18] = {-0.075, 0.0, 1.63};
  j[19] = {-0.12, 0.17, 0.02};
  j[20] = {-0.16, 0.15, 0.02};
  j[21] = {-0.11, -0.05, 0.03};
  j[22] = {0.12, 0.17, 0.02};
  j[23] = {0.16, 0.15, 0.02};
  j[24] = {0.11, -0.05, 0.03};

  constexpr double kForearm = 0.26;
  // side +1: right arm (elbow 3, wrist 4), -1: left arm (elbow 6, wrist 7).
  for (int side : {1, -1}) {
    const std::size_t elbow = side > 0 ? 3 : 6;
    const std::size_t wrist = side > 0 ? 4 : 7;
    const std::size_t hand = kBodyJoints + (side > 0 ? kHandJoints : 0);
    const double pitch = -0.3 + 0.25 * std::sin(phase + (side > 0 ? 0.0 : 1.0));
    const Mat3 r = Eigen::AngleAxisd(pitch, Vec3::UnitX()).toRotationMatrix();
    j[wrist] = j[elbow] + r * Vec3(0.0, kForearm, 0.0);
    j[hand] = j[wrist];
    for (int f = 0; f < 5; ++f) {
      for (int k = 1; k <= 4; ++k) {
        Vec3 local;
        if (f == 0) {
          local = {-side * (0.03 + 0.01 * k), 0.01 + 0.02 * k, -0.005};
        } else {
          local = {-side * (0.03 - 0.015 * f), 0.03 + 0.025 * k, 0.0};
        }
        j[hand + 1 + 4 * f + (k - 1)] = j[wrist] + r * local;
      }
    }
  }
  return j;
}

namespace {

// One sample at the center of every grid cell; the floor lattice is
// symmetric about the origin so its centroid and principal axes are exact.
PointCloud make_room(const SynthConfig& c, const Vec3& table_center) {
  PointCloud room;
  room.frame = kReferenceFrame;
  const double s = c.room_spacing_m;
  const Vec3& ext = c.room_extent_m;
  const double hx = ext.x() / 2;
  const double hy = ext.y() / 2;
  auto cells = [&](double length, double spacing) {
    return std::max(1, static_cast<int>(std::lround(length / spacing)));
  };
  auto add = [&](const Vec3& p, Color col) {
    room.points.push_back(p);
    room.colors.push_back(col);
  };
  // Samples the rectangle origin + [0, la] * a + [0, lb] * b.
  auto patch = [&](const Vec3& origin, const Vec3& a, double la, const Vec3& b, double lb,
                   double spacing, Color col) {
    const int na = cells(la, spacing);
    const int nb = cells(lb, spacing);
    for (int i = 0; i < na; ++i) {
      for (int k = 0; k < nb; ++k) {
        const double u = (i + 0.5) / na;
        const double v = (k + 0.5) / nb;
        add(origin + u * la * a + v * lb * b, col);
      }
    }
  };
  const Color floor{120, 120, 120};
  const Color wall{200, 200, 190};
  const double wall_h = ext.z() - 0.2;
  patch({-hx, -hy, 0.0}, Vec3::UnitX(), ext.x(), Vec3::UnitY(), ext.y(), s, floor);
  patch({-hx, -hy, 0.1}, Vec3::UnitX(), ext.x(), Vec3::UnitZ(), wall_h, s, wall);
  patch({-hx, hy, 0.1}, Vec3::UnitX(), ext.x(), Vec3::UnitZ(), wall_h, s, wall);
  patch({-hx, -hy, 0.1}, Vec3::UnitY(), ext.y(), Vec3::UnitZ(), wall_h, s, wall);
  patch({hx, -hy, 0.1}, Vec3::UnitY(), ext.y(), Vec3::UnitZ(), wall_h, s, wall);
  patch(table_center + Vec3(-0.8, -0.4, 0.0), Vec3::UnitX(), 1.6, Vec3::UnitY(), 0.8, s / 2,
        {90, 60, 40});
  return room;
}

RigidTransform instrument_pose(const Vec3& table_center, double t) {
  const Vec3 p = table_center + Vec3(0.12 * std::sin(1.3 * t) + 0.03 * std::sin(3.1 * t),
                                     0.08 * std::cos(0.9 * t), 0.2 + 0.04 * std::sin(2.3 * t));
  const Quat q = Eigen::AngleAxisd(0.4 * std::sin(0.7 * t), Vec3::UnitZ()) *
                 Eigen::AngleAxisd(0.2 * std::sin(1.1 * t), Vec3::UnitY());
  return RigidTransform(q, p, "instrument", kReferenceFrame);
}

std::vector<std::size_t> draw_subset(SynthRng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GroundTruthBundle generate(const SynthConfig& c) {
  check_synth_config(c);
  GroundTruthBundle b;
  b.config = c;
  const Vec3 ext = c.room_extent_m;
  b.table_center = Vec3(0.15 * ext.x(), 0.15 * ext.y(), 0.9);
  b.room = make_room(c, b.table_center);

  {
    SynthRng rng(c.seed, "markers");
    b.markers.frame = kReferenceFrame;
    for (int i = 0; i < c.marker_count; ++i) {
      const double x = rng.uniform(-0.4 * ext.x(), 0.4 * ext.x());
      const double y = rng.uniform(-0.4 * ext.y(), 0.4 * ext.y());
      const double z = rng.uniform(0.3, 0.8 * ext.z());
      b.markers.markers.push_back({numbered("M", i + 1, 2), Vec3(x, y, z)});
    }
  }

  // Visible-marker counts first: the scan seeing the most markers draws its
  // subset from all markers, every other scan draws from that subset.
  std::vector<SynthRng> vis_rngs;
  std::vector<std::size_t> vis_counts;
  for (int i = 0; i < c.scan_count; ++i) {
    vis_rngs.emplace_back(c.seed, "scan/" + numbered("scan", i + 1, 2) + "/visibility");
    vis_counts.push_back(static_cast<std::size_t>(c.visible_min) +
                         vis_rngs.back().index(
                             static_cast<std::size_t>(c.visible_max - c.visible_min + 1)));
  }
  const auto leader = static_cast<std::size_t>(
      std::max_element(vis_counts.begin(), vis_counts.end()) - vis_counts.begin());
  const std::vector<std::size_t> leader_subset =
      draw_subset(vis_rngs[leader], b.markers.size(), vis_counts[leader]);

  for (int i = 0; i < c.scan_count; ++i) {
    const std::string name = numbered("scan", i + 1, 2);
    SynthRng pose_rng(c.seed, "scan/" + name + "/pose");
    const Vec3 pos(pose_rng.uniform(-0.3 * ext.x(), 0.3 * ext.x()),
                   pose_rng.uniform(-0.3 * ext.y(), 0.3 * ext.y()), pose_rng.uniform(1.0, 1.6));
    const double tilt = 2.0 * kPi / 180.0;
    const Quat q = Eigen::AngleAxisd(pose_rng.uniform(-kPi, kPi), Vec3::UnitZ()) *
                   Eigen::AngleAxisd(pose_rng.uniform(-tilt, tilt), Vec3::UnitX()) *
                   Eigen::AngleAxisd(pose_rng.uniform(-tilt, tilt), Vec3::UnitY());
    SynthScan scan;
    scan.world_from_scan = RigidTransform(q, pos, name, kReferenceFrame);
    const RigidTransform scan_from_world = invert(scan.world_from_scan);

    std::vector<std::size_t> visible = leader_subset;
    if (static_cast<std::size_t>(i) != leader) {
      visible.clear();
      for (std::size_t m : draw_subset(vis_rngs[i], leader_subset.size(), vis_counts[i])) {
        visible.push_back(leader_subset[m]);
      }
    }
    SynthRng marker_rng(c.seed, "scan/" + name + "/markers");
    scan.record.name = name;
    scan.record.markers.frame = name;
    for (std::size_t m : visible) {
      const Marker& mk = b.markers.markers[m];
      scan.record.markers.markers.push_back(
          {mk.id, scan_from_world * mk.position + marker_rng.gaussian3(c.scan_sigma_m)});
    }
    SynthRng cloud_rng(c.seed, "scan/" + name + "/cloud");
    scan.record.cloud.frame = name;
    scan.record.cloud.colors = b.room.colors;
    scan.record.cloud.points.reserve(b.room.size());
    for (const Vec3& p : b.room.points) {
      scan.record.cloud.points.push_back(scan_from_world * p +
                                         cloud_rng.gaussian3(c.scan_sigma_m));
    }
    b.scans.push_back(std::move(scan));
  }

  const CameraIntrinsics intr = default_intrinsics();
  for (int i = 0; i < c.camera_count; ++i) {
    const std::string id = numbered("cam", i + 1, 1);
    const double a = kPi / 2 + 2 * kPi * i / c.camera_count;
    Vec3 pos = b.table_center + 2.5 * Vec3(std::cos(a), std::sin(a), 0.0);
    pos.x() = std::clamp(pos.x(), -0.47 * ext.x(), 0.47 * ext.x());
    pos.y() = std::clamp(pos.y(), -0.47 * ext.y(), 0.47 * ext.y());
    pos.z() = ext.z() - 0.3;
    SynthCamera cam;
    cam.truth = look_at_camera(id, intr, pos, b.table_center);
    SynthRng rng(c.seed, "camera/" + id + "/pixels");
    const RigidTransform camera_from_world = invert(cam.truth.world_from_camera);
    for (const Marker& m : b.markers.markers) {
      const Vec3 pc = camera_from_world * m.position;
      if (pc.z() < 0.1) continue;
      const Pixel uv = project_camera_point(intr, pc);
      if (uv.x() < 0 || uv.y() < 0 || uv.x() >= intr.width || uv.y() >= intr.height) continue;
      const double du = rng.gaussian();
      const double dv = rng.gaussian();
      cam.marker_ids.push_back(m.id);
      cam.pixels.push_back(uv + c.pixel_sigma_px * Pixel(du, dv));
    }
    b.cameras.push_back(std::move(cam));
  }

  const auto n_samples = static_cast<std::size_t>(std::lround(c.duration_s * c.rate_hz)) + 1;
  auto time_at = [&](std::size_t k) { return static_cast<double>(k) / c.rate_hz; };

  b.instrument_truth.frame = kReferenceFrame;
  b.instrument_tracker.frame = kReferenceFrame;
  b.instrument_camera.frame = kReferenceFrame;
  {
    SynthRng tracker_rng(c.seed, "instrument/tracker");
    SynthRng camera_rng(c.seed, "instrument/camera");
    for (std::size_t k = 0; k < n_samples; ++k) {
      const double t = time_at(k);
      const RigidTransform truth = instrument_pose(b.table_center, t);
      b.instrument_truth.samples.push_back({t, truth});
      b.instrument_tracker.samples.push_back(
          {t, RigidTransform(truth.rotation(),
                             truth.translation() + tracker_rng.gaussian3(c.tracker_sigma_m),
                             "instrument", kReferenceFrame)});
      const RigidTransform late = instrument_pose(b.table_center, t + c.clock_offset_s);
      b.instrument_camera.samples.push_back(
          {t, RigidTransform(late.rotation(),
                             late.translation() + camera_rng.gaussian3(c.tracker_sigma_m),
                             "instrument", kReferenceFrame)});
    }
  }

  b.marker_array.radius_m = kDefaultMarkerRadiusM;
  b.marker_array.markers.frame = "array";
  const std::vector<Vec3> array_layout = {{0.0, 0.0, 0.0},
                                          {0.040, 0.0, 0.0},
                                          {0.012, 0.030, 0.0},
                                          {0.052, 0.038, 0.006},
                                          {0.020, 0.065, 0.010}};
  for (std::size_t i = 0; i < array_layout.size(); ++i) {
    b.marker_array.markers.markers.push_back(
        {numbered("A", static_cast<int>(i + 1), 1), array_layout[i]});
  }
  {
    SynthRng rng(c.seed, "array/pose");
    const Quat q = rng.rotation();
    const Vec3 t(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    b.model_from_array = RigidTransform(q, t, "array", "model");
    const Vec3 normal = b.model_from_array.rotation() * Vec3::UnitZ();
    for (const Marker& m : b.marker_array.markers.markers) {
      SynthRng hr(c.seed, "array/hemisphere/" + m.id);
      PointCloud hemi;
      hemi.frame = "model";
      const Vec3 center = b.model_from_array * m.position;
      for (int k = 0; k < 150; ++k) {
        Vec3 d = hr.gaussian3(1.0).normalized();
        if (d.dot(normal) < 0) d = -d;
        hemi.points.push_back(center + b.marker_array.radius_m * d +
                              hr.gaussian3(c.hemisphere_sigma_m));
      }
      b.hemispheres.push_back(std::move(hemi));
    }
  }

  {
    b.drill_model.frame = "model";
    b.drill_model.points = drill_surface(0.002, c.seed);
    SynthRng rng(c.seed, "drill/scan");
    const Vec3 axis = rng.gaussian3(1.0).normalized();
    const double angle = rng.uniform(-1.0, 1.0) * kPi / 180.0;
    const Vec3 shift = 0.005 * rng.gaussian3(1.0).normalized();
    b.model_from_scan =
        RigidTransform(Quat(Eigen::AngleAxisd(angle, axis)), shift, "drill_scan", "model");
    const RigidTransform scan_from_model = invert(b.model_from_scan);
    b.drill_scan.frame = "drill_scan";
    for (const Vec3& p : b.drill_model.points) {
      b.drill_scan.points.push_back(scan_from_model * p + rng.gaussian3(c.tracker_sigma_m));
    }
  }

  struct PersonSpec {
    const char* name;
    Vec3 offset;  // base position relative to the table center footprint
    double yaw;
    double phase;
  };
  const PersonSpec specs[] = {{"surgeon", {0.0, -0.55, 0.0}, 0.0, 0.0},
                              {"bystander", {-1.9, -0.5, 0.0}, -0.8, 2.0}};
  for (const PersonSpec& spec : specs) {
    SynthPerson person;
    person.name = spec.name;
    const Vec3 base(b.table_center.x() + spec.offset.x(), b.table_center.y() + spec.offset.y(),
                    0.0);
    const Mat3 yaw = Eigen::AngleAxisd(spec.yaw, Vec3::UnitZ()).toRotationMatrix();
    for (std::size_t k = 0; k < n_samples; ++k) {
      const double t = time_at(k);
      const auto local = stick_figure(spec.phase + kPi * t);
      const Vec3 sway(0.02 * std::sin(0.8 * t + spec.phase), 0.0, 0.0);
      Skeleton3DFrame f;
      f.t = t;
      for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
        f.joints[j] = {base + sway + yaw * local[j], 0.0, true};
      }
      person.truth.push_back(f);
    }
    b.persons.push_back(std::move(person));
  }

  for (std::size_t k = 0; k < n_samples; ++k) {
    std::vector<Keypoint2DFrame> per_camera;
    for (const SynthCamera& cam : b.cameras) {
      SynthRng rng(c.seed, "keypoints/" + cam.truth.id + "/" + std::to_string(k));
      const RigidTransform camera_from_world = invert(cam.truth.world_from_camera);
      Keypoint2DFrame frame{cam.truth.id, time_at(k), {}};
      for (const SynthPerson& person : b.persons) {
        PersonKeypoints kp;
        for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
          const Vec3 pc = camera_from_world * person.truth[k].joints[j].position;
          const double du = rng.gaussian();
          const double dv = rng.gaussian();
          if (pc.z() < 0.1) continue;
          const Pixel uv = project_camera_point(cam.truth.intrinsics, pc);
          if (uv.x() < 0 || uv.y() < 0 || uv.x() >= cam.truth.intrinsics.width ||
              uv.y() >= cam.truth.intrinsics.height) {
            continue;
          }
          kp.joint(j) = {uv.x() + c.pixel_sigma_px * du, uv.y() + c.pixel_sigma_px * dv, 0.9};
        }
        frame.persons.push_back(kp);
      }
      if (frame.persons.size() > 1 && rng.uniform() < 0.5) {
        std::swap(frame.persons[0], frame.persons[1]);
      }
      per_camera.push_back(std::move(frame));
    }
    b.keypoints.push_back(std::move(per_camera));
  }
  return b;
}

std::string reference_scan_name(const GroundTruthBundle& bundle) {
  const SynthScan* best = nullptr;
  for (const SynthScan& s : bundle.scans) {
    if (!best || s.record.markers.size() > best->record.markers.size()) best = &s;
  }
  if (!best) throw Error(ErrorCode::kParameter, "bundle has no scans");
  return best->record.name;
}

EstimateSet truth_entities(const GroundTruthBundle& b) {
  EstimateSet truth;
  const std::string ref = reference_scan_name(b);
  const SynthScan& ref_scan = *std::find_if(b.scans.begin(), b.scans.end(), [&](const auto& s) {
    return s.record.name == ref;
  });
  const RigidTransform ref_from_world = invert(ref_scan.world_from_scan);
  for (const SynthScan& s : b.scans) {
    truth.poses["scan/" + s.record.name] =
        compose(ref_from_world.with_frames(kReferenceFrame, ref),
                s.world_from_scan);
  }
  for (const SynthCamera& cam : b.cameras) {
    truth.poses["camera/" + cam.truth.id] = cam.truth.world_from_camera;
  }
  truth.poses["array"] = b.model_from_array;
  truth.poses["drill"] = b.model_from_scan;
  for (const Marker& m : b.markers.markers) truth.points["marker/" + m.id] = m.position;
  if (!b.persons.empty()) {
    const auto& frames = b.persons.front().truth;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
        truth.points["joint/" + std::to_string(k) + "/" + std::to_string(j)] =
            frames[k].joints[j].position;
      }
    }
  }
  return truth;
}

TruthComparison compare_to_truth(const EstimateSet& truth, const EstimateSet& estimates) {
  TruthComparison out;
  for (const auto& [name, pose] : estimates.poses) {
    const auto it = truth.poses.find(name);
    if (it == truth.poses.end()) {
      throw Error(ErrorCode::kUnknownEntity, "no pose named '" + name + "' in the bundle");
    }
    out.poses.push_back({name, 1000.0 * (pose.translation() - it->second.translation()).norm(),
                         rotation_angle_between(pose, it->second) * 180.0 / kPi});
  }
  for (const auto& [name, point] : estimates.points) {
    const auto it = truth.points.find(name);
    if (it == truth.points.end()) {
      throw Error(ErrorCode::kUnknownEntity, "no point named '" + name + "' in the bundle");
    }
    out.points.push_back({name, 1000.0 * (point - it->second).norm(), 0.0});
  }
  return out;
}

Json truth_comparison_to_json(const TruthComparison& c) {
  Json poses = Json::array();
  Json points = Json::array();
  double max_t = 0.0;
  double max_r = 0.0;
  double max_p = 0.0;
  for (const EntityError& e : c.poses) {
    poses.push_back(
        {{"name", e.name}, {"translation_mm", e.translation_mm}, {"rotation_deg", e.rotation_deg}});
    max_t = std::max(max_t, e.translation_mm);
    max_r = std::max(max_r, e.rotation_deg);
  }
  for (const EntityError& e : c.points) {
    points.push_back({{"name", e.name}, {"error_mm", e.translation_mm}});
    max_p = std::max(max_p, e.translation_mm);
  }
  return Json{{"poses", poses},
              {"points", points},
              {"max_translation_mm", max_t},
              {"max_rotation_deg", max_r},
              {"max_point_mm", max_p}};
}

Json estimates_to_json(const EstimateSet& set) {
  Json poses = Json::object();
  for (const auto& [name, pose] : set.poses) poses[name] = transform_to_json(pose);
  Json points = Json::object();
  for (const auto& [name, p] : set.points) points[name] = vec3_to_json(p);
  return Json{{"poses", poses}, {"points", points}};
}

EstimateSet estimates_from_json(const Json& j, const std::string& context) {
  EstimateSet set;
  if (!j.is_object()) throw Error(ErrorCode::kParse, context + ": expected an object");
  if (j.contains("poses")) {
    for (const auto& [name, value] : j["poses"].items()) {
      set.poses[name] = transform_from_json(value, context + ".poses." + name);
    }
  }
  if (j.contains("points")) {
    for (const auto& [name, value] : j["points"].items()) {
      set.points[name] = vec3_from_json(value, context + ".points." + name);
    }
  }
  return set;
}

MarkerPixels read_marker_pixels(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  const std::string ctx = path.string();
  MarkerPixels out;
  out.camera_id = json_get<std::string>(j, "camera", ctx);
  if (!j.contains("observations") || !j["observations"].is_array()) {
    throw Error(ErrorCode::kParse, ctx + ": missing array 'observations'");
  }
  std::size_t i = 0;
  for (const Json& o : j["observations"]) {
    const std::string octx = ctx + ".observations[" + std::to_string(i++) + "]";
    out.marker_ids.push_back(json_get<std::string>(o, "id", octx));
    const auto uv = json_get<std::vector<double>>(o, "uv", octx);
    if (uv.size() != 2) throw Error(ErrorCode::kParse, octx + ".uv: expected [u, v]");
    out.pixels.emplace_back(uv[0], uv[1]);
  }
  return out;
}

void write_marker_pixels(const std::filesystem::path& path, const MarkerPixels& pixels) {
  Json obs = Json::array();
  for (std::size_t i = 0; i < pixels.marker_ids.size(); ++i) {
    obs.push_back({{"id", pixels.marker_ids[i]},
                   {"uv", {pixels.pixels[i].x(), pixels.pixels[i].y()}}});
  }
  write_json_file(path, Json{{"camera", pixels.camera_id}, {"observations", obs}});
}

void write_bundle(const GroundTruthBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"scans", "cameras", "keypoints", "tracks", "instrument/hemispheres",
                          "truth"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create '" + (dir / sub).string() + "'");
  }
  write_json_file(dir / "config.json", synth_config_to_json(b.config));
  write_json_file(dir / "table.json", Json{{"table_center_m", vec3_to_json(b.table_center)}});

  for (const SynthScan& s : b.scans) {
    write_ply(dir / "scans" / (s.record.name + ".ply"), s.record.cloud);
    write_marker_set(dir / "scans" / (s.record.name + ".markers.json"), s.record.markers);
  }
  for (const SynthCamera& cam : b.cameras) {
    CameraModel unposed = cam.truth;
    unposed.world_from_camera = RigidTransform::identity(cam.truth.id, kReferenceFrame);
    write_camera(dir / "cameras" / (cam.truth.id + ".json"), unposed);
    write_marker_pixels(dir / "cameras" / (cam.truth.id + ".pixels.json"),
                        {cam.truth.id, cam.marker_ids, cam.pixels});
  }
  for (std::size_t k = 0; k < b.keypoints.size(); ++k) {
    for (const Keypoint2DFrame& f : b.keypoints[k]) {
      fs::create_directories(dir / "keypoints" / f.camera_id, ec);
      write_keypoint_frame(dir / "keypoints" / f.camera_id / (numbered("", static_cast<int>(k), 5) + ".json"), f);
    }
  }
  write_pose_track(dir / "tracks" / "instrument_tracker.csv", b.instrument_tracker);
  write_pose_track(dir / "tracks" / "instrument_camera.csv", b.instrument_camera);

  write_marker_array(dir / "instrument" / "array.json", b.marker_array);
  for (std::size_t i = 0; i < b.hemispheres.size(); ++i) {
    write_ply(dir / "instrument" / "hemispheres" / (b.marker_array.markers.markers[i].id + ".ply"),
              b.hemispheres[i]);
  }
  write_ply(dir / "instrument" / "drill_model.ply", b.drill_model);
  write_ply(dir / "instrument" / "drill_scan.ply", b.drill_scan);

  Json truth = estimates_to_json(truth_entities(b));
  truth["reference_scan"] = reference_scan_name(b);
  truth["clock_offset_s"] = b.config.clock_offset_s;
  write_json_file(dir / "truth" / "truth.json", truth);
  write_marker_set(dir / "truth" / "markers.json", b.markers);
  write_pose_track(dir / "truth" / "instrument.csv", b.instrument_truth);
  if (!b.persons.empty()) {
    write_skeleton_track(dir / "truth" / "skeleton.csv", b.persons.front().truth);
  }
}

}  // namespace twinfuse
