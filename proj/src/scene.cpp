#include "twinfuse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "twinfuse/error.hpp"
#include "twinfuse/json_io.hpp"
#include "twinfuse/ply.hpp"

namespace twinfuse {
namespace {

std::optional<std::pair<double, double>> union_time_range(const TwinScene& scene) {
  std::optional<std::pair<double, double>> range;
  auto extend = [&](double t) {
    if (!range) range = std::pair{t, t};
    range->first = std::min(range->first, t);
    range->second = std::max(range->second, t);
  };
  for (const DynamicNode& n : scene.dynamic_nodes) {
    for (const PoseSample& s : n.track.samples) extend(s.t);
  }
  for (const SkeletonNode& n : scene.skeleton_nodes) {
    for (const Skeleton3DFrame& f : n.frames) extend(f.t);
  }
  return range;
}

std::vector<std::string> all_names(const TwinScene& scene) {
  std::vector<std::string> names;
  for (const auto& n : scene.static_nodes) names.push_back(n.name);
  for (const auto& n : scene.dynamic_nodes) names.push_back(n.name);
  for (const auto& n : scene.skeleton_nodes) names.push_back(n.name);
  return names;
}

}  // namespace

TwinScene assemble(std::vector<StaticNode> static_nodes, std::vector<DynamicNode> dynamic_nodes,
                   std::vector<SkeletonNode> skeleton_nodes, std::string reference_frame) {
  TwinScene scene;
  scene.reference_frame = std::move(reference_frame);
  scene.static_nodes = std::move(static_nodes);
  scene.dynamic_nodes = std::move(dynamic_nodes);
  scene.skeleton_nodes = std::move(skeleton_nodes);

  std::set<std::string> seen;
  for (const std::string& name : all_names(scene)) {
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::kDuplicateName, "node name '" + name + "' used twice");
    }
  }
  for (const StaticNode& n : scene.static_nodes) {
    if (n.pose.to_frame() != scene.reference_frame) {
      throw Error(ErrorCode::kFrameMismatch, "static node '" + n.name + "' is posed in '" +
                                                 n.pose.to_frame() + "', scene uses '" +
                                                 scene.reference_frame + "'");
    }
  }
  for (const DynamicNode& n : scene.dynamic_nodes) {
    if (n.track.frame != scene.reference_frame) {
      throw Error(ErrorCode::kFrameMismatch, "track of '" + n.name + "' is in '" +
                                                 n.track.frame + "', scene uses '" +
                                                 scene.reference_frame + "'");
    }
  }
  scene.time_range = union_time_range(scene);
  return scene;
}

namespace {

RigidTransform interpolate(const PoseSample& a, const PoseSample& b, double t) {
  const double w = (t - a.t) / (b.t - a.t);
  const Quat q = a.pose.rotation().slerp(w, b.pose.rotation());
  const Vec3 p = (1.0 - w) * a.pose.translation() + w * b.pose.translation();
  return RigidTransform(q, p, a.pose.from_frame(), a.pose.to_frame());
}

// Index of the last element with time <= t, assuming t within range.
template <typename Seq, typename TimeOf>
std::size_t bracket(const Seq& seq, double t, TimeOf time_of) {
  auto it = std::upper_bound(seq.begin(), seq.end(), t,
                             [&](double value, const auto& s) { return value < time_of(s); });
  return static_cast<std::size_t>(it - seq.begin()) - 1;
}

}  // namespace

Snapshot sample_at(const TwinScene& scene, double t) {
  Snapshot snap;
  snap.t = t;
  if (scene.time_range) {
    snap.t = std::clamp(t, scene.time_range->first, scene.time_range->second);
    snap.clamped = snap.t != t;
  }
  const double at = snap.t;
  for (const StaticNode& n : scene.static_nodes) snap.entries.push_back({n.name, n.pose, {}});
  for (const DynamicNode& n : scene.dynamic_nodes) {
    SnapshotEntry e{n.name, {}, {}};
    const auto& s = n.track.samples;
    if (!s.empty()) {
      if (at <= s.front().t) {
        e.pose = s.front().pose;
      } else if (at >= s.back().t) {
        e.pose = s.back().pose;
      } else {
        const std::size_t i = bracket(s, at, [](const PoseSample& p) { return p.t; });
        e.pose = s[i].t == at ? s[i].pose : interpolate(s[i], s[i + 1], at);
      }
    }
    snap.entries.push_back(std::move(e));
  }
  for (const SkeletonNode& n : scene.skeleton_nodes) {
    SnapshotEntry e{n.name, {}, {}};
    const auto& f = n.frames;
    if (!f.empty()) {
      if (at <= f.front().t) {
        e.skeleton = f.front();
      } else if (at >= f.back().t) {
        e.skeleton = f.back();
      } else {
        const std::size_t i = bracket(f, at, [](const Skeleton3DFrame& s) { return s.t; });
        if (f[i].t == at) {
          e.skeleton = f[i];
        } else {
          const double w = (at - f[i].t) / (f[i + 1].t - f[i].t);
          Skeleton3DFrame out;
          out.t = at;
          for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
            const SkeletonJoint& a = f[i].joints[j];
            const SkeletonJoint& b = f[i + 1].joints[j];
            if (a.valid && b.valid) {
              out.joints[j] = {(1.0 - w) * a.position + w * b.position,
                               (1.0 - w) * a.residual_px + w * b.residual_px, true};
            } else {
              out.joints[j] = w < 0.5 ? a : b;
            }
          }
          e.skeleton = out;
        }
      }
    }
    snap.entries.push_back(std::move(e));
  }
  return snap;
}

std::string violation_kind_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kDuplicateName: return "duplicate-name";
    case ViolationKind::kFrameMismatch: return "frame-mismatch";
    case ViolationKind::kNonMonotonicTimestamps: return "non-monotonic-timestamps";
    case ViolationKind::kNonUnitQuaternion: return "non-unit-quaternion";
    case ViolationKind::kMissingAsset: return "missing-asset";
    case ViolationKind::kTimeRange: return "time-range";
  }
  return "unknown";
}

std::vector<Violation> validate(const TwinScene& scene) {
  std::vector<Violation> out;
  constexpr double kUnitTolerance = 1e-9;
  auto unit = [&](const RigidTransform& t) {
    return t.rotation().coeffs().allFinite() && t.translation().allFinite() &&
           std::abs(t.rotation().norm() - 1.0) <= kUnitTolerance;
  };

  std::set<std::string> seen;
  for (const std::string& name : all_names(scene)) {
    if (!seen.insert(name).second) {
      out.push_back({ViolationKind::kDuplicateName, name, "name used more than once"});
    }
  }

  for (const StaticNode& n : scene.static_nodes) {
    if (n.pose.to_frame() != scene.reference_frame) {
      out.push_back({ViolationKind::kFrameMismatch, n.name,
                     "pose targets '" + n.pose.to_frame() + "'"});
    }
    if (!unit(n.pose)) {
      out.push_back({ViolationKind::kNonUnitQuaternion, n.name,
                     "|q| = " + std::to_string(n.pose.rotation().norm())});
    }
    if (n.asset.empty() && !n.cloud) {
      out.push_back({ViolationKind::kMissingAsset, n.name, "no cloud and no asset reference"});
    }
    if (n.cloud && n.cloud->frame != n.pose.from_frame()) {
      out.push_back({ViolationKind::kFrameMismatch, n.name,
                     "cloud frame '" + n.cloud->frame + "' differs from pose source frame '" +
                         n.pose.from_frame() + "'"});
    }
  }

  for (const DynamicNode& n : scene.dynamic_nodes) {
    const auto& s = n.track.samples;
    bool frame_ok = n.track.frame == scene.reference_frame;
    for (const PoseSample& p : s) frame_ok = frame_ok && p.pose.to_frame() == scene.reference_frame;
    if (!frame_ok) {
      out.push_back({ViolationKind::kFrameMismatch, n.name,
                     "track frame '" + n.track.frame + "'"});
    }
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (!(s[i].t > s[i - 1].t)) {
        out.push_back({ViolationKind::kNonMonotonicTimestamps, n.name,
                       "sample " + std::to_string(i) + " at t=" + std::to_string(s[i].t)});
        break;
      }
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!unit(s[i].pose)) {
        out.push_back({ViolationKind::kNonUnitQuaternion, n.name,
                       "sample " + std::to_string(i) + ": |q| = " +
                           std::to_string(s[i].pose.rotation().norm())});
      }
    }
  }

  for (const SkeletonNode& n : scene.skeleton_nodes) {
    for (std::size_t i = 1; i < n.frames.size(); ++i) {
      if (!(n.frames[i].t > n.frames[i - 1].t)) {
        out.push_back({ViolationKind::kNonMonotonicTimestamps, n.name,
                       "frame " + std::to_string(i) + " at t=" + std::to_string(n.frames[i].t)});
        break;
      }
    }
  }

  const auto expected = union_time_range(scene);
  if (expected != scene.time_range) {
    out.push_back({ViolationKind::kTimeRange, "",
                   "stored time range does not span the track timestamps"});
  }
  return out;
}

namespace {

std::string file_stem(std::size_t index, const std::string& name) {
  std::string s = std::to_string(index) + "_";
  for (char c : name) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    s.push_back(keep ? c : '_');
  }
  return s;
}

}  // namespace

void save(const TwinScene& scene, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"clouds", "tracks", "skeletons"}) {
    fs::create_directories(directory / sub, ec);
    if (ec) {
      throw Error(ErrorCode::kIo, "cannot create '" + (directory / sub).string() + "': " +
                                      ec.message());
    }
  }
  Json manifest{{"version", kManifestVersion}, {"reference_frame", scene.reference_frame}};
  manifest["time_range"] = scene.time_range
                               ? Json::array({scene.time_range->first, scene.time_range->second})
                               : Json(nullptr);
  Json statics = Json::array();
  for (std::size_t i = 0; i < scene.static_nodes.size(); ++i) {
    const StaticNode& n = scene.static_nodes[i];
    Json node{{"name", n.name},
              {"asset", n.asset},
              {"node_frame", n.pose.from_frame()},
              {"pose", transform_to_json(n.pose)}};
    if (n.cloud) {
      const std::string rel = "clouds/" + file_stem(i, n.name) + ".ply";
      write_ply(directory / rel, *n.cloud);
      node["cloud"] = rel;
      node["cloud_frame"] = n.cloud->frame;
    } else {
      node["cloud"] = nullptr;
    }
    statics.push_back(std::move(node));
  }
  Json dynamics = Json::array();
  for (std::size_t i = 0; i < scene.dynamic_nodes.size(); ++i) {
    const DynamicNode& n = scene.dynamic_nodes[i];
    const std::string rel = "tracks/" + file_stem(i, n.name) + ".csv";
    write_pose_track(directory / rel, n.track);
    const std::string node_frame =
        n.track.samples.empty() ? n.name : n.track.samples.front().pose.from_frame();
    dynamics.push_back({{"name", n.name},
                        {"asset", n.asset},
                        {"track_frame", n.track.frame},
                        {"node_frame", node_frame},
                        {"track", rel}});
  }
  Json skeletons = Json::array();
  for (std::size_t i = 0; i < scene.skeleton_nodes.size(); ++i) {
    const SkeletonNode& n = scene.skeleton_nodes[i];
    const std::string rel = "skeletons/" + file_stem(i, n.name) + ".csv";
    write_skeleton_track(directory / rel, n.frames);
    skeletons.push_back({{"name", n.name}, {"track", rel}});
  }
  manifest["static_nodes"] = statics;
  manifest["dynamic_nodes"] = dynamics;
  manifest["skeleton_nodes"] = skeletons;
  write_json_file(directory / "manifest.json", manifest);
}

TwinScene load(const std::filesystem::path& directory) {
  const std::filesystem::path manifest_path = directory / "manifest.json";
  const Json m = read_json_file(manifest_path);
  const std::string ctx = manifest_path.string();
  if (!m.is_object() || !m.contains("version")) {
    throw Error(ErrorCode::kParse, ctx + ": missing field 'version'");
  }
  if (!m["version"].is_string() || m["version"].get<std::string>() != kManifestVersion) {
    throw Error(ErrorCode::kVersion, ctx + ": unsupported manifest version " +
                                         m["version"].dump() + " (expected \"" +
                                         kManifestVersion + "\")");
  }
  TwinScene scene;
  scene.reference_frame = json_get<std::string>(m, "reference_frame", ctx);
  if (!m.contains("time_range")) throw Error(ErrorCode::kParse, ctx + ": missing 'time_range'");
  if (!m["time_range"].is_null()) {
    const auto range = json_get<std::vector<double>>(m, "time_range", ctx);
    if (range.size() != 2) throw Error(ErrorCode::kParse, ctx + ".time_range: expected [t_min, t_max]");
    scene.time_range = std::pair{range[0], range[1]};
  }
  auto array_field = [&](const char* key) -> const Json& {
    if (!m.contains(key) || !m[key].is_array()) {
      throw Error(ErrorCode::kParse, ctx + ": missing array '" + key + "'");
    }
    return m[key];
  };
  std::size_t i = 0;
  for (const Json& n : array_field("static_nodes")) {
    const std::string nctx = ctx + ".static_nodes[" + std::to_string(i++) + "]";
    StaticNode node;
    node.name = json_get<std::string>(n, "name", nctx);
    node.asset = json_get<std::string>(n, "asset", nctx);
    const std::string node_frame = json_get<std::string>(n, "node_frame", nctx);
    if (!n.contains("pose")) throw Error(ErrorCode::kParse, nctx + ": missing field 'pose'");
    node.pose = transform_from_json(n["pose"], nctx + ".pose", node_frame, scene.reference_frame);
    if (n.contains("cloud") && !n["cloud"].is_null()) {
      const auto rel = json_get<std::string>(n, "cloud", nctx);
      node.cloud = read_ply(directory / rel, json_get<std::string>(n, "cloud_frame", nctx));
    }
    scene.static_nodes.push_back(std::move(node));
  }
  i = 0;
  for (const Json& n : array_field("dynamic_nodes")) {
    const std::string nctx = ctx + ".dynamic_nodes[" + std::to_string(i++) + "]";
    DynamicNode node;
    node.name = json_get<std::string>(n, "name", nctx);
    node.asset = json_get<std::string>(n, "asset", nctx);
    const auto rel = json_get<std::string>(n, "track", nctx);
    node.track = read_pose_track(directory / rel, json_get<std::string>(n, "track_frame", nctx),
                                 json_get<std::string>(n, "node_frame", nctx));
    scene.dynamic_nodes.push_back(std::move(node));
  }
  i = 0;
  for (const Json& n : array_field("skeleton_nodes")) {
    const std::string nctx = ctx + ".skeleton_nodes[" + std::to_string(i++) + "]";
    SkeletonNode node;
    node.name = json_get<std::string>(n, "name", nctx);
    node.frames = read_skeleton_track(directory / json_get<std::string>(n, "track", nctx));
    scene.skeleton_nodes.push_back(std::move(node));
  }
  return scene;
}

namespace {

bool same_transform(const RigidTransform& a, const RigidTransform& b) {
  return a.rotation().coeffs() == b.rotation().coeffs() && a.translation() == b.translation() &&
         a.from_frame() == b.from_frame() && a.to_frame() == b.to_frame();
}

bool same_cloud(const PointCloud& a, const PointCloud& b) {
  return a.frame == b.frame && a.points == b.points && a.colors == b.colors;
}

bool same_joint(const SkeletonJoint& a, const SkeletonJoint& b) {
  if (a.valid != b.valid) return false;
  if (!a.valid) return true;
  return a.position == b.position && a.residual_px == b.residual_px;
}

}  // namespace

bool structurally_equal(const TwinScene& a, const TwinScene& b) {
  if (a.reference_frame != b.reference_frame || a.time_range != b.time_range) return false;
  if (a.static_nodes.size() != b.static_nodes.size() ||
      a.dynamic_nodes.size() != b.dynamic_nodes.size() ||
      a.skeleton_nodes.size() != b.skeleton_nodes.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.static_nodes.size(); ++i) {
    const StaticNode& x = a.static_nodes[i];
    const StaticNode& y = b.static_nodes[i];
    if (x.name != y.name || x.asset != y.asset || !same_transform(x.pose, y.pose) ||
        x.cloud.has_value() != y.cloud.has_value() || (x.cloud && !same_cloud(*x.cloud, *y.cloud))) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.dynamic_nodes.size(); ++i) {
    const DynamicNode& x = a.dynamic_nodes[i];
    const DynamicNode& y = b.dynamic_nodes[i];
    if (x.name != y.name || x.asset != y.asset || x.track.frame != y.track.frame ||
        x.track.samples.size() != y.track.samples.size()) {
      return false;
    }
    for (std::size_t k = 0; k < x.track.samples.size(); ++k) {
      if (x.track.samples[k].t != y.track.samples[k].t ||
          !same_transform(x.track.samples[k].pose, y.track.samples[k].pose)) {
        return false;
      }
    }
  }
  for (std::size_t i = 0; i < a.skeleton_nodes.size(); ++i) {
    const SkeletonNode& x = a.skeleton_nodes[i];
    const SkeletonNode& y = b.skeleton_nodes[i];
    if (x.name != y.name || x.frames.size() != y.frames.size()) return false;
    for (std::size_t k = 0; k < x.frames.size(); ++k) {
      if (x.frames[k].t != y.frames[k].t) return false;
      for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
        if (!same_joint(x.frames[k].joints[j], y.frames[k].joints[j])) return false;
      }
    }
  }
  return true;
}

}  // namespace twinfuse
