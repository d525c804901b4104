#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twinfuse/geometry.hpp"
#include "twinfuse/mocap.hpp"
#include "twinfuse/tracking.hpp"

namespace twinfuse {

// A node whose pose never changes, e.g. the room cloud or a table mesh.
// `cloud` holds point data owned by the scene; `asset` is an opaque
// reference (mesh path) that is carried but never opened.
struct StaticNode {
  std::string name;
  std::string asset;
  std::optional<PointCloud> cloud;
  RigidTransform pose;  // node frame -> scene reference frame
};

struct DynamicNode {
  std::string name;
  std::string asset;
  PoseTrack track;
};

struct SkeletonNode {
  std::string name;
  std::vector<Skeleton3DFrame> frames;
};

struct TwinScene {
  std::string reference_frame = kReferenceFrame;
  std::vector<StaticNode> static_nodes;
  std::vector<DynamicNode> dynamic_nodes;
  std::vector<SkeletonNode> skeleton_nodes;
  // Union of all timestamps; empty when the scene has no samples.
  std::optional<std::pair<double, double>> time_range;
};

// Builds a scene and enforces unique names and a single reference frame.
TwinScene assemble(std::vector<StaticNode> static_nodes, std::vector<DynamicNode> dynamic_nodes,
                   std::vector<SkeletonNode> skeleton_nodes = {},
                   std::string reference_frame = kReferenceFrame);

struct SnapshotEntry {
  std::string name;
  std::optional<RigidTransform> pose;
  std::optional<Skeleton3DFrame> skeleton;
};

struct Snapshot {
  double t = 0.0;
  bool clamped = false;  // requested time was outside time_range
  std::vector<SnapshotEntry> entries;
};

// Static poses as stored; dynamic poses interpolated linearly in translation
// and by slerp in rotation; skeleton joints interpolated linearly when
// valid in both bracketing frames.
Snapshot sample_at(const TwinScene& scene, double t);

enum class ViolationKind {
  kDuplicateName,
  kFrameMismatch,
  kNonMonotonicTimestamps,
  kNonUnitQuaternion,
  kMissingAsset,
  kTimeRange,
};

struct Violation {
  ViolationKind kind;
  std::string node;
  std::string detail;
};

std::string violation_kind_name(ViolationKind kind);

// Empty iff every scene invariant holds.
std::vector<Violation> validate(const TwinScene& scene);

inline constexpr const char* kManifestVersion = "1";

// Writes manifest.json plus clouds/*.ply, tracks/*.csv, skeletons/*.csv.
// Asset paths in the manifest are relative to the manifest.
void save(const TwinScene& scene, const std::filesystem::path& directory);
TwinScene load(const std::filesystem::path& directory);

// Field-by-field comparison; invalid skeleton joints compare by flag only.
bool structurally_equal(const TwinScene& a, const TwinScene& b);

}  // namespace twinfuse
