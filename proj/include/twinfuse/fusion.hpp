#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "twinfuse/geometry.hpp"
#include "twinfuse/json_io.hpp"
#include "twinfuse/markers.hpp"
#include "twinfuse/metrics.hpp"

namespace twinfuse {

struct ScanRecord {
  std::string name;
  PointCloud cloud;
  MarkerSet markers;  // markers visible in this scan, same frame as cloud
};

struct MarkerPair {
  std::string id;
  Vec3 src = Vec3::Zero();
  Vec3 dst = Vec3::Zero();
};

// Pairs for ids present in both sets, ordered by id.
std::vector<MarkerPair> match_markers(const MarkerSet& src, const MarkerSet& dst);

struct ScanRegistration {
  RigidTransform transform;  // scan frame -> reference frame
  double rmse_mm = 0.0;
  std::size_t markers_used = 0;
};

ScanRegistration register_scan(const ScanRecord& src, const MarkerSet& reference);

struct FusionRow {
  std::string name;
  std::size_t markers_used = 0;
  double rmse_mm = 0.0;
  double chamfer_mm = 0.0;
  RigidTransform transform;
};

struct FusionReport {
  std::string reference_name;
  std::size_t reference_markers = 0;
  std::vector<FusionRow> rows;  // non-reference scans in input order
};

struct FusionResult {
  PointCloud cloud;  // reference scan frame
  FusionReport report;
};

struct FusionOptions {
  double chamfer_cutoff_m = kDefaultChamferCutoffM;
};

// Registers every scan directly onto the scan with the most visible markers
// (first in input order on ties) and concatenates all clouds in input order.
FusionResult fuse_scans(std::span<const ScanRecord> scans, const FusionOptions& options = {});

// Mean position of every marker over the scans that observed it, after
// registration, in the reference scan frame. Ordered by id.
MarkerSet fused_markers(std::span<const ScanRecord> scans, const FusionReport& report);

Json fusion_report_to_json(const FusionReport& report);
// Fixed-precision text table with one column per registered scan.
std::string fusion_report_table(const FusionReport& report);

struct FloorOptions {
  double detection_voxel_m = 0.05;
  PlaneSegmentationParams ransac;
  // Points within this distance of the detected plane define the floor
  // frame. Wider than the RANSAC threshold so that slightly misregistered
  // scans are not trimmed at the floor edges.
  double frame_band_m = 0.03;
};

struct FinalizedReference {
  PointCloud cloud;          // floor frame
  RigidTransform transform;  // fused frame -> floor frame
};

// Detects the floor plane and re-expresses the cloud in the floor frame.
FinalizedReference finalize_reference(const PointCloud& fused,
                                      const FloorOptions& options = {});

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

// Keeps points inside the union of boxes (inclusive), preserving order.
PointCloud crop_aabb(const PointCloud& cloud, std::span<const Aabb> boxes);

// One centroid per occupied voxel of a grid anchored at the frame origin.
// Output order follows the first point seen in each voxel.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_m);

inline constexpr int kDefaultOutlierNeighbors = 16;
inline constexpr double kDefaultOutlierStdRatio = 2.0;

// Drops points whose mean distance to their k nearest neighbors exceeds
// mean + std_ratio * std over the whole cloud.
PointCloud remove_statistical_outliers(const PointCloud& cloud,
                                       int k = kDefaultOutlierNeighbors,
                                       double std_ratio = kDefaultOutlierStdRatio);

}  // namespace twinfuse
