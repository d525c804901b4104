#include "twinfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "twinfuse/error.hpp"
#include "twinfuse/kdtree.hpp"

namespace twinfuse {

std::vector<MarkerPair> match_markers(const MarkerSet& src, const MarkerSet& dst) {
  std::map<std::string, Vec3> by_id;
  for (const Marker& m : dst.markers) by_id.emplace(m.id, m.position);
  std::vector<MarkerPair> pairs;
  for (const Marker& m : src.markers) {
    if (auto it = by_id.find(m.id); it != by_id.end()) {
      pairs.push_back({m.id, m.position, it->second});
    }
  }
  if (pairs.size() < 3) {
    throw Error(ErrorCode::kInsufficientCorrespondences,
                "marker sets '" + src.frame + "' and '" + dst.frame + "' share " +
                    std::to_string(pairs.size()) + " ids, need 3");
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const MarkerPair& a, const MarkerPair& b) { return a.id < b.id; });
  return pairs;
}

ScanRegistration register_scan(const ScanRecord& src, const MarkerSet& reference) {
  if (src.cloud.frame != src.markers.frame) {
    throw Error(ErrorCode::kFrameMismatch, "scan '" + src.name + "' cloud frame '" +
                                               src.cloud.frame + "' differs from marker frame '" +
                                               src.markers.frame + "'");
  }
  const std::vector<MarkerPair> pairs = match_markers(src.markers, reference);
  std::vector<Vec3> from;
  std::vector<Vec3> to;
  for (const MarkerPair& p : pairs) {
    from.push_back(p.src);
    to.push_back(p.dst);
  }
  ScanRegistration out;
  out.transform = kabsch(from, to, src.markers.frame, reference.frame);
  out.rmse_mm = 1000.0 * residual_rms(out.transform, from, to);
  out.markers_used = pairs.size();
  return out;
}

FusionResult fuse_scans(std::span<const ScanRecord> scans, const FusionOptions& options) {
  if (scans.empty()) throw Error(ErrorCode::kParameter, "fusion needs at least one scan");
  std::size_t ref = 0;
  for (std::size_t i = 1; i < scans.size(); ++i) {
    if (scans[i].markers.size() > scans[ref].markers.size()) ref = i;
  }
  const ScanRecord& reference = scans[ref];

  FusionResult result;
  result.report.reference_name = reference.name;
  result.report.reference_markers = reference.markers.size();
  result.cloud.frame = reference.cloud.frame;
  const bool colored = std::all_of(scans.begin(), scans.end(),
                                   [](const ScanRecord& s) { return s.cloud.has_colors(); });

  for (std::size_t i = 0; i < scans.size(); ++i) {
    const ScanRecord& scan = scans[i];
    PointCloud registered;
    if (i == ref) {
      registered = scan.cloud;
    } else {
      try {
        const ScanRegistration reg = register_scan(scan, reference.markers);
        registered = apply(reg.transform, scan.cloud);
        const ChamferResult cd = chamfer(registered, reference.cloud, options.chamfer_cutoff_m);
        result.report.rows.push_back(
            {scan.name, reg.markers_used, reg.rmse_mm, cd.mm, reg.transform});
      } catch (const Error& e) {
        throw Error(e.code(), "scan '" + scan.name + "': " + e.what());
      }
    }
    result.cloud.points.insert(result.cloud.points.end(), registered.points.begin(),
                               registered.points.end());
    if (colored) {
      result.cloud.colors.insert(result.cloud.colors.end(), registered.colors.begin(),
                                 registered.colors.end());
    }
  }
  return result;
}

MarkerSet fused_markers(std::span<const ScanRecord> scans, const FusionReport& report) {
  std::map<std::string, std::pair<Vec3, int>> acc;
  std::string frame;
  auto add = [&](const MarkerSet& set, const RigidTransform& t) {
    for (const Marker& m : set.markers) {
      auto& [sum, count] = acc.try_emplace(m.id, Vec3::Zero(), 0).first->second;
      sum += t * m.position;
      ++count;
    }
  };
  for (const ScanRecord& scan : scans) {
    if (scan.name == report.reference_name) {
      frame = scan.markers.frame;
      add(scan.markers, RigidTransform::identity(frame, frame));
      continue;
    }
    const auto row = std::find_if(report.rows.begin(), report.rows.end(),
                                  [&](const FusionRow& r) { return r.name == scan.name; });
    if (row == report.rows.end()) {
      throw Error(ErrorCode::kReference, "scan '" + scan.name + "' missing from the report");
    }
    add(scan.markers, row->transform);
  }
  MarkerSet out;
  out.frame = frame;
  for (const auto& [id, entry] : acc) {
    out.markers.push_back({id, entry.first / entry.second});
  }
  return out;
}

Json fusion_report_to_json(const FusionReport& report) {
  Json rows = Json::array();
  for (const FusionRow& r : report.rows) {
    rows.push_back({{"name", r.name},
                    {"markers", r.markers_used},
                    {"rmse_mm", r.rmse_mm},
                    {"cd_mm", r.chamfer_mm},
                    {"transform", transform_to_json(r.transform)}});
  }
  double rmse = 0.0;
  double cd = 0.0;
  for (const FusionRow& r : report.rows) {
    rmse += r.rmse_mm;
    cd += r.chamfer_mm;
  }
  const double n = report.rows.empty() ? 1.0 : static_cast<double>(report.rows.size());
  return Json{{"reference", report.reference_name},
              {"reference_markers", report.reference_markers},
              {"registrations", rows},
              {"mean_rmse_mm", rmse / n},
              {"mean_cd_mm", cd / n}};
}

std::string fusion_report_table(const FusionReport& report) {
  std::ostringstream out;
  out << "Reference scan: " << report.reference_name << " (" << report.reference_markers
      << " markers)\n";
  if (report.rows.empty()) {
    out << "No registrations.\n";
    return out.str();
  }
  auto line = [&](const std::string& label, auto cell, const std::string& mean) {
    out << label;
    for (const FusionRow& r : report.rows) out << " | " << cell(r);
    out << " | " << mean << "\n";
  };
  double markers = 0.0;
  double rmse = 0.0;
  double cd = 0.0;
  for (const FusionRow& r : report.rows) {
    markers += static_cast<double>(r.markers_used);
    rmse += r.rmse_mm;
    cd += r.chamfer_mm;
  }
  const double n = static_cast<double>(report.rows.size());
  line("Laser Scan", [](const FusionRow& r) { return r.name; }, "Mean");
  line("# Markers", [](const FusionRow& r) { return std::to_string(r.markers_used); },
       format_fixed(markers / n, 1));
  line("RMSE (mm)", [](const FusionRow& r) { return format_fixed(r.rmse_mm); },
       format_fixed(rmse / n));
  line("CD (mm)", [](const FusionRow& r) { return format_fixed(r.chamfer_mm); },
       format_fixed(cd / n));
  return out.str();
}

FinalizedReference finalize_reference(const PointCloud& fused, const FloorOptions& options) {
  check_cloud(fused);
  if (!(options.frame_band_m > 0.0)) {
    throw Error(ErrorCode::kParameter, "floor frame band must be positive");
  }
  const PointCloud sparse = voxel_downsample(fused, options.detection_voxel_m);
  if (sparse.size() < 3) {
    throw Error(ErrorCode::kDegenerateGeometry, "cloud too small for floor detection");
  }
  // The plane is searched on the sparse copy; the frame comes from the full
  // cloud, since voxelizing a slightly tilted floor duplicates cells in bands
  // and would bias the centroid.
  const std::vector<std::size_t> sparse_inliers = segment_plane(sparse.points, options.ransac);
  std::vector<Vec3> sparse_floor;
  for (std::size_t i : sparse_inliers) sparse_floor.push_back(sparse.points[i]);
  const PlaneFrame plane = fit_plane_pca(sparse_floor);
  std::vector<Vec3> floor;
  std::vector<Vec3> rest;
  for (const Vec3& p : fused.points) {
    const bool on_floor =
        std::abs(plane.z_axis.dot(p - plane.origin)) <= options.frame_band_m;
    (on_floor ? floor : rest).push_back(p);
  }
  if (floor.size() < 3) {
    throw Error(ErrorCode::kDegenerateGeometry, "no floor plane found");
  }
  FinalizedReference out;
  out.transform = build_floor_frame(floor, rest, fused.frame, kReferenceFrame);
  out.cloud = apply(out.transform, fused);
  return out;
}

PointCloud crop_aabb(const PointCloud& cloud, std::span<const Aabb> boxes) {
  for (const Aabb& b : boxes) {
    if (!(b.min.array() <= b.max.array()).all()) {
      throw Error(ErrorCode::kParameter, "crop box has min > max");
    }
  }
  PointCloud out;
  out.frame = cloud.frame;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    if (std::any_of(boxes.begin(), boxes.end(), [&](const Aabb& b) { return b.contains(p); })) {
      out.points.push_back(p);
      if (cloud.has_colors()) out.colors.push_back(cloud.colors[i]);
    }
  }
  return out;
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) + 0x85EBCA77C2B2AE63ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_m) {
  if (!(voxel_m > 0.0)) throw Error(ErrorCode::kParameter, "voxel size must be positive");
  struct Cell {
    Vec3 sum = Vec3::Zero();
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    std::size_t count = 0;
  };
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> index;
  std::vector<Cell> cells;
  const bool colored = cloud.has_colors();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x() / voxel_m)),
                       static_cast<std::int64_t>(std::floor(p.y() / voxel_m)),
                       static_cast<std::int64_t>(std::floor(p.z() / voxel_m))};
    auto [it, inserted] = index.try_emplace(key, cells.size());
    if (inserted) cells.emplace_back();
    Cell& cell = cells[it->second];
    cell.sum += p;
    if (colored) {
      cell.color += Eigen::Vector3d(cloud.colors[i][0], cloud.colors[i][1], cloud.colors[i][2]);
    }
    ++cell.count;
  }
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cells.size());
  for (const Cell& c : cells) {
    const double n = static_cast<double>(c.count);
    out.points.push_back(c.sum / n);
    if (colored) {
      const Eigen::Vector3d rgb = (c.color / n).array().round();
      out.colors.push_back({static_cast<std::uint8_t>(rgb.x()), static_cast<std::uint8_t>(rgb.y()),
                            static_cast<std::uint8_t>(rgb.z())});
    }
  }
  return out;
}

PointCloud remove_statistical_outliers(const PointCloud& cloud, int k, double std_ratio) {
  if (k < 1 || !(std_ratio > 0.0)) {
    throw Error(ErrorCode::kParameter, "outlier filter needs k >= 1 and std_ratio > 0");
  }
  const auto kk = static_cast<std::size_t>(k);
  if (cloud.size() <= kk) {
    throw Error(ErrorCode::kParameter, "cloud has " + std::to_string(cloud.size()) +
                                           " points, outlier filter needs more than k=" +
                                           std::to_string(k));
  }
  const KdTree index(cloud.points);
  std::vector<double> mean_dist(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto neighbors = index.k_nearest(cloud.points[i], kk + 1);
    double sum = 0.0;
    std::size_t used = 0;
    bool skipped_self = false;
    for (const auto& nb : neighbors) {
      if (!skipped_self && nb.index == i) {
        skipped_self = true;
        continue;
      }
      if (used == kk) break;
      sum += std::sqrt(nb.squared_distance);
      ++used;
    }
    mean_dist[i] = sum / static_cast<double>(used);
  }
  double mean = 0.0;
  for (double d : mean_dist) mean += d;
  mean /= static_cast<double>(mean_dist.size());
  double var = 0.0;
  for (double d : mean_dist) var += (d - mean) * (d - mean);
  const double threshold =
      mean + std_ratio * std::sqrt(var / static_cast<double>(mean_dist.size()));
  // Relative slack absorbs rounding when every distance is equal.
  const double limit = threshold * (1.0 + 1e-12);

  PointCloud out;
  out.frame = cloud.frame;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (mean_dist[i] <= limit) {
      out.points.push_back(cloud.points[i]);
      if (cloud.has_colors()) out.colors.push_back(cloud.colors[i]);
    }
  }
  return out;
}

}  // namespace twinfuse
