#pragma once

#include <optional>
#include <span>
#include <string>

#include "twinfuse/camera.hpp"
#include "twinfuse/geometry.hpp"
#include "twinfuse/json_io.hpp"
#include "twinfuse/markers.hpp"

namespace twinfuse {

inline constexpr double kDefaultChamferCutoffM = 0.1;

// RMS of Euclidean distances over the ids present in both sets, in mm.
double marker_rmse(const MarkerSet& a, const MarkerSet& b);

struct ChamferResult {
  double mm = 0.0;
  std::size_t samples_used = 0;
  std::size_t samples_filtered = 0;
};

// Symmetric Chamfer distance: mean of the two directional mean
// nearest-neighbor distances. Correspondences farther than max_dist_m are
// dropped before averaging.
ChamferResult chamfer(const PointCloud& a, const PointCloud& b,
                      double max_dist_m = kDefaultChamferCutoffM);

// Mean nearest-neighbor distance from a to b, in mm; unfiltered when
// max_dist_m is empty.
ChamferResult chamfer_one_sided(const PointCloud& a, const PointCloud& b,
                                std::optional<double> max_dist_m = std::nullopt);

struct ReprojectionSample {
  std::string camera_id;
  Pixel observed = Pixel::Zero();
  Vec3 point = Vec3::Zero();  // world
};

struct ReprojectionStats {
  double mean_px = 0.0;
  double std_px = 0.0;  // population
  std::size_t count = 0;
};

ReprojectionStats reprojection_stats(std::span<const ReprojectionSample> observations,
                                     std::span<const CameraModel> cameras);

struct MetricsReport {
  double rmse_mm = 0.0;
  double chamfer_mm = 0.0;
  double chamfer_one_sided_mm = 0.0;
  double reproj_mean_px = 0.0;
  double reproj_std_px = 0.0;
  std::size_t samples_used = 0;
  std::size_t samples_filtered = 0;
};

// Keys: rmse_mm, cd_mm, cd_one_sided_mm, reproj_mean_px, reproj_std_px,
// samples_used, samples_filtered.
Json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const Json& j, const std::string& context);

// Fixed-point rendering used by every table and report in the CLI.
std::string format_fixed(double value, int decimals = 2);

}  // namespace twinfuse
