#include "twinfuse/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "twinfuse/error.hpp"
#include "twinfuse/kdtree.hpp"

namespace twinfuse {

double marker_rmse(const MarkerSet& a, const MarkerSet& b) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const Marker& m : a.markers) {
    if (const auto other = b.find(m.id)) {
      sum += (m.position - *other).squaredNorm();
      ++n;
    }
  }
  if (n == 0) {
    throw Error(ErrorCode::kInsufficientCorrespondences, "marker sets share no ids");
  }
  return 1000.0 * std::sqrt(sum / static_cast<double>(n));
}

namespace {

struct Directional {
  double mean_m = 0.0;
  std::size_t used = 0;
  std::size_t filtered = 0;
};

Directional directional_mean(const PointCloud& from, const PointCloud& to,
                             std::optional<double> max_dist_m, const char* label) {
  if (from.empty() || to.empty()) {
    throw Error(ErrorCode::kParameter, "chamfer needs non-empty clouds");
  }
  const KdTree index(to.points);
  Directional out;
  double sum = 0.0;
  for (const Vec3& p : from.points) {
    const double d = std::sqrt(index.nearest(p).squared_distance);
    if (max_dist_m && d > *max_dist_m) {
      ++out.filtered;
      continue;
    }
    sum += d;
    ++out.used;
  }
  if (out.used == 0) {
    throw Error(ErrorCode::kEmptyOverlap,
                std::string("every correspondence ") + label + " exceeds the cutoff");
  }
  out.mean_m = sum / static_cast<double>(out.used);
  return out;
}

}  // namespace

ChamferResult chamfer(const PointCloud& a, const PointCloud& b, double max_dist_m) {
  if (!(max_dist_m > 0.0)) {
    throw Error(ErrorCode::kParameter, "chamfer cutoff must be positive");
  }
  const Directional ab = directional_mean(a, b, max_dist_m, "a->b");
  const Directional ba = directional_mean(b, a, max_dist_m, "b->a");
  ChamferResult out;
  out.mm = 1000.0 * 0.5 * (ab.mean_m + ba.mean_m);
  out.samples_used = ab.used + ba.used;
  out.samples_filtered = ab.filtered + ba.filtered;
  return out;
}

ChamferResult chamfer_one_sided(const PointCloud& a, const PointCloud& b,
                                std::optional<double> max_dist_m) {
  if (max_dist_m && !(*max_dist_m > 0.0)) {
    throw Error(ErrorCode::kParameter, "chamfer cutoff must be positive");
  }
  const Directional ab = directional_mean(a, b, max_dist_m, "a->b");
  return {1000.0 * ab.mean_m, ab.used, ab.filtered};
}

ReprojectionStats reprojection_stats(std::span<const ReprojectionSample> observations,
                                     std::span<const CameraModel> cameras) {
  ReprojectionStats out;
  if (observations.empty()) return out;
  std::vector<double> errors;
  errors.reserve(observations.size());
  for (const ReprojectionSample& obs : observations) {
    const CameraModel& cam = find_camera(cameras, obs.camera_id);
    errors.push_back((project(cam, obs.point) - obs.observed).norm());
  }
  double sum = 0.0;
  for (double e : errors) sum += e;
  out.count = errors.size();
  out.mean_px = sum / static_cast<double>(out.count);
  double var = 0.0;
  for (double e : errors) var += (e - out.mean_px) * (e - out.mean_px);
  out.std_px = std::sqrt(var / static_cast<double>(out.count));
  return out;
}

Json metrics_to_json(const MetricsReport& r) {
  return Json{{"rmse_mm", r.rmse_mm},
              {"cd_mm", r.chamfer_mm},
              {"cd_one_sided_mm", r.chamfer_one_sided_mm},
              {"reproj_mean_px", r.reproj_mean_px},
              {"reproj_std_px", r.reproj_std_px},
              {"samples_used", r.samples_used},
              {"samples_filtered", r.samples_filtered}};
}

MetricsReport metrics_from_json(const Json& j, const std::string& context) {
  MetricsReport r;
  r.rmse_mm = json_get<double>(j, "rmse_mm", context);
  r.chamfer_mm = json_get<double>(j, "cd_mm", context);
  r.chamfer_one_sided_mm = json_get<double>(j, "cd_one_sided_mm", context);
  r.reproj_mean_px = json_get<double>(j, "reproj_mean_px", context);
  r.reproj_std_px = json_get<double>(j, "reproj_std_px", context);
  r.samples_used = json_get<std::size_t>(j, "samples_used", context);
  r.samples_filtered = json_get<std::size_t>(j, "samples_filtered", context);
  return r;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

}  // namespace twinfuse
