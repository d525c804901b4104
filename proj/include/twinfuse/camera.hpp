#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "twinfuse/error.hpp"
#include "twinfuse/geometry.hpp"

namespace twinfuse {

using Pixel = Eigen::Vector2d;

// Pinhole intrinsics with 5-parameter Brown-Conrady distortion
// (k1, k2, p1, p2, k3).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  std::array<double, 5> distortion{};
  int width = 0;
  int height = 0;
};

void check_intrinsics(const CameraIntrinsics& intr);

struct CameraModel {
  std::string id;
  CameraIntrinsics intrinsics;
  RigidTransform world_from_camera;  // camera-local frame -> world
};

struct PixelObservation {
  std::string camera_id;
  Pixel uv = Pixel::Zero();
  double confidence = 1.0;
};

// Normalized image coordinates (x/z, y/z) through the distortion model.
Eigen::Vector2d distort(const CameraIntrinsics& intr, const Eigen::Vector2d& xy);

// Pixel of a point given in camera coordinates. Throws kBehindCamera for
// non-positive depth. `jacobian`, when given, receives d(uv)/d(p_camera).
Pixel project_camera_point(const CameraIntrinsics& intr, const Vec3& p_camera,
                           Eigen::Matrix<double, 2, 3>* jacobian = nullptr);

Pixel project(const CameraModel& cam, const Vec3& p_world);

// Inverts the distortion numerically; returns normalized undistorted
// coordinates.
Eigen::Vector2d undistort(const CameraIntrinsics& intr, const Pixel& uv);

// World point at camera-frame depth `depth` along the ray through `uv`.
Vec3 unproject(const CameraModel& cam, const Pixel& uv, double depth);

struct PnpOptions {
  int max_iterations = 100;
  double min_improvement_px2 = 1e-10;
};

struct PnpResult {
  RigidTransform world_from_camera;
  double mean_reprojection_px = 0.0;
  int iterations = 0;
  // Sum of squared pixel residuals after initialization and after every
  // accepted refinement step.
  std::vector<double> cost_trace;
};

class PnpConvergenceError : public Error {
 public:
  PnpConvergenceError(const std::string& message, RigidTransform last_iterate)
      : Error(ErrorCode::kConvergence, message), last_(std::move(last_iterate)) {}
  const RigidTransform& last_iterate() const { return last_; }

 private:
  RigidTransform last_;
};

// Camera pose from 3D-2D correspondences: DLT initialization followed by
// Levenberg-Marquardt refinement of the pixel reprojection error.
PnpResult solve_pnp(std::span<const Vec3> points, std::span<const Pixel> pixels,
                    const CameraIntrinsics& intr, const PnpOptions& options = {},
                    std::string camera_frame = "camera",
                    std::string world_frame = kReferenceFrame);

struct TriangulationOptions {
  double min_confidence = 0.1;
  // Largest pairwise angle between viewing rays must exceed this.
  double min_ray_angle_rad = 0.01;
  int max_iterations = 30;
};

struct Triangulation {
  Vec3 point = Vec3::Zero();
  double residual_px = 0.0;  // confidence-weighted mean pixel residual
  std::size_t views_used = 0;
};

// Confidence-weighted DLT followed by weighted reprojection refinement.
// Observations below the confidence threshold are dropped.
Triangulation triangulate(std::span<const PixelObservation> observations,
                          std::span<const CameraModel> cameras,
                          const TriangulationOptions& options = {});

const CameraModel& find_camera(std::span<const CameraModel> cameras,
                               const std::string& id);

struct TimedPosition {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
};

struct TimeOffsetOptions {
  double max_offset_s = 1.0;
  double min_overlap_s = 1.0;
};

struct TimeOffsetResult {
  double offset_s = 0.0;  // add to track_b timestamps
  bool ambiguous = false;
  double cost = 0.0;  // mean absolute speed difference, m/s
};

// Grid search over offsets, step half the finer sampling interval, matching
// the linearly resampled speed profiles of both tracks.
TimeOffsetResult estimate_time_offset(std::span<const TimedPosition> track_a,
                                      std::span<const TimedPosition> track_b,
                                      const TimeOffsetOptions& options = {});

// {"id", "width", "height", "fx", "fy", "cx", "cy", "dist": [5],
//  "world_from_camera": {"t_m", "q_wxyz"}}. A missing world_from_camera
// reads as identity.
CameraModel read_camera(const std::filesystem::path& path);
void write_camera(const std::filesystem::path& path, const CameraModel& cam);

}  // namespace twinfuse
