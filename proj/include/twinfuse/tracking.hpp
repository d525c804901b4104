#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "twinfuse/error.hpp"
#include "twinfuse/geometry.hpp"
#include "twinfuse/markers.hpp"

namespace twinfuse {

inline constexpr double kDefaultMarkerRadiusM = 0.0015;

struct MarkerArrayGeometry {
  MarkerSet markers;  // positions in the tracker-array frame
  double radius_m = kDefaultMarkerRadiusM;
};

// >= 3 markers, unique ids, pairwise distances > 2 * radius.
void check_marker_array(const MarkerArrayGeometry& array);

MarkerArrayGeometry read_marker_array(const std::filesystem::path& path);
void write_marker_array(const std::filesystem::path& path, const MarkerArrayGeometry& array);

struct PoseSample {
  double t = 0.0;
  RigidTransform pose;
};

struct PoseTrack {
  std::string frame;
  std::vector<PoseSample> samples;  // strictly increasing t
};

void check_pose_track(const PoseTrack& track);

// CSV header `t_s,tx_m,ty_m,tz_m,qw,qx,qy,qz`, LF line endings. Values are
// written with enough digits to round-trip exactly. Quaternions are read
// as stored. Poses map `node_frame` into `frame`.
PoseTrack read_pose_track(const std::filesystem::path& path, std::string frame,
                          std::string node_frame);
PoseTrack read_pose_track(std::istream& in, std::string frame, std::string node_frame,
                          const std::string& context);
void write_pose_track(const std::filesystem::path& path, const PoseTrack& track);
void write_pose_track(std::ostream& out, const PoseTrack& track);

struct SphereFit {
  Vec3 center = Vec3::Zero();
  double rms_residual_m = 0.0;
  int iterations = 0;
};

// Center of a sphere of known radius minimizing sum (|p - c| - r)^2.
SphereFit fit_sphere_fixed_radius(std::span<const Vec3> points,
                                  double radius_m = kDefaultMarkerRadiusM);

struct ArrayRegistration {
  RigidTransform model_from_array;
  double rmse_mm = 0.0;
  // assignment[i] is the array marker index matched to scan center i.
  std::vector<std::size_t> assignment;
};

class MarkerAmbiguityError : public Error {
 public:
  MarkerAmbiguityError(const std::string& message,
                       std::vector<std::vector<std::size_t>> candidates)
      : Error(ErrorCode::kAmbiguity, message), candidates_(std::move(candidates)) {}
  const std::vector<std::vector<std::size_t>>& candidates() const { return candidates_; }

 private:
  std::vector<std::vector<std::size_t>> candidates_;
};

// Matches scanned marker centers to the array by pairwise-distance
// signatures, then aligns with kabsch. A permutation is accepted when every
// pairwise distance and the final marker residual are within `tolerance_m`.
ArrayRegistration register_marker_array(std::span<const Vec3> scan_centers,
                                        const MarkerArrayGeometry& array,
                                        double tolerance_m = 0.0005,
                                        std::string model_frame = "model");

struct IcpParams {
  int max_iterations = 50;
  double max_correspondence_m = 0.010;
  double convergence_m = 1e-7;
};

struct IcpResult {
  RigidTransform transform;  // src frame -> dst frame
  double rms_m = 0.0;        // inlier RMS at the returned transform
  int iterations = 0;
  std::size_t inliers = 0;
  std::vector<double> rms_trace;  // initial and every accepted step
};

// Point-to-point ICP with a fixed correspondence cutoff. Steps that would
// raise the inlier RMS are rejected, which ends the iteration.
IcpResult icp(const PointCloud& src, const PointCloud& dst, const RigidTransform& init,
              const IcpParams& params = {});

// Centered moving average with truncated windows at the ends. Rotations are
// the normalized quaternion mean after aligning each sample to the
// hemisphere of the window center.
PoseTrack smooth_track(const PoseTrack& track, int window);

}  // namespace twinfuse
