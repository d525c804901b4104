#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace twinfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Color = std::array<std::uint8_t, 3>;

// Frame id of the floor-anchored room frame everything is registered into.
inline constexpr const char* kReferenceFrame = "reference";

bool is_finite(const Vec3& v);

// Rigid motion mapping points expressed in `from_frame` into `to_frame`.
// Rotation is a Hamilton unit quaternion; translation is in meters.
class RigidTransform {
 public:
  RigidTransform() = default;

  // Normalizes `rotation`.
  RigidTransform(const Quat& rotation, const Vec3& translation,
                 std::string from_frame = {}, std::string to_frame = {});

  static RigidTransform identity(std::string from_frame = {},
                                 std::string to_frame = {});
  static RigidTransform translation_only(const Vec3& t,
                                         std::string from_frame = {},
                                         std::string to_frame = {});
  // Orthonormalizes `rotation` through the quaternion conversion.
  static RigidTransform from_matrix(const Mat3& rotation, const Vec3& t,
                                    std::string from_frame = {},
                                    std::string to_frame = {});
  // Keeps the quaternion exactly as given, unit or not. Used when reading
  // serialized transforms so that validators can see what was stored.
  static RigidTransform unchecked(const Quat& rotation, const Vec3& t,
                                  std::string from_frame = {},
                                  std::string to_frame = {});

  const Quat& rotation() const { return rotation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  const Vec3& translation() const { return translation_; }
  const std::string& from_frame() const { return from_frame_; }
  const std::string& to_frame() const { return to_frame_; }

  RigidTransform with_frames(std::string from_frame,
                             std::string to_frame) const;

  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }

  // Unit quaternion within `tol` and finite components.
  bool is_valid(double tol = 1e-9) const;

 private:
  Quat rotation_ = Quat::Identity();
  Vec3 translation_ = Vec3::Zero();
  std::string from_frame_;
  std::string to_frame_;
};

// Applies b first, then a. Requires a.from_frame() == b.to_frame().
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

// Angle of the relative rotation between two transforms, radians.
double rotation_angle_between(const RigidTransform& a, const RigidTransform& b);
double rotation_angle(const Quat& q);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Color> colors;  // empty or points.size()
  std::string frame;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

// Throws kParameter when colors and points disagree in length or a point is
// not finite.
void check_cloud(const PointCloud& cloud);

PointCloud apply(const RigidTransform& t, const PointCloud& cloud);
std::vector<Vec3> apply(const RigidTransform& t, std::span<const Vec3> points);

// Least-squares rigid alignment (no scale) taking src onto dst. Reflections
// are excluded through the determinant correction on the cross-covariance
// SVD.
RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst,
                      std::string from_frame = {}, std::string to_frame = {});

// Root-mean-square of |t * src[i] - dst[i]| in meters.
double residual_rms(const RigidTransform& t, std::span<const Vec3> src,
                    std::span<const Vec3> dst);

struct PlaneFrame {
  Vec3 origin = Vec3::Zero();
  Vec3 x_axis = Vec3::UnitX();
  Vec3 y_axis = Vec3::UnitY();
  Vec3 z_axis = Vec3::UnitZ();  // plane normal
};

// Centroid plus principal axes in descending variance order. The sign of
// the axes is normalized so that z has a non-negative z component (ties on
// x, then y) and x has its largest-magnitude component positive.
PlaneFrame fit_plane_pca(std::span<const Vec3> points);

// Floor frame from floor inlier points, returned as the transform taking
// the input frame into the floor frame (origin at the floor centroid, z up).
// When `non_floor_points` is non-empty, z is flipped to point toward their
// centroid and x is flipped to have a non-negative dot product with the
// in-plane offset of that centroid. Otherwise the fit_plane_pca sign
// convention is kept.
RigidTransform build_floor_frame(std::span<const Vec3> floor_points,
                                 std::span<const Vec3> non_floor_points = {},
                                 std::string from_frame = {},
                                 std::string to_frame = kReferenceFrame);

struct PlaneSegmentationParams {
  double inlier_threshold_m = 0.010;
  int iterations = 1000;
  std::uint64_t seed = 0x5eedf100aULL;
};

// RANSAC plane detection. Returns indices of the largest inlier set found.
std::vector<std::size_t> segment_plane(std::span<const Vec3> points,
                                       const PlaneSegmentationParams& params = {});

}  // namespace twinfuse
