#include "twinfuse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "twinfuse/error.hpp"

namespace twinfuse {

bool is_finite(const Vec3& v) { return v.allFinite(); }

RigidTransform::RigidTransform(const Quat& rotation, const Vec3& translation,
                               std::string from_frame, std::string to_frame)
    : rotation_(rotation.normalized()),
      translation_(translation),
      from_frame_(std::move(from_frame)),
      to_frame_(std::move(to_frame)) {}

RigidTransform RigidTransform::identity(std::string from_frame,
                                        std::string to_frame) {
  return RigidTransform(Quat::Identity(), Vec3::Zero(), std::move(from_frame),
                        std::move(to_frame));
}

RigidTransform RigidTransform::translation_only(const Vec3& t,
                                                std::string from_frame,
                                                std::string to_frame) {
  return RigidTransform(Quat::Identity(), t, std::move(from_frame),
                        std::move(to_frame));
}

RigidTransform RigidTransform::from_matrix(const Mat3& rotation, const Vec3& t,
                                           std::string from_frame,
                                           std::string to_frame) {
  return RigidTransform(Quat(rotation), t, std::move(from_frame),
                        std::move(to_frame));
}

RigidTransform RigidTransform::unchecked(const Quat& rotation, const Vec3& t,
                                         std::string from_frame,
                                         std::string to_frame) {
  RigidTransform out;
  out.rotation_ = rotation;
  out.translation_ = t;
  out.from_frame_ = std::move(from_frame);
  out.to_frame_ = std::move(to_frame);
  return out;
}

RigidTransform RigidTransform::with_frames(std::string from_frame,
                                           std::string to_frame) const {
  RigidTransform out = *this;
  out.from_frame_ = std::move(from_frame);
  out.to_frame_ = std::move(to_frame);
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  return rotation_.coeffs().allFinite() && translation_.allFinite() &&
         std::abs(rotation_.norm() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  if (a.from_frame() != b.to_frame()) {
    throw Error(ErrorCode::kFrameMismatch,
                "cannot compose '" + a.from_frame() + "'->'" + a.to_frame() +
                    "' after '" + b.from_frame() + "'->'" + b.to_frame() + "'");
  }
  return RigidTransform(a.rotation() * b.rotation(),
                        a.rotation() * b.translation() + a.translation(),
                        b.from_frame(), a.to_frame());
}

RigidTransform invert(const RigidTransform& t) {
  const Quat inv = t.rotation().conjugate();
  return RigidTransform(inv, -(inv * t.translation()), t.to_frame(),
                        t.from_frame());
}

double rotation_angle(const Quat& q) {
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

double rotation_angle_between(const RigidTransform& a,
                              const RigidTransform& b) {
  return rotation_angle(a.rotation().normalized() *
                        b.rotation().normalized().conjugate());
}

void check_cloud(const PointCloud& cloud) {
  if (!cloud.colors.empty() && cloud.colors.size() != cloud.points.size()) {
    throw Error(ErrorCode::kParameter,
                "cloud has " + std::to_string(cloud.colors.size()) +
                    " colors for " + std::to_string(cloud.points.size()) +
                    " points");
  }
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (!is_finite(cloud.points[i])) {
      throw Error(ErrorCode::kParameter,
                  "non-finite point at index " + std::to_string(i));
    }
  }
}

std::vector<Vec3> apply(const RigidTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  const Mat3 r = t.rotation_matrix();
  for (const Vec3& p : points) out.push_back(r * p + t.translation());
  return out;
}

PointCloud apply(const RigidTransform& t, const PointCloud& cloud) {
  if (cloud.frame != t.from_frame()) {
    throw Error(ErrorCode::kFrameMismatch,
                "cloud in frame '" + cloud.frame + "' but transform maps '" +
                    t.from_frame() + "'");
  }
  PointCloud out;
  out.points = apply(t, std::span<const Vec3>(cloud.points));
  out.colors = cloud.colors;
  out.frame = t.to_frame();
  return out;
}

namespace {

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  return c / static_cast<double>(points.size());
}

// Eigenvalues ascending, eigenvectors as columns.
Eigen::SelfAdjointEigenSolver<Mat3> covariance_eigen(std::span<const Vec3> points,
                                                     const Vec3& mean) {
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) {
    const Vec3 d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  return Eigen::SelfAdjointEigenSolver<Mat3>(cov);
}

// Relative threshold on the second-largest covariance eigenvalue below which
// a point set is treated as collinear.
constexpr double kRankTolerance = 1e-12;

bool rank_below_two(const Eigen::Vector3d& eigenvalues_ascending) {
  const double largest = eigenvalues_ascending(2);
  return largest <= 0.0 || eigenvalues_ascending(1) <= kRankTolerance * largest;
}

}  // namespace

RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst,
                      std::string from_frame, std::string to_frame) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kParameter,
                "kabsch needs equal-length inputs, got " +
                    std::to_string(src.size()) + " and " +
                    std::to_string(dst.size()));
  }
  if (src.size() < 3) {
    throw Error(ErrorCode::kInsufficientCorrespondences,
                "kabsch needs at least 3 correspondences, got " +
                    std::to_string(src.size()));
  }
  const Vec3 src_mean = centroid(src);
  const Vec3 dst_mean = centroid(dst);
  if (rank_below_two(covariance_eigen(src, src_mean).eigenvalues())) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "source points are collinear or coincident");
  }

  Mat3 cross = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cross += (src[i] - src_mean) * (dst[i] - dst_mean).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 correction = Mat3::Identity();
  correction(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = v * correction * u.transpose();
  return RigidTransform::from_matrix(r, dst_mean - r * src_mean,
                                     std::move(from_frame),
                                     std::move(to_frame));
}

double residual_rms(const RigidTransform& t, std::span<const Vec3> src,
                    std::span<const Vec3> dst) {
  if (src.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    sum += (t * src[i] - dst[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(src.size()));
}

namespace {

// Flip `axis` so that its first component with magnitude above `eps`,
// scanning in `order`, is positive.
Vec3 canonical_sign(const Vec3& axis, std::array<int, 3> order) {
  constexpr double kEps = 1e-12;
  for (int k : order) {
    if (std::abs(axis(k)) > kEps) return axis(k) < 0.0 ? -axis : axis;
  }
  return axis;
}

}  // namespace

PlaneFrame fit_plane_pca(std::span<const Vec3> points) {
  if (points.size() < 3) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "plane fit needs at least 3 points, got " +
                    std::to_string(points.size()));
  }
  PlaneFrame frame;
  frame.origin = centroid(points);
  const auto eig = covariance_eigen(points, frame.origin);
  if (rank_below_two(eig.eigenvalues())) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "plane fit on collinear or coincident points");
  }
  const Mat3& vecs = eig.eigenvectors();
  frame.z_axis = canonical_sign(vecs.col(0).normalized(), {2, 0, 1});
  Vec3 x = vecs.col(2).normalized();
  Eigen::Index largest = 0;
  x.cwiseAbs().maxCoeff(&largest);
  if (x(largest) < 0.0) x = -x;
  frame.x_axis = x;
  frame.y_axis = frame.z_axis.cross(frame.x_axis).normalized();
  return frame;
}

RigidTransform build_floor_frame(std::span<const Vec3> floor_points,
                                 std::span<const Vec3> non_floor_points,
                                 std::string from_frame, std::string to_frame) {
  PlaneFrame frame = fit_plane_pca(floor_points);
  if (!non_floor_points.empty()) {
    const Vec3 offset = centroid(non_floor_points) - frame.origin;
    if (offset.dot(frame.z_axis) < 0.0) frame.z_axis = -frame.z_axis;
    const Vec3 horizontal = offset - offset.dot(frame.z_axis) * frame.z_axis;
    if (horizontal.dot(frame.x_axis) < 0.0) frame.x_axis = -frame.x_axis;
    frame.y_axis = frame.z_axis.cross(frame.x_axis).normalized();
  }
  Mat3 axes;
  axes.col(0) = frame.x_axis;
  axes.col(1) = frame.y_axis;
  axes.col(2) = frame.z_axis;
  // floor_from_input: p_floor = axes^T (p - origin)
  const Mat3 r = axes.transpose();
  return RigidTransform::from_matrix(r, -(r * frame.origin),
                                     std::move(from_frame),
                                     std::move(to_frame));
}

std::vector<std::size_t> segment_plane(std::span<const Vec3> points,
                                       const PlaneSegmentationParams& params) {
  if (points.size() < 3) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "plane segmentation needs at least 3 points");
  }
  if (params.iterations < 1 || !(params.inlier_threshold_m > 0.0)) {
    throw Error(ErrorCode::kParameter, "invalid plane segmentation parameters");
  }
  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);

  std::size_t best_count = 0;
  Vec3 best_normal = Vec3::Zero();
  double best_offset = 0.0;
  for (int it = 0; it < params.iterations; ++it) {
    const Vec3& a = points[pick(rng)];
    const Vec3& b = points[pick(rng)];
    const Vec3& c = points[pick(rng)];
    Vec3 n = (b - a).cross(c - a);
    const double len = n.norm();
    if (len < 1e-12) continue;
    n /= len;
    const double offset = -n.dot(a);
    std::size_t count = 0;
    for (const Vec3& p : points) {
      if (std::abs(n.dot(p) + offset) <= params.inlier_threshold_m) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_normal = n;
      best_offset = offset;
    }
  }
  if (best_count < 3) {
    throw Error(ErrorCode::kDegenerateGeometry, "no plane found");
  }
  auto select = [&](const Vec3& n, double offset) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (std::abs(n.dot(points[i]) + offset) <= params.inlier_threshold_m) out.push_back(i);
    }
    return out;
  };
  // A plane through three noisy samples is slightly tilted, which trims the
  // far side of a large floor. Refit to the inliers until the set settles.
  std::vector<std::size_t> inliers = select(best_normal, best_offset);
  for (int round = 0; round < 10; ++round) {
    std::vector<Vec3> subset;
    subset.reserve(inliers.size());
    for (std::size_t i : inliers) subset.push_back(points[i]);
    const PlaneFrame fit = fit_plane_pca(subset);
    std::vector<std::size_t> next = select(fit.z_axis, -fit.z_axis.dot(fit.origin));
    if (next.size() < inliers.size() || next == inliers) break;
    inliers = std::move(next);
  }
  return inliers;
}

}  // namespace twinfuse
