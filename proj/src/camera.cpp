#include "twinfuse/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "twinfuse/json_io.hpp"

namespace twinfuse {

void check_intrinsics(const CameraIntrinsics& intr) {
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) {
    throw Error(ErrorCode::kParameter, "focal lengths must be positive");
  }
  if (intr.width <= 0 || intr.height <= 0) {
    throw Error(ErrorCode::kParameter, "image size must be positive");
  }
  if (!(intr.cx >= 0.0 && intr.cx < intr.width && intr.cy >= 0.0 &&
        intr.cy < intr.height)) {
    throw Error(ErrorCode::kParameter, "principal point outside the image");
  }
  for (double d : intr.distortion) {
    if (!std::isfinite(d)) throw Error(ErrorCode::kParameter, "non-finite distortion");
  }
}

namespace {

struct DistortionEval {
  Eigen::Vector2d value;
  Eigen::Matrix2d jacobian;  // d(distorted)/d(undistorted)
};

DistortionEval distort_with_jacobian(const CameraIntrinsics& intr,
                                     const Eigen::Vector2d& xy) {
  const auto& [k1, k2, p1, p2, k3] = intr.distortion;
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  const double dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
  DistortionEval out;
  out.value.x() = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
  out.value.y() = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
  out.jacobian(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x;
  out.jacobian(0, 1) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
  out.jacobian(1, 0) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
  out.jacobian(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x;
  return out;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

}  // namespace

Eigen::Vector2d distort(const CameraIntrinsics& intr, const Eigen::Vector2d& xy) {
  return distort_with_jacobian(intr, xy).value;
}

Pixel project_camera_point(const CameraIntrinsics& intr, const Vec3& p,
                           Eigen::Matrix<double, 2, 3>* jacobian) {
  if (!(p.z() > 0.0)) {
    throw Error(ErrorCode::kBehindCamera,
                "point has non-positive depth " + std::to_string(p.z()));
  }
  const double inv_z = 1.0 / p.z();
  const Eigen::Vector2d xy(p.x() * inv_z, p.y() * inv_z);
  const DistortionEval d = distort_with_jacobian(intr, xy);
  const Pixel uv(intr.fx * d.value.x() + intr.cx, intr.fy * d.value.y() + intr.cy);
  if (jacobian != nullptr) {
    Eigen::Matrix<double, 2, 3> dxy;
    dxy << inv_z, 0.0, -xy.x() * inv_z, 0.0, inv_z, -xy.y() * inv_z;
    Eigen::Matrix2d focal = Eigen::Matrix2d::Zero();
    focal(0, 0) = intr.fx;
    focal(1, 1) = intr.fy;
    *jacobian = focal * d.jacobian * dxy;
  }
  return uv;
}

Pixel project(const CameraModel& cam, const Vec3& p_world) {
  return project_camera_point(cam.intrinsics, invert(cam.world_from_camera) * p_world);
}

Eigen::Vector2d undistort(const CameraIntrinsics& intr, const Pixel& uv) {
  const Eigen::Vector2d target((uv.x() - intr.cx) / intr.fx, (uv.y() - intr.cy) / intr.fy);
  Eigen::Vector2d xy = target;
  for (int it = 0; it < 50; ++it) {
    const DistortionEval d = distort_with_jacobian(intr, xy);
    const Eigen::Vector2d err = d.value - target;
    if (err.squaredNorm() < 1e-30) break;
    const Eigen::Vector2d step = d.jacobian.partialPivLu().solve(err);
    xy -= step;
    if (step.squaredNorm() < 1e-32) break;
  }
  return xy;
}

Vec3 unproject(const CameraModel& cam, const Pixel& uv, double depth) {
  const Eigen::Vector2d xy = undistort(cam.intrinsics, uv);
  return cam.world_from_camera * Vec3(xy.x() * depth, xy.y() * depth, depth);
}

namespace {

// camera_from_world pose as (R, t).
struct Pose {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

// Sum of squared pixel residuals; +inf if any point falls behind the camera.
double reprojection_cost(const Pose& pose, std::span<const Vec3> points,
                         std::span<const Pixel> pixels, const CameraIntrinsics& intr) {
  double cost = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 pc = pose.r * points[i] + pose.t;
    if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    cost += (project_camera_point(intr, pc) - pixels[i]).squaredNorm();
  }
  return cost;
}

Pose dlt_pose(std::span<const Vec3> points, std::span<const Pixel> pixels,
              const CameraIntrinsics& intr) {
  const std::size_t n = points.size();
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  double spread = 0.0;
  for (const Vec3& p : points) {
    cov += (p - centroid) * (p - centroid).transpose();
    spread += (p - centroid).norm();
  }
  spread /= static_cast<double>(n);
  const Eigen::Vector3d eig = Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues();
  if (!(spread > 0.0) || eig(0) <= 1e-10 * eig(2)) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "PnP points are coplanar or collinear; DLT needs a 3D configuration");
  }
  const double scale = spread / std::sqrt(3.0);

  Eigen::MatrixXd a(2 * n, 12);
  a.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d xy = undistort(intr, pixels[i]);
    Eigen::Vector4d h;
    h << (points[i] - centroid) / scale, 1.0;
    const auto row = static_cast<Eigen::Index>(2 * i);
    a.block<1, 4>(row, 0) = h.transpose();
    a.block<1, 4>(row, 8) = -xy.x() * h.transpose();
    a.block<1, 4>(row + 1, 4) = h.transpose();
    a.block<1, 4>(row + 1, 8) = -xy.y() * h.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv(10) <= 1e-12 * sv(0)) {
    throw Error(ErrorCode::kDegenerateGeometry, "DLT system has a degenerate null space");
  }
  const Eigen::VectorXd v = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> p_norm;
  p_norm << v.segment<4>(0).transpose(), v.segment<4>(4).transpose(),
      v.segment<4>(8).transpose();
  // Undo the point normalization: X_norm = (X - c) / s.
  Mat3 m = p_norm.leftCols<3>() / scale;
  Vec3 p4 = p_norm.col(3) - m * centroid;
  if (m.determinant() < 0.0) {
    m = -m;
    p4 = -p4;
  }
  Eigen::JacobiSVD<Mat3> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Pose pose;
  pose.r = msvd.matrixU() * msvd.matrixV().transpose();
  pose.t = p4 / msvd.singularValues().mean();
  return pose;
}

}  // namespace

PnpResult solve_pnp(std::span<const Vec3> points, std::span<const Pixel> pixels,
                    const CameraIntrinsics& intr, const PnpOptions& options,
                    std::string camera_frame, std::string world_frame) {
  if (points.size() != pixels.size()) {
    throw Error(ErrorCode::kParameter, "PnP needs one pixel per 3D point");
  }
  if (points.size() < 6) {
    throw Error(ErrorCode::kInsufficientCorrespondences,
                "PnP needs at least 6 correspondences, got " + std::to_string(points.size()));
  }
  check_intrinsics(intr);

  Pose pose = dlt_pose(points, pixels, intr);
  double cost = reprojection_cost(pose, points, pixels, intr);
  auto to_result_pose = [&](const Pose& p) {
    return invert(RigidTransform::from_matrix(p.r, p.t, world_frame, camera_frame));
  };
  if (!std::isfinite(cost)) {
    throw PnpConvergenceError("DLT initialization places points behind the camera",
                              to_result_pose(pose));
  }

  PnpResult result;
  result.cost_trace.push_back(cost);
  const double initial_cost = cost;
  double lambda = 1e-3;
  bool converged = false;
  const std::size_t n = points.size();
  Eigen::MatrixXd jac(2 * n, 6);
  Eigen::VectorXd res(2 * n);

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (cost < 1e-24) {
      converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 rotated = pose.r * points[i];
      const Vec3 pc = rotated + pose.t;
      Eigen::Matrix<double, 2, 3> d_uv;
      const Pixel uv = project_camera_point(intr, pc, &d_uv);
      const auto row = static_cast<Eigen::Index>(2 * i);
      res.segment<2>(row) = uv - pixels[i];
      // Left perturbation R <- exp(w) R, t <- t + dt.
      jac.block<2, 3>(row, 0) = d_uv * (-skew(rotated));
      jac.block<2, 3>(row, 3) = d_uv;
    }
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> jtr = jac.transpose() * res;

    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::Matrix<double, 6, 6> damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-jtr);
      Pose candidate;
      candidate.r = exp_so3(step.head<3>()) * pose.r;
      candidate.t = pose.t + step.tail<3>();
      const double candidate_cost = reprojection_cost(candidate, points, pixels, intr);
      if (candidate_cost < cost) {
        const double improvement = cost - candidate_cost;
        pose = candidate;
        cost = candidate_cost;
        result.cost_trace.push_back(cost);
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (improvement < options.min_improvement_px2) converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) {
      // No descent direction left at any damping: a stationary point.
      converged = true;
    }
    if (converged) {
      ++it;
      break;
    }
  }
  result.iterations = it;
  result.world_from_camera = to_result_pose(pose);
  if (!converged && !(cost < initial_cost)) {
    throw PnpConvergenceError("reprojection error did not decrease in " +
                                  std::to_string(options.max_iterations) + " iterations",
                              result.world_from_camera);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += (project_camera_point(intr, pose.r * points[i] + pose.t) - pixels[i]).norm();
  }
  result.mean_reprojection_px = sum / static_cast<double>(n);
  return result;
}

const CameraModel& find_camera(std::span<const CameraModel> cameras, const std::string& id) {
  for (const CameraModel& c : cameras) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::kReference, "unknown camera '" + id + "'");
}

Triangulation triangulate(std::span<const PixelObservation> observations,
                          std::span<const CameraModel> cameras,
                          const TriangulationOptions& options) {
  struct View {
    const CameraModel* cam;
    Pose pose;  // camera_from_world
    Pixel uv;
    double weight;
    Vec3 ray_world;
  };
  std::vector<View> views;
  std::set<std::string> distinct;
  for (const PixelObservation& obs : observations) {
    if (!(obs.confidence >= options.min_confidence)) continue;
    const CameraModel& cam = find_camera(cameras, obs.camera_id);
    const RigidTransform cfw = invert(cam.world_from_camera);
    View v{&cam, {cfw.rotation_matrix(), cfw.translation()}, obs.uv, obs.confidence, {}};
    const Eigen::Vector2d xy = undistort(cam.intrinsics, obs.uv);
    v.ray_world = (cam.world_from_camera.rotation_matrix() * Vec3(xy.x(), xy.y(), 1.0)).normalized();
    views.push_back(v);
    distinct.insert(obs.camera_id);
  }
  if (distinct.size() < 2) {
    throw Error(ErrorCode::kInsufficientViews,
                "triangulation needs observations from at least 2 cameras, got " +
                    std::to_string(distinct.size()));
  }
  double max_angle = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (std::size_t j = i + 1; j < views.size(); ++j) {
      const double c = std::clamp(views[i].ray_world.dot(views[j].ray_world), -1.0, 1.0);
      max_angle = std::max(max_angle, std::acos(c));
    }
  }
  if (max_angle < options.min_ray_angle_rad) {
    throw Error(ErrorCode::kDegenerateGeometry, "viewing rays are nearly parallel");
  }

  Eigen::MatrixXd a(2 * views.size(), 4);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const View& v = views[i];
    const Eigen::Vector2d xy = undistort(v.cam->intrinsics, v.uv);
    Eigen::Matrix<double, 3, 4> p;
    p << v.pose.r, v.pose.t;
    const auto row = static_cast<Eigen::Index>(2 * i);
    a.row(row) = v.weight * (xy.x() * p.row(2) - p.row(0));
    a.row(row + 1) = v.weight * (xy.y() * p.row(2) - p.row(1));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14 * h.head<3>().norm()) {
    throw Error(ErrorCode::kDegenerateGeometry, "triangulated point at infinity");
  }
  Vec3 x = h.head<3>() / h(3);

  auto weighted_cost = [&](const Vec3& p) {
    double c = 0.0;
    for (const View& v : views) {
      const Vec3 pc = v.pose.r * p + v.pose.t;
      if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
      c += v.weight * (project_camera_point(v.cam->intrinsics, pc) - v.uv).squaredNorm();
    }
    return c;
  };
  double cost = weighted_cost(x);
  if (!std::isfinite(cost)) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "triangulated point lies behind an observing camera");
  }
  for (int it = 0; it < options.max_iterations && cost > 0.0; ++it) {
    Mat3 jtj = Mat3::Zero();
    Vec3 jtr = Vec3::Zero();
    for (const View& v : views) {
      Eigen::Matrix<double, 2, 3> d_uv;
      const Pixel uv = project_camera_point(v.cam->intrinsics, v.pose.r * x + v.pose.t, &d_uv);
      const Eigen::Matrix<double, 2, 3> j = d_uv * v.pose.r;
      jtj += v.weight * j.transpose() * j;
      jtr += v.weight * j.transpose() * (uv - v.uv);
    }
    const Vec3 step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    // Halve until the weighted cost does not increase.
    double t = 1.0;
    bool improved = false;
    for (int k = 0; k < 20; ++k, t *= 0.5) {
      const Vec3 cand = x + t * step;
      const double c = weighted_cost(cand);
      if (c <= cost) {
        improved = c < cost;
        x = cand;
        cost = c;
        break;
      }
    }
    if (!improved || step.norm() < 1e-14 * (1.0 + x.norm())) break;
  }

  Triangulation out;
  out.point = x;
  out.views_used = views.size();
  double wsum = 0.0;
  double rsum = 0.0;
  for (const View& v : views) {
    const double e = (project_camera_point(v.cam->intrinsics, v.pose.r * x + v.pose.t) - v.uv).norm();
    rsum += v.weight * e;
    wsum += v.weight;
  }
  out.residual_px = rsum / wsum;
  return out;
}

namespace {

struct SpeedProfile {
  std::vector<double> t;
  std::vector<double> speed;

  double first() const { return t.front(); }
  double last() const { return t.back(); }

  double at(double time) const {
    auto it = std::upper_bound(t.begin(), t.end(), time);
    if (it == t.begin()) return speed.front();
    if (it == t.end()) return speed.back();
    const auto hi = static_cast<std::size_t>(it - t.begin());
    const std::size_t lo = hi - 1;
    const double w = (time - t[lo]) / (t[hi] - t[lo]);
    return (1.0 - w) * speed[lo] + w * speed[hi];
  }
};

SpeedProfile speed_profile(std::span<const TimedPosition> track, const char* name) {
  SpeedProfile out;
  for (std::size_t i = 0; i + 1 < track.size(); ++i) {
    const double dt = track[i + 1].t - track[i].t;
    if (!(dt > 0.0)) {
      throw Error(ErrorCode::kParameter,
                  std::string(name) + " timestamps must be strictly increasing");
    }
    out.t.push_back(0.5 * (track[i].t + track[i + 1].t));
    out.speed.push_back((track[i + 1].position - track[i].position).norm() / dt);
  }
  return out;
}

double median_interval(std::span<const TimedPosition> track) {
  std::vector<double> dts;
  for (std::size_t i = 0; i + 1 < track.size(); ++i) dts.push_back(track[i + 1].t - track[i].t);
  std::nth_element(dts.begin(), dts.begin() + static_cast<std::ptrdiff_t>(dts.size() / 2), dts.end());
  return dts[dts.size() / 2];
}

double stddev(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

TimeOffsetResult estimate_time_offset(std::span<const TimedPosition> track_a,
                                      std::span<const TimedPosition> track_b,
                                      const TimeOffsetOptions& options) {
  for (auto [track, name] : {std::pair{track_a, "track_a"}, std::pair{track_b, "track_b"}}) {
    if (track.size() < 3 || track.back().t - track.front().t < 2.0) {
      throw Error(ErrorCode::kParameter, std::string(name) + " must span at least 2 s");
    }
  }
  const SpeedProfile a = speed_profile(track_a, "track_a");
  const SpeedProfile b = speed_profile(track_b, "track_b");

  TimeOffsetResult result;
  constexpr double kMotionless = 1e-9;
  if (stddev(a.speed) < kMotionless || stddev(b.speed) < kMotionless) {
    result.ambiguous = true;
    return result;
  }

  const double interval = std::min(median_interval(track_a), median_interval(track_b));
  const double step = 0.5 * interval;
  const int range = static_cast<int>(std::floor(options.max_offset_s / step));
  bool found = false;
  double best_cost = std::numeric_limits<double>::infinity();
  double best_offset = 0.0;
  // Candidates ordered by |offset| so that ties keep the smaller shift.
  for (int m = 0; m <= 2 * range; ++m) {
    const int k = (m % 2 == 0) ? -(m / 2) : (m + 1) / 2;
    const double offset = k * step;
    const double lo = std::max(a.first(), b.first() + offset);
    const double hi = std::min(a.last(), b.last() + offset);
    if (hi - lo < options.min_overlap_s) continue;
    const auto samples = static_cast<int>(std::floor((hi - lo) / interval)) + 1;
    double cost = 0.0;
    for (int s = 0; s < samples; ++s) {
      const double tau = lo + s * interval;
      cost += std::abs(a.at(tau) - b.at(tau - offset));
    }
    cost /= samples;
    if (cost < best_cost) {
      best_cost = cost;
      best_offset = offset;
      found = true;
    }
  }
  if (!found) {
    throw Error(ErrorCode::kNoOverlap, "tracks do not overlap at any candidate offset");
  }
  result.offset_s = best_offset;
  result.cost = best_cost;
  return result;
}

CameraModel read_camera(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  const std::string ctx = path.string();
  CameraModel cam;
  cam.id = json_get<std::string>(j, "id", ctx);
  CameraIntrinsics& in = cam.intrinsics;
  in.width = json_get<int>(j, "width", ctx);
  in.height = json_get<int>(j, "height", ctx);
  in.fx = json_get<double>(j, "fx", ctx);
  in.fy = json_get<double>(j, "fy", ctx);
  in.cx = json_get<double>(j, "cx", ctx);
  in.cy = json_get<double>(j, "cy", ctx);
  if (j.contains("dist")) {
    const auto dist = json_get<std::vector<double>>(j, "dist", ctx);
    if (dist.size() != 5) {
      throw Error(ErrorCode::kParse, ctx + ".dist: expected 5 coefficients");
    }
    std::copy(dist.begin(), dist.end(), in.distortion.begin());
  }
  try {
    check_intrinsics(in);
  } catch (const Error& e) {
    throw Error(ErrorCode::kParse, ctx + ": " + e.what());
  }
  cam.world_from_camera =
      j.contains("world_from_camera")
          ? transform_from_json(j["world_from_camera"], ctx + ".world_from_camera", cam.id,
                                kReferenceFrame)
          : RigidTransform::identity(cam.id, kReferenceFrame);
  return cam;
}

void write_camera(const std::filesystem::path& path, const CameraModel& cam) {
  const CameraIntrinsics& in = cam.intrinsics;
  Json j{{"id", cam.id},
         {"width", in.width},
         {"height", in.height},
         {"fx", in.fx},
         {"fy", in.fy},
         {"cx", in.cx},
         {"cy", in.cy},
         {"dist", std::vector<double>(in.distortion.begin(), in.distortion.end())},
         {"world_from_camera", transform_to_json(cam.world_from_camera)}};
  write_json_file(path, j);
}

}  // namespace twinfuse
