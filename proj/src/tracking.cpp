#include "twinfuse/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "twinfuse/json_io.hpp"
#include "twinfuse/kdtree.hpp"

namespace twinfuse {

void check_marker_array(const MarkerArrayGeometry& array) {
  check_marker_set(array.markers);
  if (array.markers.size() < 3) {
    throw Error(ErrorCode::kParameter, "marker array needs at least 3 markers");
  }
  if (!(array.radius_m > 0.0)) throw Error(ErrorCode::kParameter, "marker radius must be positive");
  const auto& m = array.markers.markers;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      if ((m[i].position - m[j].position).norm() <= 2.0 * array.radius_m) {
        throw Error(ErrorCode::kParameter,
                    "markers '" + m[i].id + "' and '" + m[j].id + "' overlap");
      }
    }
  }
}

MarkerArrayGeometry read_marker_array(const std::filesystem::path& path) {
  MarkerArrayGeometry array;
  array.markers = read_marker_set(path);
  const Json j = read_json_file(path);
  if (j.contains("radius_m")) array.radius_m = json_get<double>(j, "radius_m", path.string());
  check_marker_array(array);
  return array;
}

void write_marker_array(const std::filesystem::path& path, const MarkerArrayGeometry& array) {
  Json markers = Json::array();
  for (const Marker& m : array.markers.markers) {
    markers.push_back({{"id", m.id}, {"position_m", vec3_to_json(m.position)}});
  }
  write_json_file(path, Json{{"frame", array.markers.frame},
                             {"radius_m", array.radius_m},
                             {"markers", markers}});
}

void check_pose_track(const PoseTrack& track) {
  for (std::size_t i = 0; i < track.samples.size(); ++i) {
    const PoseSample& s = track.samples[i];
    if (!std::isfinite(s.t)) throw Error(ErrorCode::kParameter, "non-finite timestamp");
    if (i > 0 && !(s.t > track.samples[i - 1].t)) {
      throw Error(ErrorCode::kParameter,
                  "timestamps not strictly increasing at sample " + std::to_string(i));
    }
    if (!s.pose.is_valid()) {
      throw Error(ErrorCode::kParameter, "invalid pose at sample " + std::to_string(i));
    }
  }
}

namespace {

constexpr const char* kTrackHeader = "t_s,tx_m,ty_m,tz_m,qw,qx,qy,qz";

}  // namespace

PoseTrack read_pose_track(std::istream& in, std::string frame, std::string node_frame,
                          const std::string& context) {
  PoseTrack track;
  track.frame = std::move(frame);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParse, context + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTrackHeader) {
    throw Error(ErrorCode::kParse, context + ":1: expected header '" + std::string(kTrackHeader) + "'");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 8) {
      throw Error(ErrorCode::kParse,
                  context + ":" + std::to_string(line_no) + ": expected 8 columns");
    }
    double v[8];
    for (int k = 0; k < 8; ++k) {
      try {
        std::size_t used = 0;
        v[k] = std::stod(cells[k], &used);
        if (used != cells[k].size()) throw std::invalid_argument(cells[k]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse, context + ":" + std::to_string(line_no) +
                                           ": bad number in column " + std::to_string(k + 1));
      }
    }
    track.samples.push_back({v[0], RigidTransform::unchecked(Quat(v[4], v[5], v[6], v[7]),
                                                             Vec3(v[1], v[2], v[3]), node_frame,
                                                             track.frame)});
  }
  return track;
}

PoseTrack read_pose_track(const std::filesystem::path& path, std::string frame,
                          std::string node_frame) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return read_pose_track(in, std::move(frame), std::move(node_frame), path.string());
}

void write_pose_track(std::ostream& out, const PoseTrack& track) {
  out << kTrackHeader << '\n';
  std::ostringstream row;
  row.precision(17);
  for (const PoseSample& s : track.samples) {
    const Vec3& t = s.pose.translation();
    const Quat& q = s.pose.rotation();
    row.str({});
    row << s.t << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.w() << ',' << q.x()
        << ',' << q.y() << ',' << q.z() << '\n';
    out << row.str();
  }
  if (!out) throw Error(ErrorCode::kIo, "pose track write failed");
}

void write_pose_track(const std::filesystem::path& path, const PoseTrack& track) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_pose_track(out, track);
}

namespace {

double sphere_cost(std::span<const Vec3> points, const Vec3& c, double r) {
  double cost = 0.0;
  for (const Vec3& p : points) {
    const double e = (p - c).norm() - r;
    cost += e * e;
  }
  return cost;
}

// Gauss-Newton with step halving from one starting point.
SphereFit refine_sphere(std::span<const Vec3> points, double r, Vec3 c) {
  SphereFit fit;
  double cost = sphere_cost(points, c, r);
  int it = 0;
  for (; it < 100; ++it) {
    Mat3 jtj = Mat3::Zero();
    Vec3 jtr = Vec3::Zero();
    for (const Vec3& p : points) {
      const Vec3 d = p - c;
      const double len = d.norm();
      if (len < 1e-300) continue;
      const Vec3 j = -d / len;
      jtj += j * j.transpose();
      jtr += j * (len - r);
    }
    const Vec3 step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    double scale = 1.0;
    bool moved = false;
    for (int k = 0; k < 30; ++k, scale *= 0.5) {
      const Vec3 cand = c + scale * step;
      const double cand_cost = sphere_cost(points, cand, r);
      if (cand_cost <= cost) {
        moved = cand_cost < cost;
        c = cand;
        cost = cand_cost;
        break;
      }
    }
    if (!moved || step.norm() <= 1e-13 * r) {
      ++it;
      break;
    }
  }
  fit.center = c;
  fit.rms_residual_m = std::sqrt(cost / static_cast<double>(points.size()));
  fit.iterations = it;
  return fit;
}

}  // namespace

SphereFit fit_sphere_fixed_radius(std::span<const Vec3> points, double radius_m) {
  if (points.size() < 4) {
    throw Error(ErrorCode::kParameter, "sphere fit needs at least 4 points, got " +
                                           std::to_string(points.size()));
  }
  if (!(radius_m > 0.0)) throw Error(ErrorCode::kParameter, "sphere radius must be positive");

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) cov += (p - centroid) * (p - centroid).transpose();
  const Vec3 normal = Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvectors().col(0);

  // A cap's surface centroid sits inside the sphere, offset toward the
  // center along the cap axis; try both sides of the cap and the centroid.
  const std::array<Vec3, 3> starts = {centroid - 0.5 * radius_m * normal,
                                      centroid + 0.5 * radius_m * normal, centroid};
  SphereFit best;
  best.rms_residual_m = std::numeric_limits<double>::infinity();
  for (const Vec3& start : starts) {
    const SphereFit fit = refine_sphere(points, radius_m, start);
    if (fit.rms_residual_m < best.rms_residual_m) best = fit;
  }
  if (!best.center.allFinite() || !std::isfinite(best.rms_residual_m)) {
    throw Error(ErrorCode::kConvergence, "sphere fit diverged");
  }
  return best;
}

ArrayRegistration register_marker_array(std::span<const Vec3> scan_centers,
                                        const MarkerArrayGeometry& array, double tolerance_m,
                                        std::string model_frame) {
  check_marker_array(array);
  const auto& model = array.markers.markers;
  const std::size_t n = model.size();
  if (scan_centers.size() != n) {
    throw Error(ErrorCode::kParameter, "got " + std::to_string(scan_centers.size()) +
                                           " scanned centers for an array of " + std::to_string(n));
  }

  std::vector<std::vector<std::size_t>> consistent;
  std::vector<std::size_t> assignment;
  std::vector<bool> used(n, false);
  // Depth-first search pruned by pairwise-distance agreement.
  auto search = [&](auto&& self) -> void {
    const std::size_t i = assignment.size();
    if (i == n) {
      consistent.push_back(assignment);
      return;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      bool ok = true;
      for (std::size_t prev = 0; prev < i && ok; ++prev) {
        const double ds = (scan_centers[i] - scan_centers[prev]).norm();
        const double dm = (model[j].position - model[assignment[prev]].position).norm();
        ok = std::abs(ds - dm) <= tolerance_m;
      }
      if (!ok) continue;
      used[j] = true;
      assignment.push_back(j);
      self(self);
      assignment.pop_back();
      used[j] = false;
    }
  };
  search(search);

  std::vector<ArrayRegistration> accepted;
  for (const auto& perm : consistent) {
    std::vector<Vec3> src;
    for (std::size_t j : perm) src.push_back(model[j].position);
    try {
      RigidTransform t = kabsch(src, scan_centers, array.markers.frame, model_frame);
      const double rms = residual_rms(t, src, scan_centers);
      if (rms <= tolerance_m) accepted.push_back({std::move(t), 1000.0 * rms, perm});
    } catch (const Error&) {
      // collinear subsets cannot be aligned; skip
    }
  }
  if (accepted.empty()) {
    throw Error(ErrorCode::kCorrespondence,
                "no marker assignment is consistent with the array's pairwise distances");
  }
  if (accepted.size() > 1) {
    std::vector<std::vector<std::size_t>> candidates;
    std::ostringstream msg;
    msg << accepted.size() << " marker assignments fit equally well:";
    for (const ArrayRegistration& r : accepted) {
      candidates.push_back(r.assignment);
      msg << " [";
      for (std::size_t k = 0; k < r.assignment.size(); ++k) {
        msg << (k ? "," : "") << model[r.assignment[k]].id;
      }
      msg << "]";
    }
    throw MarkerAmbiguityError(msg.str(), std::move(candidates));
  }
  return accepted.front();
}

namespace {

struct Correspondences {
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  double rms = 0.0;
};

Correspondences correspond(const PointCloud& src, const KdTree& index, const PointCloud& dst,
                           const RigidTransform& t, double cutoff) {
  Correspondences c;
  const double cutoff2 = cutoff * cutoff;
  double sum = 0.0;
  const Mat3 r = t.rotation_matrix();
  for (const Vec3& p : src.points) {
    const auto nb = index.nearest(r * p + t.translation());
    if (nb.squared_distance <= cutoff2) {
      c.src.push_back(p);
      c.dst.push_back(dst.points[nb.index]);
      sum += nb.squared_distance;
    }
  }
  if (!c.src.empty()) c.rms = std::sqrt(sum / static_cast<double>(c.src.size()));
  return c;
}

}  // namespace

IcpResult icp(const PointCloud& src, const PointCloud& dst, const RigidTransform& init,
              const IcpParams& params) {
  if (src.empty() || dst.empty()) throw Error(ErrorCode::kParameter, "ICP needs non-empty clouds");
  if (src.frame != init.from_frame() || dst.frame != init.to_frame()) {
    throw Error(ErrorCode::kFrameMismatch, "ICP initial transform maps '" + init.from_frame() +
                                               "'->'" + init.to_frame() + "' but clouds are '" +
                                               src.frame + "' and '" + dst.frame + "'");
  }
  if (params.max_iterations < 1 || !(params.max_correspondence_m > 0.0)) {
    throw Error(ErrorCode::kParameter, "invalid ICP parameters");
  }
  const KdTree index(dst.points);
  IcpResult result;
  result.transform = init;
  Correspondences current = correspond(src, index, dst, init, params.max_correspondence_m);
  if (current.src.empty()) {
    throw Error(ErrorCode::kNoOverlap, "no correspondences within " +
                                           std::to_string(params.max_correspondence_m) +
                                           " m at the initial transform");
  }
  result.rms_trace.push_back(current.rms);

  for (int it = 0; it < params.max_iterations; ++it) {
    result.iterations = it + 1;
    RigidTransform next;
    try {
      next = kabsch(current.src, current.dst, src.frame, dst.frame);
    } catch (const Error&) {
      break;  // too few or collinear inliers to refine further
    }
    Correspondences updated = correspond(src, index, dst, next, params.max_correspondence_m);
    if (updated.src.empty() || updated.rms > current.rms) break;
    const double change = current.rms - updated.rms;
    result.transform = next;
    current = std::move(updated);
    result.rms_trace.push_back(current.rms);
    if (change < params.convergence_m) break;
  }
  result.rms_m = current.rms;
  result.inliers = current.src.size();
  return result;
}

PoseTrack smooth_track(const PoseTrack& track, int window) {
  if (window < 1 || window % 2 == 0) {
    throw Error(ErrorCode::kParameter, "smoothing window must be odd and >= 1, got " +
                                           std::to_string(window));
  }
  if (window == 1) return track;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(track.samples.size());
  PoseTrack out;
  out.frame = track.frame;
  out.samples.reserve(track.samples.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + half);
    const Quat& center = track.samples[static_cast<std::size_t>(i)].pose.rotation();
    Vec3 t_sum = Vec3::Zero();
    Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const RigidTransform& p = track.samples[static_cast<std::size_t>(k)].pose;
      t_sum += p.translation();
      Eigen::Vector4d q = p.rotation().coeffs();
      if (q.dot(center.coeffs()) < 0.0) q = -q;
      q_sum += q;
    }
    const double count = static_cast<double>(hi - lo + 1);
    const PoseSample& src = track.samples[static_cast<std::size_t>(i)];
    Quat mean;
    mean.coeffs() = q_sum;
    out.samples.push_back({src.t, RigidTransform(mean, t_sum / count, src.pose.from_frame(),
                                                 src.pose.to_frame())});
  }
  return out;
}

}  // namespace twinfuse
