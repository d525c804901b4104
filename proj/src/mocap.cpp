#include "twinfuse/mocap.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "twinfuse/error.hpp"
#include "twinfuse/json_io.hpp"

namespace twinfuse {

const Keypoint& PersonKeypoints::joint(std::size_t j) const {
  if (j < kBodyJoints) return body[j];
  if (j < kBodyJoints + kHandJoints) return left_hand[j - kBodyJoints];
  if (j < kSkeletonJoints) return right_hand[j - kBodyJoints - kHandJoints];
  throw Error(ErrorCode::kParameter, "joint index " + std::to_string(j) + " out of range");
}

Keypoint& PersonKeypoints::joint(std::size_t j) {
  return const_cast<Keypoint&>(std::as_const(*this).joint(j));
}

std::vector<std::optional<std::size_t>> select_surgeon(
    std::span<const Keypoint2DFrame> frames, std::span<const CameraModel> cameras,
    const Vec3& table_center) {
  std::vector<std::optional<std::size_t>> selection(frames.size());
  bool any_person = false;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Keypoint2DFrame& frame = frames[f];
    if (frame.persons.empty()) continue;
    any_person = true;
    const CameraModel& cam = find_camera(cameras, frame.camera_id);
    const double table_depth = (invert(cam.world_from_camera) * table_center).z();
    if (!(table_depth > 0.0)) continue;  // table behind this camera

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < frame.persons.size(); ++p) {
      Pixel mean = Pixel::Zero();
      double weight = 0.0;
      for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
        const Keypoint& k = frame.persons[p].joint(j);
        if (!(k.confidence > 0.0)) continue;
        mean += k.confidence * Pixel(k.u, k.v);
        weight += k.confidence;
      }
      if (!(weight > 0.0)) continue;
      mean /= weight;
      const double dist = (unproject(cam, mean, table_depth) - table_center).norm();
      if (dist < best) {
        best = dist;
        selection[f] = p;
      }
    }
  }
  if (!any_person) {
    throw Error(ErrorCode::kEmptySelection, "no persons detected in any camera");
  }
  return selection;
}

Skeleton3DFrame triangulate_skeleton(std::span<const Keypoint2DFrame> frames,
                                     std::span<const std::optional<std::size_t>> selection,
                                     std::span<const CameraModel> cameras,
                                     const TriangulationOptions& options) {
  if (selection.size() != frames.size()) {
    throw Error(ErrorCode::kParameter, "selection must have one entry per frame");
  }
  Skeleton3DFrame out;
  if (!frames.empty()) out.t = frames.front().t;
  for (const Keypoint2DFrame& f : frames) {
    if (f.t != out.t) {
      throw Error(ErrorCode::kParameter, "keypoint frames do not share a timestamp");
    }
  }
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  std::vector<PixelObservation> obs;
  for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
    obs.clear();
    for (std::size_t f = 0; f < frames.size(); ++f) {
      if (!selection[f]) continue;
      if (*selection[f] >= frames[f].persons.size()) {
        throw Error(ErrorCode::kParameter, "selected person index out of range");
      }
      const Keypoint& k = frames[f].persons[*selection[f]].joint(j);
      if (k.confidence >= options.min_confidence) {
        obs.push_back({frames[f].camera_id, Pixel(k.u, k.v), k.confidence});
      }
    }
    SkeletonJoint& joint = out.joints[j];
    joint = {Vec3::Constant(kNaN), kNaN, false};
    try {
      const Triangulation tri = triangulate(obs, cameras, options);
      joint = {tri.point, tri.residual_px, true};
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kReference) throw;
    }
  }
  return out;
}

std::vector<Skeleton3DFrame> smooth_skeleton(std::span<const Skeleton3DFrame> track, int window) {
  if (window < 1 || window % 2 == 0) {
    throw Error(ErrorCode::kParameter, "smoothing window must be odd and >= 1, got " +
                                           std::to_string(window));
  }
  for (std::size_t i = 1; i < track.size(); ++i) {
    if (!(track[i].t > track[i - 1].t)) {
      throw Error(ErrorCode::kParameter, "skeleton timestamps must be strictly increasing");
    }
  }
  std::vector<Skeleton3DFrame> out(track.begin(), track.end());
  if (window == 1) return out;
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(track.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + half);
    const std::ptrdiff_t span = hi - lo + 1;
    for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
      Vec3 sum = Vec3::Zero();
      double residual = 0.0;
      std::ptrdiff_t valid = 0;
      for (std::ptrdiff_t k = lo; k <= hi; ++k) {
        const SkeletonJoint& s = track[static_cast<std::size_t>(k)].joints[j];
        if (!s.valid) continue;
        sum += s.position;
        residual += s.residual_px;
        ++valid;
      }
      SkeletonJoint& dst = out[static_cast<std::size_t>(i)].joints[j];
      if (2 * (span - valid) > span || valid == 0) {
        dst = {Vec3::Constant(kNaN), kNaN, false};
      } else {
        dst = {sum / static_cast<double>(valid), residual / static_cast<double>(valid), true};
      }
    }
  }
  return out;
}

namespace {

template <std::size_t N>
void parse_keypoints(const Json& j, std::array<Keypoint, N>& dst, const std::string& ctx) {
  if (!j.is_array() || j.size() != N) {
    throw Error(ErrorCode::kParse, ctx + ": expected " + std::to_string(N) + " keypoints");
  }
  for (std::size_t i = 0; i < N; ++i) {
    const Json& k = j[i];
    if (!k.is_array() || k.size() != 3 || !k[0].is_number() || !k[1].is_number() ||
        !k[2].is_number()) {
      throw Error(ErrorCode::kParse, ctx + "[" + std::to_string(i) + "]: expected [u, v, c]");
    }
    dst[i] = {k[0].get<double>(), k[1].get<double>(), k[2].get<double>()};
    if (!(dst[i].confidence >= 0.0 && dst[i].confidence <= 1.0) || !std::isfinite(dst[i].u) ||
        !std::isfinite(dst[i].v)) {
      throw Error(ErrorCode::kParse, ctx + "[" + std::to_string(i) + "]: invalid keypoint");
    }
  }
}

template <std::size_t N>
Json keypoints_json(const std::array<Keypoint, N>& src) {
  Json out = Json::array();
  for (const Keypoint& k : src) out.push_back(Json::array({k.u, k.v, k.confidence}));
  return out;
}

constexpr const char* kSkeletonHeader = "t_s,joint_id,x_m,y_m,z_m,residual_px,valid";

}  // namespace

Keypoint2DFrame read_keypoint_frame(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  const std::string ctx = path.string();
  Keypoint2DFrame frame;
  frame.camera_id = json_get<std::string>(j, "camera", ctx);
  frame.t = json_get<double>(j, "t_s", ctx);
  if (!j.contains("persons") || !j["persons"].is_array()) {
    throw Error(ErrorCode::kParse, ctx + ": missing array 'persons'");
  }
  std::size_t i = 0;
  for (const Json& p : j["persons"]) {
    const std::string pctx = ctx + ".persons[" + std::to_string(i++) + "]";
    PersonKeypoints person;
    for (const char* key : {"body", "hand_l", "hand_r"}) {
      if (!p.contains(key)) throw Error(ErrorCode::kParse, pctx + ": missing '" + key + "'");
    }
    parse_keypoints(p["body"], person.body, pctx + ".body");
    parse_keypoints(p["hand_l"], person.left_hand, pctx + ".hand_l");
    parse_keypoints(p["hand_r"], person.right_hand, pctx + ".hand_r");
    frame.persons.push_back(person);
  }
  return frame;
}

void write_keypoint_frame(const std::filesystem::path& path, const Keypoint2DFrame& frame) {
  Json persons = Json::array();
  for (const PersonKeypoints& p : frame.persons) {
    persons.push_back({{"body", keypoints_json(p.body)},
                       {"hand_l", keypoints_json(p.left_hand)},
                       {"hand_r", keypoints_json(p.right_hand)}});
  }
  write_json_file(path, Json{{"camera", frame.camera_id}, {"t_s", frame.t}, {"persons", persons}});
}

void write_skeleton_track(std::ostream& out, std::span<const Skeleton3DFrame> track) {
  out << kSkeletonHeader << '\n';
  std::ostringstream row;
  row.precision(17);
  for (const Skeleton3DFrame& f : track) {
    for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
      const SkeletonJoint& s = f.joints[j];
      row.str({});
      row << f.t << ',' << j << ',' << s.position.x() << ',' << s.position.y() << ','
          << s.position.z() << ',' << s.residual_px << ',' << (s.valid ? 1 : 0) << '\n';
      out << row.str();
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "skeleton track write failed");
}

void write_skeleton_track(const std::filesystem::path& path,
                          std::span<const Skeleton3DFrame> track) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_skeleton_track(out, track);
}

std::vector<Skeleton3DFrame> read_skeleton_track(std::istream& in, const std::string& context) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParse, context + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSkeletonHeader) {
    throw Error(ErrorCode::kParse,
                context + ":1: expected header '" + std::string(kSkeletonHeader) + "'");
  }
  std::vector<Skeleton3DFrame> track;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = context + ":" + std::to_string(line_no);
    std::vector<std::string> cells;
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 7) throw Error(ErrorCode::kParse, where + ": expected 7 columns");
    double v[7];
    for (int k = 0; k < 7; ++k) {
      try {
        std::size_t used = 0;
        v[k] = std::stod(cells[k], &used);
        if (used != cells[k].size()) throw std::invalid_argument(cells[k]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse, where + ": bad number in column " + std::to_string(k + 1));
      }
    }
    const auto joint = static_cast<std::size_t>(v[1]);
    if (v[1] < 0 || static_cast<double>(joint) != v[1] || joint >= kSkeletonJoints) {
      throw Error(ErrorCode::kParse, where + ": joint_id out of range");
    }
    if (joint == 0) {
      track.emplace_back();
      track.back().t = v[0];
    } else if (track.empty() || track.back().t != v[0]) {
      throw Error(ErrorCode::kParse, where + ": rows must list joints 0..66 per frame");
    }
    SkeletonJoint& s = track.back().joints[joint];
    s.position = Vec3(v[2], v[3], v[4]);
    s.residual_px = v[5];
    s.valid = v[6] != 0.0;
  }
  return track;
}

std::vector<Skeleton3DFrame> read_skeleton_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return read_skeleton_track(in, path.string());
}

}  // namespace twinfuse
