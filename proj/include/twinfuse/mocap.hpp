#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twinfuse/camera.hpp"
#include "twinfuse/geometry.hpp"

namespace twinfuse {

inline constexpr std::size_t kBodyJoints = 25;
inline constexpr std::size_t kHandJoints = 21;
// Body, then left hand, then right hand.
inline constexpr std::size_t kSkeletonJoints = kBodyJoints + 2 * kHandJoints;

struct Keypoint {
  double u = 0.0;
  double v = 0.0;
  double confidence = 0.0;  // 0 for missing detections
};

struct PersonKeypoints {
  std::array<Keypoint, kBodyJoints> body{};
  std::array<Keypoint, kHandJoints> left_hand{};
  std::array<Keypoint, kHandJoints> right_hand{};

  // Joint in the combined 67-entry ordering.
  const Keypoint& joint(std::size_t j) const;
  Keypoint& joint(std::size_t j);
};

struct Keypoint2DFrame {
  std::string camera_id;
  double t = 0.0;
  std::vector<PersonKeypoints> persons;
};

struct SkeletonJoint {
  Vec3 position = Vec3::Zero();
  double residual_px = 0.0;
  bool valid = false;
};

struct Skeleton3DFrame {
  double t = 0.0;
  std::array<SkeletonJoint, kSkeletonJoints> joints{};
};

// Per input frame (one per camera), the index of the person whose lifted
// mean keypoint is nearest to `table_center`, or nullopt when the camera
// saw nobody. The mean pixel is lifted along the camera ray to the depth of
// the table center in that camera.
std::vector<std::optional<std::size_t>> select_surgeon(
    std::span<const Keypoint2DFrame> frames, std::span<const CameraModel> cameras,
    const Vec3& table_center);

// Triangulates all 67 joints of the selected person. A joint is valid when
// at least two cameras observe it with confidence >= options.min_confidence
// and triangulation succeeds; invalid joints carry NaN positions.
Skeleton3DFrame triangulate_skeleton(std::span<const Keypoint2DFrame> frames,
                                     std::span<const std::optional<std::size_t>> selection,
                                     std::span<const CameraModel> cameras,
                                     const TriangulationOptions& options = {});

// Per-joint centered moving average over valid samples. A joint that is
// invalid in more than half of its (truncated) window is invalid.
std::vector<Skeleton3DFrame> smooth_skeleton(std::span<const Skeleton3DFrame> track,
                                             int window);

// {"camera", "t_s", "persons": [{"body": [[u,v,c] x25], "hand_l": [[u,v,c] x21],
//  "hand_r": [[u,v,c] x21]}]}
Keypoint2DFrame read_keypoint_frame(const std::filesystem::path& path);
void write_keypoint_frame(const std::filesystem::path& path, const Keypoint2DFrame& frame);

// CSV `t_s,joint_id,x_m,y_m,z_m,residual_px,valid`, one row per joint.
std::vector<Skeleton3DFrame> read_skeleton_track(const std::filesystem::path& path);
std::vector<Skeleton3DFrame> read_skeleton_track(std::istream& in, const std::string& context);
void write_skeleton_track(const std::filesystem::path& path,
                          std::span<const Skeleton3DFrame> track);
void write_skeleton_track(std::ostream& out, std::span<const Skeleton3DFrame> track);

}  // namespace twinfuse
