#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "twinfuse/camera.hpp"
#include "twinfuse/fusion.hpp"
#include "twinfuse/geometry.hpp"
#include "twinfuse/json_io.hpp"
#include "twinfuse/markers.hpp"
#include "twinfuse/mocap.hpp"
#include "twinfuse/tracking.hpp"

namespace twinfuse {

struct SynthConfig {
  std::uint64_t seed = 1;
  Vec3 room_extent_m{8.0, 6.0, 3.0};
  double room_spacing_m = 0.2;
  int marker_count = 21;
  int scan_count = 8;
  int visible_min = 12;
  int visible_max = 14;
  int camera_count = 5;
  double scan_sigma_m = 0.0025;  // per axis
  double pixel_sigma_px = 0.5;
  double tracker_sigma_m = 0.0001;
  double hemisphere_sigma_m = 0.00005;
  double clock_offset_s = 0.033;
  double duration_s = 4.0;
  double rate_hz = 30.0;
};

// Throws kParameter when counts, noise levels or extents are out of range.
void check_synth_config(const SynthConfig& config);
Json synth_config_to_json(const SynthConfig& config);
// Missing keys keep their defaults.
SynthConfig synth_config_from_json(const Json& j, const std::string& context);

// Deterministic random stream. Each named entity draws from its own
// substream, so adding entities leaves existing draws untouched. Uniform
// and Gaussian variates are produced here rather than by <random>
// distributions, whose output is implementation-defined.
class SynthRng {
 public:
  SynthRng(std::uint64_t seed, std::string_view stream);

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double gaussian();  // standard normal
  Vec3 gaussian3(double sigma);
  std::size_t index(std::size_t n);  // [0, n)
  Quat rotation();                   // uniform over SO(3)

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Camera at `position` looking at `target` with image y pointing down.
CameraModel look_at_camera(const std::string& id, const CameraIntrinsics& intrinsics,
                           const Vec3& position, const Vec3& target);
// 1280x720, fx = fy = 600, mild radial distortion.
CameraIntrinsics default_intrinsics();

// Random points on a drill-like body (tapered barrel plus box grip) in its
// own frame, one per spacing_m^2 of surface area on average.
std::vector<Vec3> drill_surface(double spacing_m, std::uint64_t seed = 1);

// A 25-joint body followed by two 21-joint hands, in a person-local frame
// with z up and the person facing +y; `phase` drives the arm motion.
std::array<Vec3, kSkeletonJoints> stick_figure(double phase);

struct SynthScan {
  ScanRecord record;
  RigidTransform world_from_scan;
};

struct SynthCamera {
  CameraModel truth;
  std::vector<std::string> marker_ids;
  std::vector<Pixel> pixels;  // noisy projections of marker_ids
};

struct SynthPerson {
  std::string name;
  std::vector<Skeleton3DFrame> truth;  // world frame
};

struct GroundTruthBundle {
  SynthConfig config;
  PointCloud room;   // world frame, floor at z = 0
  MarkerSet markers; // world frame
  Vec3 table_center = Vec3::Zero();
  std::vector<SynthScan> scans;
  std::vector<SynthCamera> cameras;

  PoseTrack instrument_truth;     // instrument -> world
  PoseTrack instrument_tracker;   // noisy, tracker clock
  PoseTrack instrument_camera;    // noisy, camera clock (late by clock_offset_s)
  MarkerArrayGeometry marker_array;
  RigidTransform model_from_array;
  std::vector<PointCloud> hemispheres;  // one per array marker, model frame
  PointCloud drill_model;
  PointCloud drill_scan;
  RigidTransform model_from_scan;

  std::vector<SynthPerson> persons;  // persons[0] is the surgeon
  std::vector<std::vector<Keypoint2DFrame>> keypoints;  // [time][camera]
};

GroundTruthBundle generate(const SynthConfig& config);

// Name of the scan every other scan is registered onto: most visible
// markers, first on ties.
std::string reference_scan_name(const GroundTruthBundle& bundle);

// Named estimates. Pose names: "scan/<name>" (scan -> reference scan),
// "camera/<id>" (camera -> world), "array" (array -> model),
// "drill" (scan -> model). Point names: "marker/<id>" (world),
// "joint/<frame>/<joint>" (surgeon, world).
struct EstimateSet {
  std::map<std::string, RigidTransform> poses;
  std::map<std::string, Vec3> points;
};

EstimateSet truth_entities(const GroundTruthBundle& bundle);

struct EntityError {
  std::string name;
  double translation_mm = 0.0;
  double rotation_deg = 0.0;  // 0 for points
};

struct TruthComparison {
  std::vector<EntityError> poses;
  std::vector<EntityError> points;
};

// Throws kUnknownEntity when an estimate names no bundle entity.
TruthComparison compare_to_truth(const EstimateSet& truth, const EstimateSet& estimates);
Json truth_comparison_to_json(const TruthComparison& comparison);

Json estimates_to_json(const EstimateSet& set);
EstimateSet estimates_from_json(const Json& j, const std::string& context);

// Writes the bundle in the pipeline's file formats:
//   config.json, table.json, scans/<name>.ply + .markers.json,
//   cameras/<id>.json (pose unknown, identity) + .pixels.json,
//   keypoints/<camera>/<frame>.json, tracks/*.csv, instrument/*,
//   truth/truth.json, truth/markers.json, truth/skeleton.csv
void write_bundle(const GroundTruthBundle& bundle, const std::filesystem::path& directory);

// {"camera": id, "observations": [{"id", "uv": [u, v]}]}
struct MarkerPixels {
  std::string camera_id;
  std::vector<std::string> marker_ids;
  std::vector<Pixel> pixels;
};
MarkerPixels read_marker_pixels(const std::filesystem::path& path);
void write_marker_pixels(const std::filesystem::path& path, const MarkerPixels& pixels);

}  // namespace twinfuse
