// twinfuse command-line front end.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "twinfuse/camera.hpp"
#include "twinfuse/error.hpp"
#include "twinfuse/fusion.hpp"
#include "twinfuse/json_io.hpp"
#include "twinfuse/markers.hpp"
#include "twinfuse/metrics.hpp"
#include "twinfuse/mocap.hpp"
#include "twinfuse/ply.hpp"
#include "twinfuse/scene.hpp"
#include "twinfuse/synth.hpp"
#include "twinfuse/tracking.hpp"

namespace fs = std::filesystem;
using namespace twinfuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Raised for bad flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Regular files in `dir` whose name ends with `suffix`, sorted by name.
std::vector<fs::path> list_files(const fs::path& dir, const std::string& suffix,
                                 bool recursive = false) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "'" + dir.string() + "' is not a directory");
  }
  std::vector<fs::path> out;
  auto consider = [&](const fs::directory_entry& e) {
    if (e.is_regular_file() && ends_with(e.path().filename().string(), suffix)) {
      out.push_back(e.path());
    }
  };
  if (recursive) {
    for (const auto& e : fs::recursive_directory_iterator(dir)) consider(e);
  } else {
    for (const auto& e : fs::directory_iterator(dir)) consider(e);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// "scans/a.ply" -> "scans/a<suffix>"
fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + dir.string() + "': " + ec.message());
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw UsageError(std::string(flag) + " expects NAME=PATH, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<CameraModel> load_cameras(const std::vector<std::string>& files,
                                      const std::string& dir) {
  std::vector<fs::path> paths(files.begin(), files.end());
  if (!dir.empty()) {
    for (const fs::path& p : list_files(dir, ".json")) {
      if (!ends_with(p.filename().string(), ".pixels.json")) paths.push_back(p);
    }
  }
  if (paths.empty()) throw UsageError("no cameras given (use --camera or --camera-dir)");
  std::vector<CameraModel> cams;
  for (const fs::path& p : paths) cams.push_back(read_camera(p));
  return cams;
}

Vec3 table_center_from(const std::vector<double>& flag, const std::string& file) {
  if (!flag.empty()) return Vec3(flag[0], flag[1], flag[2]);
  if (!file.empty()) {
    return vec3_from_json(read_json_file(file).at("table_center_m"), file + ".table_center_m");
  }
  throw UsageError("the table center is required (use --table or --table-file)");
}

// ---------------------------------------------------------------- fuse

struct FuseArgs {
  std::vector<std::string> scans;
  std::string scan_dir;
  std::string out;
  double chamfer_cutoff = kDefaultChamferCutoffM;
  bool no_floor = false;
  std::vector<double> crop;
  double voxel = 0.0;
  bool remove_outliers = false;
  int outlier_k = kDefaultOutlierNeighbors;
  double outlier_ratio = kDefaultOutlierStdRatio;
};

void add_fuse(CLI::App& app, FuseArgs& a) {
  auto* c = app.add_subcommand("fuse", "Register marker-annotated scans and fuse them");
  c->add_option("--scan", a.scans,
                "Scan PLY; its markers are read from <stem>.markers.json (repeatable)");
  c->add_option("--scan-dir", a.scan_dir, "Directory of scan PLY files");
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--chamfer-cutoff", a.chamfer_cutoff, "Chamfer correspondence cutoff (m)")
      ->check(CLI::PositiveNumber);
  c->add_flag("--no-floor", a.no_floor, "Keep the reference scan frame instead of the floor frame");
  c->add_option("--crop", a.crop,
                "Boxes kept after fusion, 6 values each: min_x min_y min_z max_x max_y max_z (m)");
  c->add_option("--voxel", a.voxel, "Voxel size for downsampling the output (m, 0 = off)")
      ->check(CLI::NonNegativeNumber);
  c->add_flag("--remove-outliers", a.remove_outliers, "Apply the statistical outlier filter");
  c->add_option("--outlier-k", a.outlier_k, "Neighbors used by the outlier filter")
      ->check(CLI::PositiveNumber);
  c->add_option("--outlier-ratio", a.outlier_ratio, "Std ratio used by the outlier filter")
      ->check(CLI::PositiveNumber);
}

int run_fuse(const FuseArgs& a) {
  std::vector<fs::path> plys(a.scans.begin(), a.scans.end());
  if (!a.scan_dir.empty()) {
    for (const fs::path& p : list_files(a.scan_dir, ".ply")) plys.push_back(p);
  }
  if (plys.empty()) throw UsageError("no scans given (use --scan or --scan-dir)");
  if (a.crop.size() % 6 != 0) throw UsageError("--crop expects a multiple of 6 values");

  std::vector<ScanRecord> scans;
  for (const fs::path& p : plys) {
    ScanRecord r;
    r.name = p.stem().string();
    r.markers = read_marker_set(sibling(p, ".markers.json"));
    r.cloud = read_ply(p, r.markers.frame);
    scans.push_back(std::move(r));
  }

  FusionResult fused = fuse_scans(scans, {a.chamfer_cutoff});
  MarkerSet markers = fused_markers(scans, fused.report);
  PointCloud cloud = std::move(fused.cloud);
  RigidTransform out_from_fused = RigidTransform::identity(cloud.frame, cloud.frame);
  if (!a.no_floor) {
    FinalizedReference fin = finalize_reference(cloud);
    cloud = std::move(fin.cloud);
    out_from_fused = fin.transform;
    markers = apply(out_from_fused, markers);
  }
  if (!a.crop.empty()) {
    std::vector<Aabb> boxes;
    for (std::size_t i = 0; i < a.crop.size(); i += 6) {
      boxes.push_back({Vec3(a.crop[i], a.crop[i + 1], a.crop[i + 2]),
                       Vec3(a.crop[i + 3], a.crop[i + 4], a.crop[i + 5])});
    }
    cloud = crop_aabb(cloud, boxes);
  }
  if (a.voxel > 0.0) cloud = voxel_downsample(cloud, a.voxel);
  if (a.remove_outliers) cloud = remove_statistical_outliers(cloud, a.outlier_k, a.outlier_ratio);

  make_dir(a.out);
  const fs::path out(a.out);
  write_ply(out / "fused.ply", cloud);
  write_json_file(out / "floor_transform.json", transform_to_json(out_from_fused));
  write_json_file(out / "report.json", fusion_report_to_json(fused.report));
  const std::string table = fusion_report_table(fused.report);
  write_text_file(out / "report.txt", table);
  write_marker_set(out / "markers_fused.json", markers);
  std::cout << table;
  std::cout << "fused points: " << cloud.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- register-cameras

struct RegisterArgs {
  std::vector<std::string> cameras;
  std::string camera_dir;
  std::string markers;
  std::string out;
  int max_iterations = 100;
};

void add_register(CLI::App& app, RegisterArgs& a) {
  auto* c = app.add_subcommand("register-cameras",
                               "Estimate camera poses from marker pixels (PnP)");
  c->add_option("--camera", a.cameras,
                "Camera JSON; marker pixels are read from <stem>.pixels.json (repeatable)");
  c->add_option("--camera-dir", a.camera_dir, "Directory of camera JSON files");
  c->add_option("--markers", a.markers, "Marker set JSON in the target frame")->required();
  c->add_option("--out", a.out,
                "Output directory; posed cameras go to <out>/cameras/<id>.json")
      ->required();
  c->add_option("--max-iterations", a.max_iterations, "Refinement iteration limit")
      ->check(CLI::PositiveNumber);
}

int run_register(const RegisterArgs& a) {
  std::vector<fs::path> paths(a.cameras.begin(), a.cameras.end());
  if (!a.camera_dir.empty()) {
    for (const fs::path& p : list_files(a.camera_dir, ".json")) {
      if (!ends_with(p.filename().string(), ".pixels.json")) paths.push_back(p);
    }
  }
  if (paths.empty()) throw UsageError("no cameras given (use --camera or --camera-dir)");
  const MarkerSet markers = read_marker_set(a.markers);
  const fs::path out(a.out);
  make_dir(out / "cameras");

  struct Row {
    std::string id;
    std::size_t count = 0;
    ReprojectionStats stats;
  };
  std::vector<Row> rows;
  std::vector<std::string> failures;
  Json cams_json = Json::array();
  for (const fs::path& p : paths) {
    CameraModel cam = read_camera(p);
    try {
      const MarkerPixels px = read_marker_pixels(sibling(p, ".pixels.json"));
      std::vector<Vec3> pts;
      std::vector<Pixel> uvs;
      std::vector<ReprojectionSample> samples;
      for (std::size_t i = 0; i < px.marker_ids.size(); ++i) {
        const auto pos = markers.find(px.marker_ids[i]);
        if (!pos) continue;
        pts.push_back(*pos);
        uvs.push_back(px.pixels[i]);
        samples.push_back({cam.id, px.pixels[i], *pos});
      }
      PnpOptions opts;
      opts.max_iterations = a.max_iterations;
      const PnpResult r = solve_pnp(pts, uvs, cam.intrinsics, opts, cam.id, markers.frame);
      cam.world_from_camera = r.world_from_camera;
      const CameraModel solved[] = {cam};
      const ReprojectionStats stats = reprojection_stats(samples, solved);
      write_camera(out / "cameras" / (cam.id + ".json"), cam);
      rows.push_back({cam.id, pts.size(), stats});
      cams_json.push_back({{"id", cam.id},
                           {"markers", pts.size()},
                           {"iterations", r.iterations},
                           {"reproj_mean_px", stats.mean_px},
                           {"reproj_std_px", stats.std_px}});
    } catch (const Error& e) {
      failures.push_back("camera '" + cam.id + "': " + e.what());
    }
  }

  double mean_of_means = 0.0;
  for (const Row& r : rows) mean_of_means += r.stats.mean_px;
  if (!rows.empty()) mean_of_means /= static_cast<double>(rows.size());
  write_json_file(out / "reprojection.json",
                  Json{{"cameras", cams_json}, {"mean_px", mean_of_means},
                       {"failed", failures}});

  std::ostringstream t;
  t << "Camera";
  for (const Row& r : rows) t << " | " << r.id;
  t << " | Mean\n# Markers";
  for (const Row& r : rows) t << " | " << r.count;
  t << " |\nMean error (px)";
  for (const Row& r : rows) t << " | " << format_fixed(r.stats.mean_px);
  t << " | " << format_fixed(mean_of_means) << "\nStd (px)";
  for (const Row& r : rows) t << " | " << format_fixed(r.stats.std_px);
  t << " |\n";
  write_text_file(out / "reprojection.txt", t.str());
  std::cout << t.str();
  for (const std::string& f : failures) std::cerr << "error: " << f << "\n";
  return failures.empty() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- track

struct TrackArgs {
  std::string track;
  std::string frame = kReferenceFrame;
  std::string node = "instrument";
  int window = 5;
  std::string sync_track;
  double max_offset = 1.0;
  std::string array;
  std::vector<std::string> hemispheres;
  std::string hemisphere_dir;
  double match_tolerance = 0.0005;
  std::string icp_src;
  std::string icp_dst;
  double icp_max_corr = 0.010;
  int icp_iterations = 50;
  std::string out;
};

void add_track(CLI::App& app, TrackArgs& a) {
  auto* c = app.add_subcommand(
      "track", "Smooth pose tracks, sync clocks, register marker arrays, run ICP");
  c->add_option("--track", a.track, "Pose track CSV to smooth");
  c->add_option("--frame", a.frame, "Frame the track poses map into");
  c->add_option("--node", a.node, "Frame of the tracked object");
  c->add_option("--window", a.window, "Moving-average window (odd)");
  c->add_option("--sync-track", a.sync_track,
                "Second track of the same object on another clock; reports the offset to add "
                "to its timestamps");
  c->add_option("--max-offset", a.max_offset, "Largest clock offset searched (s)")
      ->check(CLI::PositiveNumber);
  c->add_option("--array", a.array, "Marker array geometry JSON");
  c->add_option("--hemisphere", a.hemispheres, "PLY of one scanned marker hemisphere (repeatable)");
  c->add_option("--hemisphere-dir", a.hemisphere_dir, "Directory of hemisphere PLY files");
  c->add_option("--match-tolerance", a.match_tolerance,
                "Pairwise-distance tolerance for marker matching (m)")
      ->check(CLI::PositiveNumber);
  c->add_option("--icp-src", a.icp_src, "ICP source cloud (PLY)");
  c->add_option("--icp-dst", a.icp_dst, "ICP target cloud (PLY)");
  c->add_option("--icp-max-corr", a.icp_max_corr, "ICP correspondence cutoff (m)")
      ->check(CLI::PositiveNumber);
  c->add_option("--icp-iterations", a.icp_iterations, "ICP iteration limit")
      ->check(CLI::PositiveNumber);
  c->add_option("--out", a.out, "Output directory")->required();
}

std::vector<TimedPosition> positions_of(const PoseTrack& t) {
  std::vector<TimedPosition> out;
  for (const PoseSample& s : t.samples) out.push_back({s.t, s.pose.translation()});
  return out;
}

int run_track(const TrackArgs& a) {
  const bool want_array = !a.array.empty();
  const bool want_icp = !a.icp_src.empty() || !a.icp_dst.empty();
  if (a.track.empty() && !want_array && !want_icp) {
    throw UsageError("nothing to do: give --track, --array or --icp-src/--icp-dst");
  }
  if (!a.sync_track.empty() && a.track.empty()) throw UsageError("--sync-track needs --track");
  if (want_icp && (a.icp_src.empty() || a.icp_dst.empty())) {
    throw UsageError("ICP needs both --icp-src and --icp-dst");
  }
  make_dir(a.out);
  const fs::path out(a.out);
  Json report = Json::object();

  if (!a.track.empty()) {
    const PoseTrack track = read_pose_track(a.track, a.frame, a.node);
    const PoseTrack smooth = smooth_track(track, a.window);
    write_pose_track(out / "smoothed.csv", smooth);
    report["track"] = {{"samples", track.samples.size()}, {"window", a.window}};
    std::cout << "smoothed " << track.samples.size() << " samples, window " << a.window << "\n";
    if (!a.sync_track.empty()) {
      const PoseTrack other = read_pose_track(a.sync_track, a.frame, a.node);
      TimeOffsetOptions opts;
      opts.max_offset_s = a.max_offset;
      const TimeOffsetResult r =
          estimate_time_offset(positions_of(track), positions_of(other), opts);
      report["time_offset"] = {{"offset_s", r.offset_s}, {"ambiguous", r.ambiguous},
                               {"cost", r.cost}};
      std::cout << "clock offset: " << format_fixed(1000.0 * r.offset_s) << " ms"
                << (r.ambiguous ? " (ambiguous)" : "") << "\n";
    }
  }

  if (want_array) {
    const MarkerArrayGeometry array = read_marker_array(a.array);
    std::vector<fs::path> files(a.hemispheres.begin(), a.hemispheres.end());
    if (!a.hemisphere_dir.empty()) {
      for (const fs::path& p : list_files(a.hemisphere_dir, ".ply")) files.push_back(p);
    }
    if (files.empty()) throw UsageError("--array needs --hemisphere or --hemisphere-dir");
    std::vector<Vec3> centers;
    std::string model_frame;
    Json fits = Json::array();
    for (const fs::path& p : files) {
      const PointCloud hemi = read_ply(p, "model");
      const SphereFit fit = fit_sphere_fixed_radius(hemi.points, array.radius_m);
      centers.push_back(fit.center);
      fits.push_back({{"file", p.filename().string()},
                      {"center_m", vec3_to_json(fit.center)},
                      {"rms_residual_m", fit.rms_residual_m}});
    }
    const ArrayRegistration reg = register_marker_array(centers, array, a.match_tolerance);
    report["array"] = {{"model_from_array", transform_to_json(reg.model_from_array)},
                       {"rmse_mm", reg.rmse_mm},
                       {"spheres", fits}};
    std::cout << "marker array rmse: " << format_fixed(reg.rmse_mm) << " mm\n";
  }

  if (want_icp) {
    const PointCloud src = read_ply(a.icp_src, "source");
    const PointCloud dst = read_ply(a.icp_dst, "target");
    IcpParams params;
    params.max_correspondence_m = a.icp_max_corr;
    params.max_iterations = a.icp_iterations;
    const IcpResult r = icp(src, dst, RigidTransform::identity("source", "target"), params);
    report["icp"] = {{"transform", transform_to_json(r.transform)},
                     {"rms_m", r.rms_m},
                     {"iterations", r.iterations},
                     {"inliers", r.inliers}};
    std::cout << "icp rms: " << format_fixed(1000.0 * r.rms_m) << " mm after " << r.iterations
              << " iterations\n";
  }
  write_json_file(out / "track_report.json", report);
  return kExitOk;
}

// ---------------------------------------------------------------- mocap

struct MocapArgs {
  std::string keypoints;
  std::vector<std::string> cameras;
  std::string camera_dir;
  std::vector<double> table;
  std::string table_file;
  int window = 5;
  double min_confidence = 0.1;
  std::string out;
};

void add_mocap(CLI::App& app, MocapArgs& a) {
  auto* c = app.add_subcommand("mocap", "Select the surgeon and triangulate 3D skeletons");
  c->add_option("--keypoints", a.keypoints,
                "Directory searched recursively for keypoint frame JSON files")
      ->required();
  c->add_option("--camera", a.cameras, "Registered camera JSON (repeatable)");
  c->add_option("--camera-dir", a.camera_dir, "Directory of registered camera JSON files");
  c->add_option("--table", a.table, "Table center x y z (m)")->expected(3);
  c->add_option("--table-file", a.table_file, "JSON file with table_center_m");
  c->add_option("--window", a.window, "Smoothing window (odd)");
  c->add_option("--min-confidence", a.min_confidence, "Keypoint confidence threshold")
      ->check(CLI::Range(0.0, 1.0));
  c->add_option("--out", a.out, "Output directory")->required();
}

int run_mocap(const MocapArgs& a) {
  const std::vector<CameraModel> cams = load_cameras(a.cameras, a.camera_dir);
  const Vec3 table = table_center_from(a.table, a.table_file);
  std::map<double, std::vector<Keypoint2DFrame>> by_time;
  for (const fs::path& p : list_files(a.keypoints, ".json", true)) {
    Keypoint2DFrame f = read_keypoint_frame(p);
    by_time[f.t].push_back(std::move(f));
  }
  if (by_time.empty()) throw Error(ErrorCode::kIo, "no keypoint files under '" + a.keypoints + "'");
  for (auto& [t, frames] : by_time) {
    std::sort(frames.begin(), frames.end(),
              [](const auto& x, const auto& y) { return x.camera_id < y.camera_id; });
  }

  TriangulationOptions opts;
  opts.min_confidence = a.min_confidence;
  std::vector<Skeleton3DFrame> raw;
  for (const auto& [t, frames] : by_time) {
    std::vector<std::optional<std::size_t>> sel(frames.size());
    try {
      sel = select_surgeon(frames, cams, table);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptySelection) throw;
    }
    raw.push_back(triangulate_skeleton(frames, sel, cams, opts));
  }
  const std::vector<Skeleton3DFrame> smooth = smooth_skeleton(raw, a.window);

  make_dir(a.out);
  const fs::path out(a.out);
  write_skeleton_track(out / "skeleton_raw.csv", raw);
  write_skeleton_track(out / "skeleton.csv", smooth);
  std::size_t valid = 0;
  double residual = 0.0;
  for (const Skeleton3DFrame& f : raw) {
    for (const SkeletonJoint& j : f.joints) {
      if (!j.valid) continue;
      ++valid;
      residual += j.residual_px;
    }
  }
  const double mean_residual = valid ? residual / static_cast<double>(valid) : 0.0;
  write_json_file(out / "mocap_report.json",
                  Json{{"frames", raw.size()}, {"valid_joints", valid},
                       {"mean_residual_px", mean_residual}, {"window", a.window}});
  std::cout << "frames: " << raw.size() << ", valid joints: " << valid
            << ", mean residual: " << format_fixed(mean_residual) << " px\n";
  return kExitOk;
}

// ---------------------------------------------------------------- metrics

struct MetricsArgs {
  std::string cloud_a;
  std::string cloud_b;
  double cutoff = kDefaultChamferCutoffM;
  std::string markers_a;
  std::string markers_b;
  std::vector<std::string> cameras;
  std::string camera_dir;
  std::string pixels_dir;
  std::string markers;
  std::string out;
};

void add_metrics(CLI::App& app, MetricsArgs& a) {
  auto* c = app.add_subcommand("metrics", "Chamfer distance, marker RMSE, reprojection error");
  c->add_option("--cloud-a", a.cloud_a, "First cloud (PLY)");
  c->add_option("--cloud-b", a.cloud_b, "Second cloud (PLY)");
  c->add_option("--cutoff", a.cutoff, "Chamfer correspondence cutoff (m)")
      ->check(CLI::PositiveNumber);
  c->add_option("--markers-a", a.markers_a, "First marker set JSON");
  c->add_option("--markers-b", a.markers_b, "Second marker set JSON");
  c->add_option("--camera", a.cameras, "Registered camera JSON (repeatable)");
  c->add_option("--camera-dir", a.camera_dir, "Directory of registered camera JSON files");
  c->add_option("--pixels-dir", a.pixels_dir,
                "Directory holding <id>.pixels.json (default: next to each camera file)");
  c->add_option("--markers", a.markers, "Marker set JSON used for reprojection");
  c->add_option("--out", a.out, "Write the metrics JSON to this file");
}

int run_metrics(const MetricsArgs& a) {
  const bool clouds = !a.cloud_a.empty() || !a.cloud_b.empty();
  const bool rmse = !a.markers_a.empty() || !a.markers_b.empty();
  const bool reproj = !a.cameras.empty() || !a.camera_dir.empty();
  if (!clouds && !rmse && !reproj) {
    throw UsageError("nothing to do: give --cloud-a/--cloud-b, --markers-a/--markers-b or cameras");
  }
  if (clouds && (a.cloud_a.empty() || a.cloud_b.empty())) {
    throw UsageError("Chamfer needs both --cloud-a and --cloud-b");
  }
  if (rmse && (a.markers_a.empty() || a.markers_b.empty())) {
    throw UsageError("RMSE needs both --markers-a and --markers-b");
  }
  if (reproj && a.markers.empty()) throw UsageError("reprojection needs --markers");

  Json j = Json::object();
  if (clouds) {
    const PointCloud ca = read_ply(a.cloud_a, "a");
    const PointCloud cb = read_ply(a.cloud_b, "a");
    const ChamferResult sym = chamfer(ca, cb, a.cutoff);
    const ChamferResult one = chamfer_one_sided(ca, cb, a.cutoff);
    j["cd_mm"] = sym.mm;
    j["cd_one_sided_mm"] = one.mm;
    j["samples_used"] = sym.samples_used;
    j["samples_filtered"] = sym.samples_filtered;
    std::cout << "chamfer: " << format_fixed(sym.mm) << " mm (one-sided "
              << format_fixed(one.mm) << " mm, " << sym.samples_filtered << " filtered)\n";
  }
  if (rmse) {
    const double r = marker_rmse(read_marker_set(a.markers_a), read_marker_set(a.markers_b));
    j["rmse_mm"] = r;
    std::cout << "marker rmse: " << format_fixed(r) << " mm\n";
  }
  if (reproj) {
    std::vector<fs::path> paths(a.cameras.begin(), a.cameras.end());
    if (!a.camera_dir.empty()) {
      for (const fs::path& p : list_files(a.camera_dir, ".json")) {
        if (!ends_with(p.filename().string(), ".pixels.json")) paths.push_back(p);
      }
    }
    const MarkerSet markers = read_marker_set(a.markers);
    std::vector<CameraModel> cams;
    std::vector<ReprojectionSample> samples;
    for (const fs::path& p : paths) {
      cams.push_back(read_camera(p));
      const fs::path px_path = a.pixels_dir.empty()
                                   ? sibling(p, ".pixels.json")
                                   : fs::path(a.pixels_dir) / (cams.back().id + ".pixels.json");
      const MarkerPixels px = read_marker_pixels(px_path);
      for (std::size_t i = 0; i < px.marker_ids.size(); ++i) {
        if (const auto pos = markers.find(px.marker_ids[i])) {
          samples.push_back({cams.back().id, px.pixels[i], *pos});
        }
      }
    }
    const ReprojectionStats s = reprojection_stats(samples, cams);
    j["reproj_mean_px"] = s.mean_px;
    j["reproj_std_px"] = s.std_px;
    std::cout << "reprojection: " << format_fixed(s.mean_px) << " +- " << format_fixed(s.std_px)
              << " px over " << s.count << " observations\n";
  }
  if (!a.out.empty()) write_json_file(a.out, j);
  return kExitOk;
}

// ---------------------------------------------------------------- scene

struct SceneArgs {
  std::vector<std::string> statics;
  std::vector<std::string> assets;
  std::vector<std::string> dynamics;
  std::vector<std::string> skeletons;
  std::string out;
  std::string dir;
  double t = 0.0;
  CLI::App* assemble = nullptr;
  CLI::App* validate = nullptr;
  CLI::App* sample = nullptr;
};

void add_scene(CLI::App& app, SceneArgs& a) {
  auto* c = app.add_subcommand("scene", "Assemble, validate and sample twin scenes");
  c->require_subcommand(1);
  a.assemble = c->add_subcommand("assemble", "Build a scene directory from registered parts");
  a.assemble->add_option("--static", a.statics,
                         "NAME=PLY static cloud already in the reference frame (repeatable)");
  a.assemble->add_option("--asset", a.assets,
                         "NAME=PATH static mesh reference at the reference origin (repeatable)");
  a.assemble->add_option("--dynamic", a.dynamics, "NAME=CSV pose track (repeatable)");
  a.assemble->add_option("--skeleton", a.skeletons, "NAME=CSV skeleton track (repeatable)");
  a.assemble->add_option("--out", a.out, "Scene directory")->required();

  a.validate = c->add_subcommand("validate", "Check scene invariants; exit 1 on violations");
  a.validate->add_option("--dir", a.dir, "Scene directory")->required();

  a.sample = c->add_subcommand("sample", "Print all node poses at one time as JSON");
  a.sample->add_option("--dir", a.dir, "Scene directory")->required();
  a.sample->add_option("--t", a.t, "Time (s)")->required();
}

int run_scene(const SceneArgs& a) {
  if (a.assemble->parsed()) {
    std::vector<StaticNode> statics;
    for (const std::string& s : a.statics) {
      auto [name, path] = split_assignment(s, "--static");
      PointCloud cloud = read_ply(path, name);
      statics.push_back({name, "", std::move(cloud),
                         RigidTransform::identity(name, kReferenceFrame)});
    }
    for (const std::string& s : a.assets) {
      auto [name, path] = split_assignment(s, "--asset");
      statics.push_back({name, path, std::nullopt, RigidTransform::identity(name, kReferenceFrame)});
    }
    std::vector<DynamicNode> dynamics;
    for (const std::string& s : a.dynamics) {
      auto [name, path] = split_assignment(s, "--dynamic");
      dynamics.push_back({name, "", read_pose_track(path, kReferenceFrame, name)});
    }
    std::vector<SkeletonNode> skeletons;
    for (const std::string& s : a.skeletons) {
      auto [name, path] = split_assignment(s, "--skeleton");
      skeletons.push_back({name, read_skeleton_track(path)});
    }
    const TwinScene scene = assemble(std::move(statics), std::move(dynamics), std::move(skeletons));
    save(scene, a.out);
    std::cout << "scene: " << scene.static_nodes.size() << " static, "
              << scene.dynamic_nodes.size() << " dynamic, " << scene.skeleton_nodes.size()
              << " skeleton nodes\n";
    return kExitOk;
  }
  const TwinScene scene = load(a.dir);
  if (a.validate->parsed()) {
    const auto violations = validate(scene);
    for (const Violation& v : violations) {
      std::cout << violation_kind_name(v.kind) << " " << (v.node.empty() ? "-" : v.node) << ": "
                << v.detail << "\n";
    }
    if (violations.empty()) std::cout << "ok\n";
    return violations.empty() ? kExitOk : kExitFailure;
  }
  const Snapshot snap = sample_at(scene, a.t);
  Json nodes = Json::array();
  for (const SnapshotEntry& e : snap.entries) {
    Json n{{"name", e.name}};
    n["pose"] = e.pose ? transform_to_json(*e.pose) : Json(nullptr);
    if (e.skeleton) {
      Json joints = Json::array();
      for (const SkeletonJoint& jt : e.skeleton->joints) {
        joints.push_back(jt.valid ? vec3_to_json(jt.position) : Json(nullptr));
      }
      n["joints_m"] = joints;
    }
    nodes.push_back(std::move(n));
  }
  std::cout << Json{{"t_s", snap.t}, {"clamped", snap.clamped}, {"nodes", nodes}}.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  CLI::App* generate = nullptr;
  CLI::App* compare = nullptr;
  std::string out;
  std::uint64_t seed = 1;
  std::string params;
  double scan_sigma = -1.0;
  double pixel_sigma = -1.0;
  double tracker_sigma = -1.0;

  std::string bundle;
  std::string estimates;
  std::string fusion_report;
  std::string camera_dir;
  std::string markers;
  std::string skeleton;
  std::string track_report;
  double max_translation_mm = -1.0;
  double max_rotation_deg = -1.0;
  double max_point_mm = -1.0;
  std::string report;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Generate synthetic bundles and score estimates");
  c->require_subcommand(1);
  a.generate = c->add_subcommand("generate", "Write a synthetic ground-truth bundle");
  a.generate->add_option("--out", a.out, "Bundle directory")->required();
  a.generate->add_option("--seed", a.seed, "Random seed");
  a.generate->add_option("--params", a.params, "Generator parameters JSON (seed, counts, noise)");
  a.generate->add_option("--scan-sigma", a.scan_sigma, "Per-axis scan noise (m)");
  a.generate->add_option("--pixel-sigma", a.pixel_sigma, "Pixel noise (px)");
  a.generate->add_option("--tracker-sigma", a.tracker_sigma, "Tracker noise (m)");

  a.compare = c->add_subcommand("compare", "Compare pipeline outputs with bundle truth");
  a.compare->add_option("--bundle", a.bundle, "Bundle directory")->required();
  a.compare->add_option("--estimates", a.estimates, "Estimates JSON {poses, points}");
  a.compare->add_option("--fusion-report", a.fusion_report, "report.json from fuse");
  a.compare->add_option("--camera-dir", a.camera_dir, "Cameras from register-cameras");
  a.compare->add_option("--markers", a.markers, "Marker set in the world frame");
  a.compare->add_option("--skeleton", a.skeleton, "Skeleton CSV from mocap");
  a.compare->add_option("--track-report", a.track_report, "track_report.json from track");
  a.compare->add_option("--max-translation-mm", a.max_translation_mm,
                        "Fail when any pose translation error exceeds this");
  a.compare->add_option("--max-rotation-deg", a.max_rotation_deg,
                        "Fail when any pose rotation error exceeds this");
  a.compare->add_option("--max-point-mm", a.max_point_mm,
                        "Fail when any point error exceeds this");
  a.compare->add_option("--report", a.report, "Write the comparison JSON to this file");
}

int run_synth(const SynthArgs& a) {
  if (a.generate->parsed()) {
    SynthConfig cfg;
    if (!a.params.empty()) cfg = synth_config_from_json(read_json_file(a.params), a.params);
    if (a.generate->count("--seed")) cfg.seed = a.seed;
    if (a.scan_sigma >= 0) cfg.scan_sigma_m = a.scan_sigma;
    if (a.pixel_sigma >= 0) cfg.pixel_sigma_px = a.pixel_sigma;
    if (a.tracker_sigma >= 0) cfg.tracker_sigma_m = a.tracker_sigma;
    const GroundTruthBundle b = generate(cfg);
    write_bundle(b, a.out);
    std::cout << "bundle: " << b.scans.size() << " scans, " << b.cameras.size() << " cameras, "
              << b.keypoints.size() << " frames, seed " << cfg.seed << "\n";
    return kExitOk;
  }

  const fs::path bundle(a.bundle);
  const Json truth_json = read_json_file(bundle / "truth" / "truth.json");
  const EstimateSet truth = estimates_from_json(truth_json, "truth.json");
  EstimateSet est;
  if (!a.estimates.empty()) est = estimates_from_json(read_json_file(a.estimates), a.estimates);
  if (!a.fusion_report.empty()) {
    const Json r = read_json_file(a.fusion_report);
    for (const Json& row : r.at("registrations")) {
      const auto name = json_get<std::string>(row, "name", a.fusion_report);
      est.poses["scan/" + name] = transform_from_json(row.at("transform"), a.fusion_report);
    }
  }
  if (!a.camera_dir.empty()) {
    for (const fs::path& p : list_files(a.camera_dir, ".json")) {
      if (ends_with(p.filename().string(), ".pixels.json")) continue;
      const CameraModel cam = read_camera(p);
      est.poses["camera/" + cam.id] = cam.world_from_camera;
    }
  }
  if (!a.markers.empty()) {
    for (const Marker& m : read_marker_set(a.markers).markers) {
      est.points["marker/" + m.id] = m.position;
    }
  }
  if (!a.track_report.empty()) {
    const Json r = read_json_file(a.track_report);
    if (r.contains("array")) {
      est.poses["array"] = transform_from_json(r["array"].at("model_from_array"), "array");
    }
    if (r.contains("icp")) est.poses["drill"] = transform_from_json(r["icp"].at("transform"), "icp");
  }
  if (!a.skeleton.empty()) {
    const auto frames = read_skeleton_track(a.skeleton);
    const double rate = read_json_file(bundle / "config.json").at("rate_hz").get<double>();
    for (const Skeleton3DFrame& f : frames) {
      const long k = std::lround(f.t * rate);
      for (std::size_t j = 0; j < kSkeletonJoints; ++j) {
        if (!f.joints[j].valid) continue;
        est.points["joint/" + std::to_string(k) + "/" + std::to_string(j)] = f.joints[j].position;
      }
    }
  }
  const TruthComparison cmp = compare_to_truth(truth, est);
  const Json j = truth_comparison_to_json(cmp);
  if (!a.report.empty()) write_json_file(a.report, j);

  const double max_t = j["max_translation_mm"];
  const double max_r = j["max_rotation_deg"];
  const double max_p = j["max_point_mm"];
  std::cout << "poses: " << cmp.poses.size() << ", max translation "
            << format_fixed(max_t) << " mm, max rotation " << format_fixed(max_r, 3)
            << " deg\npoints: " << cmp.points.size() << ", max error " << format_fixed(max_p)
            << " mm\n";
  bool ok = true;
  if (a.max_translation_mm >= 0 && max_t > a.max_translation_mm) ok = false;
  if (a.max_rotation_deg >= 0 && max_r > a.max_rotation_deg) ok = false;
  if (a.max_point_mm >= 0 && max_p > a.max_point_mm) ok = false;
  if (!ok) std::cerr << "error: errors exceed the requested thresholds\n";
  return ok ? kExitOk : kExitFailure;
}

// Expands `--config FILE` into flags placed before the user's own flags,
// so that flags given on the command line take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (config.empty()) return args;
  const Json j = read_json_file(config);
  if (!j.is_object()) throw Error(ErrorCode::kParse, config + ": expected an object");
  std::vector<std::string> injected;
  auto scalar = [&](const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  };
  for (const auto& [key, value] : j.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back("--" + key);
      continue;
    }
    injected.push_back("--" + key);
    if (value.is_array()) {
      for (const Json& v : value) injected.push_back(scalar(v));
    } else {
      injected.push_back(scalar(value));
    }
  }
  auto first_flag = std::find_if(args.begin(), args.end(),
                                 [](const std::string& s) { return s.rfind("-", 0) == 0; });
  args.insert(first_flag, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surgical digital-twin reconstruction toolkit"};
  app.name("twinfuse");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer(
      "Every subcommand accepts --config FILE: a JSON object whose keys are flag names\n"
      "without the leading dashes. Flags given on the command line win.\n"
      "Exit codes: 0 success, 1 pipeline failure, 2 usage error.");

  FuseArgs fuse;
  RegisterArgs reg;
  TrackArgs track;
  MocapArgs mocap;
  MetricsArgs metrics;
  SceneArgs scene;
  SynthArgs synth;
  add_fuse(app, fuse);
  add_register(app, reg);
  add_track(app, track);
  add_mocap(app, mocap);
  add_metrics(app, metrics);
  add_scene(app, scene);
  add_synth(app, synth);
  for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    sub->add_option("--config", "JSON file with default flag values");
    for (CLI::App* leaf : sub->get_subcommands([](CLI::App*) { return true; })) {
      leaf->add_option("--config", "JSON file with default flag values");
    }
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("fuse")) return run_fuse(fuse);
    if (app.got_subcommand("register-cameras")) return run_register(reg);
    if (app.got_subcommand("track")) return run_track(track);
    if (app.got_subcommand("mocap")) return run_mocap(mocap);
    if (app.got_subcommand("metrics")) return run_metrics(metrics);
    if (app.got_subcommand("scene")) return run_scene(scene);
    if (app.got_subcommand("synth")) return run_synth(synth);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
