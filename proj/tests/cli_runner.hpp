#pragma once

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

namespace twinfuse::testing {

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

// Runs the twinfuse binary with `args` from `cwd`.
inline CliRun run_cli(const std::string& args, const std::filesystem::path& cwd = std::filesystem::current_path()) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(TWINFUSE_CLI_PATH) + "' " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// The full synthetic pipeline: generate, fuse, register cameras, mocap,
// tracking, comparison against truth. Returns the first failing step's
// output, or an empty string.
inline std::string run_synthetic_pipeline(const std::filesystem::path& dir, int seed) {
  const std::string steps[] = {
      "synth generate --out bundle --seed " + std::to_string(seed),
      "fuse --scan-dir bundle/scans --out fused",
      "register-cameras --camera-dir bundle/cameras --markers fused/markers_fused.json --out cams",
      "mocap --keypoints bundle/keypoints --camera-dir cams/cameras --table-file bundle/table.json --out mocap",
      "track --track bundle/tracks/instrument_tracker.csv --sync-track bundle/tracks/instrument_camera.csv "
      "--array bundle/instrument/array.json --hemisphere-dir bundle/instrument/hemispheres "
      "--icp-src bundle/instrument/drill_scan.ply --icp-dst bundle/instrument/drill_model.ply --out track",
      "synth compare --bundle bundle --fusion-report fused/report.json --camera-dir cams/cameras "
      "--markers fused/markers_fused.json --skeleton mocap/skeleton.csv --track-report track/track_report.json "
      "--report cmp.json",
  };
  std::filesystem::create_directories(dir);
  for (const std::string& s : steps) {
    const CliRun r = run_cli(s, dir);
    if (r.code != 0) return s + "\n" + r.output;
  }
  return {};
}

}  // namespace twinfuse::testing
