#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse {

struct Marker {
  std::string id;
  Vec3 position = Vec3::Zero();  // meters
};

// Labeled fiducial positions in one frame.
struct MarkerSet {
  std::string frame;
  std::vector<Marker> markers;

  std::size_t size() const { return markers.size(); }
  std::optional<Vec3> find(const std::string& id) const;
};

// Throws kParameter on duplicate ids or non-finite positions.
void check_marker_set(const MarkerSet& set);

MarkerSet apply(const RigidTransform& t, const MarkerSet& set);

MarkerSet read_marker_set(const std::filesystem::path& path);
void write_marker_set(const std::filesystem::path& path, const MarkerSet& set);

}  // namespace twinfuse
