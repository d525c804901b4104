#include "twinfuse/markers.hpp"

#include <set>

#include "twinfuse/error.hpp"
#include "twinfuse/json_io.hpp"

namespace twinfuse {

std::optional<Vec3> MarkerSet::find(const std::string& id) const {
  for (const Marker& m : markers) {
    if (m.id == id) return m.position;
  }
  return std::nullopt;
}

void check_marker_set(const MarkerSet& set) {
  std::set<std::string> seen;
  for (const Marker& m : set.markers) {
    if (!seen.insert(m.id).second) {
      throw Error(ErrorCode::kParameter, "duplicate marker id '" + m.id + "'");
    }
    if (!is_finite(m.position)) {
      throw Error(ErrorCode::kParameter, "marker '" + m.id + "' has a non-finite position");
    }
  }
}

MarkerSet apply(const RigidTransform& t, const MarkerSet& set) {
  if (set.frame != t.from_frame()) {
    throw Error(ErrorCode::kFrameMismatch, "marker set in frame '" + set.frame +
                                               "' but transform maps '" + t.from_frame() + "'");
  }
  MarkerSet out{t.to_frame(), set.markers};
  for (Marker& m : out.markers) m.position = t * m.position;
  return out;
}

MarkerSet read_marker_set(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  const std::string ctx = path.string();
  MarkerSet set;
  set.frame = json_get<std::string>(j, "frame", ctx);
  if (!j.contains("markers") || !j["markers"].is_array()) {
    throw Error(ErrorCode::kParse, ctx + ": missing array 'markers'");
  }
  std::size_t i = 0;
  for (const Json& m : j["markers"]) {
    const std::string mctx = ctx + ".markers[" + std::to_string(i++) + "]";
    Marker marker;
    marker.id = json_get<std::string>(m, "id", mctx);
    if (!m.contains("position_m")) {
      throw Error(ErrorCode::kParse, mctx + ": missing field 'position_m'");
    }
    marker.position = vec3_from_json(m["position_m"], mctx + ".position_m");
    set.markers.push_back(std::move(marker));
  }
  check_marker_set(set);
  return set;
}

void write_marker_set(const std::filesystem::path& path, const MarkerSet& set) {
  Json markers = Json::array();
  for (const Marker& m : set.markers) {
    markers.push_back({{"id", m.id}, {"position_m", vec3_to_json(m.position)}});
  }
  write_json_file(path, Json{{"frame", set.frame}, {"markers", markers}});
}

}  // namespace twinfuse
