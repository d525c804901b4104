#include "twinfuse/json_io.hpp"

#include <fstream>
#include <sstream>

#include "twinfuse/error.hpp"

namespace twinfuse {

Json vec3_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const Json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kParse, context + ": expected an array of 3 numbers");
  }
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) {
      throw Error(ErrorCode::kParse, context + "[" + std::to_string(k) + "]: not a number");
    }
    v(k) = j[k].get<double>();
  }
  return v;
}

Json transform_to_json(const RigidTransform& t) {
  const Quat& q = t.rotation();
  return Json{{"t_m", vec3_to_json(t.translation())},
              {"q_wxyz", Json::array({q.w(), q.x(), q.y(), q.z()})}};
}

RigidTransform transform_from_json(const Json& j, const std::string& context,
                                   std::string from_frame, std::string to_frame) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, context + ": expected an object");
  if (!j.contains("t_m")) throw Error(ErrorCode::kParse, context + ": missing field 't_m'");
  if (!j.contains("q_wxyz")) throw Error(ErrorCode::kParse, context + ": missing field 'q_wxyz'");
  const Vec3 t = vec3_from_json(j["t_m"], context + ".t_m");
  const Json& q = j["q_wxyz"];
  if (!q.is_array() || q.size() != 4) {
    throw Error(ErrorCode::kParse, context + ".q_wxyz: expected an array of 4 numbers");
  }
  double c[4];
  for (int k = 0; k < 4; ++k) {
    if (!q[k].is_number()) {
      throw Error(ErrorCode::kParse, context + ".q_wxyz[" + std::to_string(k) + "]: not a number");
    }
    c[k] = q[k].get<double>();
  }
  return RigidTransform::unchecked(Quat(c[0], c[1], c[2], c[3]), t, std::move(from_frame),
                                   std::move(to_frame));
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace twinfuse
