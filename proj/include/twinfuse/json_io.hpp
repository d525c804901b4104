#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "twinfuse/error.hpp"
#include "twinfuse/geometry.hpp"

namespace twinfuse {

using Json = nlohmann::json;

Json vec3_to_json(const Vec3& v);
// `context` names the field in error messages.
Vec3 vec3_from_json(const Json& j, const std::string& context);

// {"t_m": [x,y,z], "q_wxyz": [w,x,y,z]}
Json transform_to_json(const RigidTransform& t);
// The quaternion is kept as stored; see RigidTransform::unchecked.
RigidTransform transform_from_json(const Json& j, const std::string& context,
                                   std::string from_frame = {},
                                   std::string to_frame = {});

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Typed field access that reports `context.key` on failure.
template <typename T>
T json_get(const Json& j, const std::string& key, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::kParse, context + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse,
                context + "." + key + ": " + std::string(e.what()));
  }
}

}  // namespace twinfuse
