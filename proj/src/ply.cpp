#include "twinfuse/ply.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "twinfuse/error.hpp"

namespace twinfuse {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

enum class ScalarType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

ScalarType parse_scalar(const std::string& name) {
  if (name == "char" || name == "int8") return ScalarType::kInt8;
  if (name == "uchar" || name == "uint8") return ScalarType::kUint8;
  if (name == "short" || name == "int16") return ScalarType::kInt16;
  if (name == "ushort" || name == "uint16") return ScalarType::kUint16;
  if (name == "int" || name == "int32") return ScalarType::kInt32;
  if (name == "uint" || name == "uint32") return ScalarType::kUint32;
  if (name == "float" || name == "float32") return ScalarType::kFloat32;
  if (name == "double" || name == "float64") return ScalarType::kFloat64;
  throw Error(ErrorCode::kParse, "ply: unknown scalar type '" + name + "'");
}

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::kInt8:
    case ScalarType::kUint8: return 1;
    case ScalarType::kInt16:
    case ScalarType::kUint16: return 2;
    case ScalarType::kInt32:
    case ScalarType::kUint32:
    case ScalarType::kFloat32: return 4;
    case ScalarType::kFloat64: return 8;
  }
  return 0;
}

template <typename T>
double load_as(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(v);
}

double decode(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::kInt8: return load_as<std::int8_t>(p);
    case ScalarType::kUint8: return load_as<std::uint8_t>(p);
    case ScalarType::kInt16: return load_as<std::int16_t>(p);
    case ScalarType::kUint16: return load_as<std::uint16_t>(p);
    case ScalarType::kInt32: return load_as<std::int32_t>(p);
    case ScalarType::kUint32: return load_as<std::uint32_t>(p);
    case ScalarType::kFloat32: return load_as<float>(p);
    case ScalarType::kFloat64: return load_as<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  ScalarType type;
  bool is_list = false;
  ScalarType count_type = ScalarType::kUint8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

enum class Format { kAscii, kBinaryLe };

struct Header {
  Format format = Format::kAscii;
  std::vector<Element> elements;
};

Header read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw Error(ErrorCode::kParse, "ply: missing magic line");
  }
  Header header;
  bool have_format = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string keyword;
    ss >> keyword;
    if (keyword == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii") {
        header.format = Format::kAscii;
      } else if (fmt == "binary_little_endian") {
        header.format = Format::kBinaryLe;
      } else {
        throw Error(ErrorCode::kParse,
                    "ply: unsupported format '" + fmt + "' (line " +
                        std::to_string(line_no) + ")");
      }
      have_format = true;
    } else if (keyword == "element") {
      Element e;
      ss >> e.name >> e.count;
      if (ss.fail()) {
        throw Error(ErrorCode::kParse,
                    "ply: malformed element line " + std::to_string(line_no));
      }
      header.elements.push_back(std::move(e));
    } else if (keyword == "property") {
      if (header.elements.empty()) {
        throw Error(ErrorCode::kParse, "ply: property before element (line " +
                                           std::to_string(line_no) + ")");
      }
      Property p;
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ss >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = parse_scalar(count_type);
        p.type = parse_scalar(item_type);
      } else {
        p.type = parse_scalar(type);
        ss >> p.name;
      }
      header.elements.back().properties.push_back(std::move(p));
    } else if (keyword == "end_header") {
      if (!have_format) throw Error(ErrorCode::kParse, "ply: missing format line");
      return header;
    } else if (keyword == "comment" || keyword == "obj_info" || keyword.empty()) {
      continue;
    } else {
      throw Error(ErrorCode::kParse, "ply: unexpected header keyword '" +
                                         keyword + "' (line " +
                                         std::to_string(line_no) + ")");
    }
  }
  throw Error(ErrorCode::kParse, "ply: header not terminated");
}

struct VertexLayout {
  int x = -1, y = -1, z = -1, r = -1, g = -1, b = -1;
};

VertexLayout vertex_layout(const Element& e) {
  VertexLayout layout;
  for (std::size_t i = 0; i < e.properties.size(); ++i) {
    const std::string& n = e.properties[i].name;
    const int idx = static_cast<int>(i);
    if (n == "x") layout.x = idx;
    else if (n == "y") layout.y = idx;
    else if (n == "z") layout.z = idx;
    else if (n == "red") layout.r = idx;
    else if (n == "green") layout.g = idx;
    else if (n == "blue") layout.b = idx;
  }
  if (layout.x < 0 || layout.y < 0 || layout.z < 0) {
    throw Error(ErrorCode::kParse, "ply: vertex element lacks x/y/z");
  }
  return layout;
}

void skip_element_binary(std::istream& in, const Element& e) {
  for (std::size_t i = 0; i < e.count; ++i) {
    for (const Property& p : e.properties) {
      if (p.is_list) {
        char buf[8];
        in.read(buf, static_cast<std::streamsize>(scalar_size(p.count_type)));
        const auto n = static_cast<std::size_t>(decode(p.count_type, buf));
        in.ignore(static_cast<std::streamsize>(n * scalar_size(p.type)));
      } else {
        in.ignore(static_cast<std::streamsize>(scalar_size(p.type)));
      }
    }
    if (!in) throw Error(ErrorCode::kParse, "ply: truncated element '" + e.name + "'");
  }
}

void skip_element_ascii(std::istream& in, const Element& e) {
  std::string line;
  for (std::size_t i = 0; i < e.count; ++i) {
    if (!std::getline(in, line)) {
      throw Error(ErrorCode::kParse, "ply: truncated element '" + e.name + "'");
    }
  }
}

std::uint8_t to_channel(double v) {
  if (v < 0.0) return 0;
  if (v > 255.0) return 255;
  return static_cast<std::uint8_t>(v);
}

}  // namespace

void write_ply(std::ostream& out, const PointCloud& cloud, PlyEncoding encoding) {
  check_cloud(cloud);
  const bool color = cloud.has_colors();
  out << "ply\n";
  out << (encoding == PlyEncoding::kAscii ? "format ascii 1.0\n"
                                          : "format binary_little_endian 1.0\n");
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  if (encoding == PlyEncoding::kAscii) {
    std::ostringstream line;
    line.precision(9);  // exact float32 round trip
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      line.str({});
      const Vec3& p = cloud.points[i];
      line << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' '
           << static_cast<float>(p.z());
      if (color) {
        const Color& c = cloud.colors[i];
        line << ' ' << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]);
      }
      line << '\n';
      out << line.str();
    }
  } else {
    std::vector<char> record(12 + (color ? 3 : 0));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const float xyz[3] = {static_cast<float>(cloud.points[i].x()),
                            static_cast<float>(cloud.points[i].y()),
                            static_cast<float>(cloud.points[i].z())};
      std::memcpy(record.data(), xyz, 12);
      if (color) std::memcpy(record.data() + 12, cloud.colors[i].data(), 3);
      out.write(record.data(), static_cast<std::streamsize>(record.size()));
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "ply: write failed");
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_ply(out, cloud, encoding);
}

PointCloud read_ply(std::istream& in, std::string frame) {
  const Header header = read_header(in);
  PointCloud cloud;
  cloud.frame = std::move(frame);
  for (const Element& e : header.elements) {
    if (e.name != "vertex") {
      if (header.format == Format::kAscii) skip_element_ascii(in, e);
      else skip_element_binary(in, e);
      continue;
    }
    const VertexLayout layout = vertex_layout(e);
    const bool color = layout.r >= 0 && layout.g >= 0 && layout.b >= 0;
    cloud.points.reserve(e.count);
    if (color) cloud.colors.reserve(e.count);
    std::vector<double> values(e.properties.size());

    if (header.format == Format::kAscii) {
      std::string line;
      for (std::size_t i = 0; i < e.count; ++i) {
        if (!std::getline(in, line)) {
          throw Error(ErrorCode::kParse, "ply: truncated vertex data at vertex " +
                                             std::to_string(i));
        }
        std::istringstream ss(line);
        for (std::size_t k = 0; k < e.properties.size(); ++k) {
          if (e.properties[k].is_list) {
            throw Error(ErrorCode::kParse, "ply: list property in vertex element");
          }
          ss >> values[k];
        }
        if (ss.fail()) {
          throw Error(ErrorCode::kParse, "ply: malformed vertex line " + std::to_string(i));
        }
        cloud.points.emplace_back(values[layout.x], values[layout.y], values[layout.z]);
        if (color) {
          cloud.colors.push_back({to_channel(values[layout.r]), to_channel(values[layout.g]),
                                  to_channel(values[layout.b])});
        }
      }
    } else {
      std::size_t stride = 0;
      std::vector<std::size_t> offsets;
      for (const Property& p : e.properties) {
        if (p.is_list) throw Error(ErrorCode::kParse, "ply: list property in vertex element");
        offsets.push_back(stride);
        stride += scalar_size(p.type);
      }
      std::vector<char> buf(stride * e.count);
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw Error(ErrorCode::kParse, "ply: truncated binary vertex data");
      }
      for (std::size_t i = 0; i < e.count; ++i) {
        const char* rec = buf.data() + i * stride;
        for (std::size_t k = 0; k < e.properties.size(); ++k) {
          values[k] = decode(e.properties[k].type, rec + offsets[k]);
        }
        cloud.points.emplace_back(values[layout.x], values[layout.y], values[layout.z]);
        if (color) {
          cloud.colors.push_back({to_channel(values[layout.r]), to_channel(values[layout.g]),
                                  to_channel(values[layout.b])});
        }
      }
    }
    // Vertex data is all we need; later elements are ignored.
    break;
  }
  check_cloud(cloud);
  return cloud;
}

PointCloud read_ply(const std::filesystem::path& path, std::string frame) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  try {
    return read_ply(in, std::move(frame));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace twinfuse
