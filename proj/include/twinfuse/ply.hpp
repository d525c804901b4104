#pragma once

#include <filesystem>
#include <iosfwd>

#include "twinfuse/geometry.hpp"

namespace twinfuse {

enum class PlyEncoding { kAscii, kBinaryLittleEndian };

// Writes `element vertex` with float x,y,z and, when the cloud carries
// colors, uchar red,green,blue.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyEncoding encoding = PlyEncoding::kBinaryLittleEndian);
void write_ply(std::ostream& out, const PointCloud& cloud,
               PlyEncoding encoding = PlyEncoding::kBinaryLittleEndian);

// Reads the vertex element of an ASCII or binary little-endian PLY file.
// Accepts float/double coordinates and uchar colors; other scalar vertex
// properties are skipped. The returned cloud's frame is `frame`.
PointCloud read_ply(const std::filesystem::path& path, std::string frame = {});
PointCloud read_ply(std::istream& in, std::string frame = {});

}  // namespace twinfuse
