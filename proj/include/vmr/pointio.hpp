#pragma once

// Point file I/O.
//   *.bin : little-endian float32 triples (x, y, z), no header
//   *.xyz : ASCII, one "x y z" triple per line ('#' starts a comment)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vmr/cloud.hpp"
#include "vmr/errors.hpp"

namespace vmr::io {

namespace fs = std::filesystem;

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000FF00u) | ((v << 8) & 0x00FF0000u) | (v << 24);
}

}  // namespace detail

inline void write_le_floats(std::ostream& os, const float* values, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t le = detail::byteswap32(std::bit_cast<std::uint32_t>(values[i]));
      os.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  }
}

inline std::vector<float> read_le_floats(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % sizeof(float) != 0) throw IoError(path.string() + ": size is not a multiple of 4 bytes");
  std::vector<float> values(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("short read from " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) v = std::bit_cast<float>(detail::byteswap32(std::bit_cast<std::uint32_t>(v)));
  }
  return values;
}

inline PointCloud read_points_bin(const fs::path& path, Frame frame = Frame::LocalLevel) {
  const auto values = read_le_floats(path);
  if (values.size() % 3 != 0) throw IoError(path.string() + ": float count is not a multiple of 3");
  PointCloud cloud(frame);
  cloud.points.reserve(values.size() / 3);
  for (std::size_t i = 0; i < values.size(); i += 3) cloud.points.emplace_back(values[i], values[i + 1], values[i + 2]);
  return cloud;
}

inline void write_points_bin(const fs::path& path, const PointCloud& cloud) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<float> buf;
  buf.reserve(cloud.size() * 3);
  for (const auto& p : cloud.points) {
    buf.push_back(static_cast<float>(p.x()));
    buf.push_back(static_cast<float>(p.y()));
    buf.push_back(static_cast<float>(p.z()));
  }
  write_le_floats(out, buf.data(), buf.size());
  if (!out) throw IoError("write failed for " + path.string());
}

inline PointCloud import_xyz(const fs::path& path, Frame frame = Frame::LocalLevel) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PointCloud cloud(frame);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x)) continue;  // blank line
    if (!(ss >> y >> z)) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y z'");
    cloud.points.emplace_back(x, y, z);
  }
  return cloud;
}

/// Reads either format, chosen by extension.
inline PointCloud read_points(const fs::path& path, Frame frame = Frame::LocalLevel) {
  const auto ext = path.extension().string();
  if (ext == ".xyz" || ext == ".txt") return import_xyz(path, frame);
  return read_points_bin(path, frame);
}

}  // namespace vmr::io
