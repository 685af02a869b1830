#pragma once

// Shared scene fixtures for registration-level tests.

#include <filesystem>
#include <string>

#include "vmr/cloudgen.hpp"
#include "vmr/harness/world.hpp"

namespace vmr::fixture {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("vmr_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Points of a freshly sampled world (different seed than the map) within
/// `radius` of `center` (x/y) and below `z_max`, voxel filtered: a stand-in
/// for a generated cloud already expressed in the local-level frame.
inline PointCloud local_view(const harness::SyntheticWorld& world, const Vec2& center, double radius, double z_max,
                             double density, std::uint64_t seed, double voxel = 0.2) {
  const auto sampled = harness::sample_world(world, density, seed);
  PointCloud view(Frame::LocalLevel);
  for (const auto& p : sampled.cloud.points) {
    if ((p.head<2>() - center).norm() <= radius && p.z() < z_max) view.points.push_back(p);
  }
  return voxel_downsample(view, voxel);
}

}  // namespace vmr::fixture
