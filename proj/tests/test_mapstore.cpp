#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vmr/mapstore.hpp"
#include "vmr/pointio.hpp"

namespace vmr {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("vmr_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

PointCloud cloud_of(std::vector<Vec3> pts) {
  PointCloud c(Frame::LocalLevel);
  c.points = std::move(pts);
  return c;
}

// float32 round trip, so in-memory expectations match tile files
Vec3 f32(const Vec3& p) {
  return {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())};
}

TEST(BuildIndex, SinglePoint) {
  TempDir dir("single");
  io::write_points_bin(dir.path() / "a.bin", cloud_of({{5, 5, 1}}));
  const auto index = build_index(dir.path(), 10.0);
  ASSERT_EQ(index.entries.size(), 1u);
  EXPECT_EQ(index.entries.begin()->first, (TileId{0, 0}));
  EXPECT_EQ(index.entries.begin()->second.count, 1u);
}

TEST(BuildIndex, FloorIndexing) {
  TempDir dir("floor");
  io::write_points_bin(dir.path() / "a.bin", cloud_of({{5, 5, 0}, {15, 5, 0}, {-0.5, -12, 0}}));
  const auto index = build_index(dir.path(), 10.0);
  std::set<TileId> ids;
  for (const auto& [id, e] : index.entries) ids.insert(id);
  EXPECT_EQ(ids, (std::set<TileId>{{0, 0}, {1, 0}, {-1, -2}}));
}

TEST(BuildIndex, EmptyDirectory) {
  TempDir dir("empty");
  EXPECT_THROW(build_index(dir.path(), 10.0), EmptyStore);
  EXPECT_THROW(build_index(dir.path() / "missing", 10.0), IoError);
}

TEST(BuildIndex, CountsMatchGroupingOracle) {
  TempDir dir("grouping");
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-180.0, 260.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100000; ++i) pts.emplace_back(u(rng), u(rng), u(rng) * 0.01);
  io::write_points_bin(dir.path() / "part1.bin", cloud_of({pts.begin(), pts.begin() + 60000}));
  // second half as ASCII xyz
  {
    std::ofstream out(dir.path() / "part2.xyz");
    out.precision(17);
    out << "# x y z\n";
    for (auto it = pts.begin() + 60000; it != pts.end(); ++it) out << it->x() << ' ' << it->y() << ' ' << it->z() << '\n';
  }
  const double size = 50.0;
  const auto index = build_index(dir.path(), size);

  std::map<std::pair<long, long>, std::size_t> oracle;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 p = i < 60000 ? f32(pts[i]) : pts[i];
    ++oracle[{static_cast<long>(std::floor(p.x() / size)), static_cast<long>(std::floor(p.y() / size))}];
  }
  ASSERT_EQ(index.entries.size(), oracle.size());
  for (const auto& [id, e] : index.entries) EXPECT_EQ(e.count, (oracle.at({id.ix, id.iy})));

  // persisted index reloads to the same store
  const auto reread = read_index(dir.path());
  EXPECT_EQ(reread.tile_size, size);
  EXPECT_EQ(reread.entries.size(), index.entries.size());
  const auto store = MapStore::load(reread);
  EXPECT_EQ(store.point_count(), pts.size());
  for (const auto& [id, tile] : store.tiles()) {
    for (const auto& p : tile.points.points) {
      EXPECT_GE(p.x(), tile.bounds.min.x());
      EXPECT_LT(p.x(), tile.bounds.max.x());
      EXPECT_GE(p.y(), tile.bounds.min.y());
      EXPECT_LT(p.y(), tile.bounds.max.y());
    }
  }
}

TEST(ReadIndex, RejectsMalformed) {
  TempDir dir("malformed");
  std::ofstream(dir.path() / "index.json") << R"({"tile_size": 50, "tiles": [{"id": [0], "file": "x", "count": 1}]})";
  EXPECT_THROW(read_index(dir.path()), IoError);
  std::ofstream(dir.path() / "index.json") << R"({"tile_size": 0, "tiles": []})";
  EXPECT_THROW(read_index(dir.path()), IoError);
}

MapStore random_store(std::uint64_t seed, std::vector<Vec3>* all) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, 240.0), uy(-60.0, 90.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 30000; ++i) pts.emplace_back(ux(rng), uy(rng), 0.0);
  if (all) *all = pts;
  return MapStore::from_cloud(cloud_of(std::move(pts)), 50.0);
}

TEST(QueryRoi, ContainedInSquare) {
  std::vector<Vec3> all;
  const auto store = random_store(3, &all);
  Vec3 c = Vec3::Zero();
  for (const auto& p : all) c += p;
  c /= static_cast<double>(all.size());
  const auto roi = query_roi(store, c.head<2>(), 100.0);
  ASSERT_FALSE(roi.empty());
  for (const auto& p : roi.points) {
    EXPECT_LE(std::abs(p.x() - c.x()), 50.0);
    EXPECT_LE(std::abs(p.y() - c.y()), 50.0);
  }
}

TEST(QueryRoi, OutsideMapThrows) {
  const auto store = random_store(3, nullptr);
  EXPECT_THROW(query_roi(store, Vec2(1000.0, 1000.0), 100.0), EmptyRoi);
  EXPECT_THROW(query_roi(store, Vec2(0, 0), 0.0), InvalidArgument);
}

TEST(QueryRoi, MatchesFullScanOracle) {
  std::vector<Vec3> all;
  const auto store = random_store(4, &all);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> cx(-40.0, 280.0), cy(-100.0, 130.0), ext(1.0, 160.0);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vec2 c(cx(rng), cy(rng));
    const double e = ext(rng);
    std::vector<Vec3> expected;
    for (const auto& p : all) {
      if (std::abs(p.x() - c.x()) <= e / 2 && std::abs(p.y() - c.y()) <= e / 2) expected.push_back(p);
    }
    if (expected.empty()) {
      EXPECT_THROW(query_roi(store, c, e), EmptyRoi);
      continue;
    }
    const auto got = query_roi(store, c, e);
    EXPECT_EQ(oracle::sorted(got.points), oracle::sorted(expected));
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(QueryRoiProperty, NestedExtentsAreSubsets) {
  const auto store = random_store(6, nullptr);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> cx(20.0, 220.0), cy(-40.0, 70.0), ext(5.0, 120.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec2 c(cx(rng), cy(rng));
    double e1 = ext(rng), e2 = ext(rng);
    if (e1 > e2) std::swap(e1, e2);
    const auto small = oracle::sorted(query_roi(store, c, e1).points);
    const auto big = oracle::sorted(query_roi(store, c, e2).points);
    auto less = [](const Vec3& a, const Vec3& b) { return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3); };
    EXPECT_TRUE(std::includes(big.begin(), big.end(), small.begin(), small.end(), less));
  }
}

TEST(QueryRoiProperty, FullSquareReturnsEveryPointOnce) {
  TempDir dir("fullsquare");
  std::vector<Vec3> all;
  random_store(8, &all);
  io::write_points_bin(dir.path() / "map.bin", cloud_of(all));
  const auto expected = io::read_points_bin(dir.path() / "map.bin").points;
  const auto store = MapStore::load(build_index(dir.path(), 50.0));
  Vec2 lo(1e9, 1e9), hi(-1e9, -1e9);
  for (const auto& p : expected) {
    lo = lo.cwiseMin(Vec2(p.x(), p.y()));
    hi = hi.cwiseMax(Vec2(p.x(), p.y()));
  }
  const auto got = query_roi(store, (lo + hi) / 2, (hi - lo).maxCoeff() + 1e-6);
  EXPECT_EQ(oracle::sorted(got.points), oracle::sorted(expected));
}

// ---------------------------------------------------------------------------

struct Labeled {
  PointCloud cloud{Frame::LocalLevel};
  std::vector<Vec3> floor, pillars, ceiling;
};

/// Floor z=0 (optionally tilted about x) with four pillar columns that start
/// above the inlier band, plus an optional ceiling.
Labeled floor_and_pillars(std::uint64_t seed, double tilt_deg, bool with_pillars, bool with_ceiling) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Labeled out;
  const Mat3 tilt = Eigen::AngleAxisd(tilt_deg * kDegToRad, Vec3::UnitX()).toRotationMatrix();
  for (int i = 0; i < 4000; ++i) out.floor.push_back(tilt * Vec3(20 * u(rng) - 10, 20 * u(rng) - 10, 0.0));
  if (with_pillars) {
    for (const Vec2 c : {Vec2(-5, -5), Vec2(5, -5), Vec2(5, 5), Vec2(-5, 5)}) {
      for (int i = 0; i < 150; ++i) {
        const double th = 2 * kPi * u(rng);
        out.pillars.push_back(tilt * Vec3(c.x() + 0.3 * std::cos(th), c.y() + 0.3 * std::sin(th), 0.3 + 1.7 * u(rng)));
      }
    }
  }
  if (with_ceiling) {
    for (int i = 0; i < 500; ++i) out.ceiling.push_back(tilt * Vec3(20 * u(rng) - 10, 20 * u(rng) - 10, 3.0));
  }
  for (const auto* v : {&out.floor, &out.pillars, &out.ceiling}) {
    out.cloud.points.insert(out.cloud.points.end(), v->begin(), v->end());
  }
  return out;
}

TEST(SplitIndoor, FloorAndPillarsMatchLabels) {
  const auto m = floor_and_pillars(1, 0.0, true, true);
  const auto split = split_indoor(m.cloud, GroundSplitConfig{});
  EXPECT_EQ(split.ground.points, m.floor);
  EXPECT_EQ(split.surround.points, m.pillars);
  EXPECT_EQ(split.full.size(), m.cloud.size());
}

TEST(SplitIndoor, FloorOnly) {
  const auto m = floor_and_pillars(2, 0.0, false, false);
  IndoorMap split;
  ASSERT_NO_THROW(split = split_indoor(m.cloud, GroundSplitConfig{}));
  EXPECT_TRUE(split.surround.empty());
  EXPECT_EQ(split.ground.size(), m.floor.size());
}

TEST(SplitIndoor, TiltedFloorStillGround) {
  const auto m = floor_and_pillars(3, 2.0, true, false);
  const auto s = split_ground_plane(m.cloud, GroundSplitConfig{});
  EXPECT_EQ(s.ground.points, m.floor);
  EXPECT_EQ(s.surround.points, m.pillars);
  EXPECT_NEAR(std::acos(s.plane.normal.z()) * kRadToDeg, 2.0, 0.05);
}

TEST(SplitIndoor, NoGroundPlane) {
  // a single vertical wall
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud wall(Frame::LocalLevel);
  for (int i = 0; i < 1000; ++i) wall.points.emplace_back(5.0, 10 * u(rng), 3 * u(rng));
  EXPECT_THROW(split_indoor(wall, GroundSplitConfig{}), NoGroundPlane);
  EXPECT_THROW(split_indoor(PointCloud(Frame::Body), GroundSplitConfig{}), FrameMismatch);
}

TEST(SplitIndoorProperty, PermutationStable) {
  const auto m = floor_and_pillars(5, 0.5, true, true);
  const auto base = split_indoor(m.cloud, GroundSplitConfig{});
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud shuffled = m.cloud;
    std::shuffle(shuffled.points.begin(), shuffled.points.end(), rng);
    const auto s = split_indoor(shuffled, GroundSplitConfig{});
    EXPECT_EQ(oracle::sorted(s.ground.points), oracle::sorted(base.ground.points));
    EXPECT_EQ(oracle::sorted(s.surround.points), oracle::sorted(base.surround.points));
  }
}

TEST(LoadIndoorMap, WritesAndUsesCache) {
  TempDir dir("indoor");
  const auto m = floor_and_pillars(7, 0.0, true, true);
  io::write_points_bin(dir.path() / "garage.bin", m.cloud);
  const auto first = load_indoor_map(dir.path() / "garage.bin", GroundSplitConfig{});
  EXPECT_TRUE(fs::exists(dir.path() / "garage.ground.bin"));
  EXPECT_TRUE(fs::exists(dir.path() / "garage.surround.bin"));
  const auto second = load_indoor_map(dir.path() / "garage.bin", GroundSplitConfig{});
  EXPECT_EQ(second.ground.points, first.ground.points);
  EXPECT_EQ(second.surround.points, first.surround.points);
  EXPECT_EQ(first.ground.size(), m.floor.size());
}

}  // namespace
}  // namespace vmr
