#pragma once

// Prior 3-D maps: square tiles on the local-level x/y grid with rectangular
// ROI queries (outdoor), and the ground/surround partition of an indoor map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "vmr/cloud.hpp"
#include "vmr/errors.hpp"
#include "vmr/pointio.hpp"

namespace vmr {

namespace fs = std::filesystem;

struct TileId {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  auto operator<=>(const TileId&) const = default;
};

inline TileId tile_of(double x, double y, double tile_size) {
  return {static_cast<std::int64_t>(std::floor(x / tile_size)), static_cast<std::int64_t>(std::floor(y / tile_size))};
}

/// Axis-aligned rectangle [min, max) in the local-level x/y plane.
struct Rect2 {
  Vec2 min = Vec2::Zero();
  Vec2 max = Vec2::Zero();
};

inline Rect2 tile_bounds(const TileId& id, double tile_size) {
  return {Vec2(id.ix * tile_size, id.iy * tile_size), Vec2((id.ix + 1) * tile_size, (id.iy + 1) * tile_size)};
}

struct TileEntry {
  std::string file;  // relative to the index directory
  std::size_t count = 0;
};

/// Tile metadata, persisted as index.json next to a tiles/ directory.
struct TileIndex {
  double tile_size = 50.0;
  fs::path root;
  std::map<TileId, TileEntry> entries;
};

struct Tile {
  TileId id;
  Rect2 bounds;
  PointCloud points{Frame::LocalLevel};
};

/// Loaded tile store. Immutable after construction, so concurrent queries are safe.
class MapStore {
 public:
  MapStore() = default;

  /// Buckets an in-memory local-level cloud into tiles.
  static MapStore from_cloud(const PointCloud& cloud, double tile_size) {
    if (!(tile_size > 0.0)) throw InvalidArgument("tile_size must be > 0");
    MapStore s;
    s.tile_size_ = tile_size;
    for (const auto& p : cloud.points) s.insert(p);
    if (s.tiles_.empty()) throw EmptyStore("no points to index");
    return s;
  }

  static MapStore load(const TileIndex& index) {
    MapStore s;
    s.tile_size_ = index.tile_size;
    for (const auto& [id, entry] : index.entries) {
      Tile t{id, tile_bounds(id, index.tile_size), io::read_points_bin(index.root / entry.file)};
      if (t.points.size() != entry.count) {
        throw IoError("tile " + entry.file + " holds " + std::to_string(t.points.size()) + " points, index says " +
                      std::to_string(entry.count));
      }
      s.tiles_.emplace(id, std::move(t));
    }
    if (s.tiles_.empty()) throw EmptyStore("index lists no tiles");
    return s;
  }

  double tile_size() const noexcept { return tile_size_; }
  const std::map<TileId, Tile>& tiles() const noexcept { return tiles_; }

  std::size_t point_count() const {
    std::size_t n = 0;
    for (const auto& [id, t] : tiles_) n += t.points.size();
    return n;
  }

 private:
  void insert(const Vec3& p) {
    const auto id = tile_of(p.x(), p.y(), tile_size_);
    auto [it, inserted] = tiles_.try_emplace(id);
    if (inserted) {
      it->second.id = id;
      it->second.bounds = tile_bounds(id, tile_size_);
    }
    it->second.points.points.push_back(p);
  }

  double tile_size_ = 50.0;
  std::map<TileId, Tile> tiles_;
};

// ---------------------------------------------------------------------------
// Index persistence

inline void write_index(const TileIndex& index) {
  nlohmann::json j;
  j["tile_size"] = index.tile_size;
  j["tiles"] = nlohmann::json::array();
  for (const auto& [id, e] : index.entries) {
    j["tiles"].push_back({{"id", {id.ix, id.iy}}, {"file", e.file}, {"count", e.count}});
  }
  std::ofstream out(index.root / "index.json");
  if (!out) throw IoError("cannot write " + (index.root / "index.json").string());
  out << j.dump(2) << '\n';
}

/// Reads an index.json (or the directory containing one).
inline TileIndex read_index(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "index.json" : path;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  TileIndex index;
  index.root = file.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    index.tile_size = j.at("tile_size").get<double>();
    for (const auto& t : j.at("tiles")) {
      const TileId id{t.at("id").at(0).get<std::int64_t>(), t.at("id").at(1).get<std::int64_t>()};
      if (!index.entries.emplace(id, TileEntry{t.at("file").get<std::string>(), t.at("count").get<std::size_t>()}).second) {
        throw IoError("duplicate tile id in " + file.string());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(file.string() + ": " + e.what());
  }
  if (!(index.tile_size > 0.0)) throw IoError(file.string() + ": tile_size must be > 0");
  return index;
}

/// Splits every point file in `tiles_dir` (*.bin and *.xyz, top level only)
/// into square tiles, writes tiles/<ix>_<iy>.bin plus index.json into
/// `tiles_dir`, and returns the index.
inline TileIndex build_index(const fs::path& tiles_dir, double tile_size) {
  if (!(tile_size > 0.0)) throw InvalidArgument("tile_size must be > 0");
  if (!fs::is_directory(tiles_dir)) throw IoError(tiles_dir.string() + " is not a directory");
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(tiles_dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".bin" || ext == ".xyz")) inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  PointCloud all(Frame::LocalLevel);
  for (const auto& f : inputs) append_cloud(all, io::read_points(f));
  if (all.empty()) throw EmptyStore("no points found in " + tiles_dir.string());

  const auto store = MapStore::from_cloud(all, tile_size);
  TileIndex index;
  index.tile_size = tile_size;
  index.root = tiles_dir;
  fs::create_directories(tiles_dir / "tiles");
  for (const auto& [id, tile] : store.tiles()) {
    const std::string rel = "tiles/" + std::to_string(id.ix) + "_" + std::to_string(id.iy) + ".bin";
    io::write_points_bin(tiles_dir / rel, tile.points);
    index.entries.emplace(id, TileEntry{rel, tile.points.size()});
  }
  write_index(index);
  return index;
}

/// Points of every tile touching the square [center +- extent/2]^2, clipped
/// to that square (closed). Throws EmptyRoi when nothing falls inside.
inline PointCloud query_roi(const MapStore& store, const Vec2& center, double extent) {
  if (!(extent > 0.0)) throw InvalidArgument("query_roi: extent must be > 0");
  const double h = extent / 2.0;
  const Vec2 lo = center.array() - h;
  const Vec2 hi = center.array() + h;
  const auto first = tile_of(lo.x(), lo.y(), store.tile_size());
  const auto last = tile_of(hi.x(), hi.y(), store.tile_size());
  PointCloud out(Frame::LocalLevel);
  bool touched = false;
  for (auto it = store.tiles().lower_bound({first.ix, std::numeric_limits<std::int64_t>::min()});
       it != store.tiles().end() && it->first.ix <= last.ix; ++it) {
    if (it->first.iy < first.iy || it->first.iy > last.iy) continue;
    touched = true;
    for (const auto& p : it->second.points.points) {
      if (p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y()) out.points.push_back(p);
    }
  }
  if (!touched || out.empty()) {
    throw EmptyRoi("no map points within " + std::to_string(extent) + " m of (" + std::to_string(center.x()) + ", " +
                   std::to_string(center.y()) + ")");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground / surround partition

struct GroundSplitConfig {
  double inlier_distance = 0.15;
  double max_normal_angle_deg = 10.0;
  int iterations = 200;
  std::uint64_t seed = 42;
  /// Surround points higher than this above the ground plane are dropped.
  double ceiling_height = 2.2;
  double min_inlier_ratio = 0.10;
};

/// Plane n.p = d with unit normal n pointing up.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

struct GroundSplit {
  PointCloud ground;
  PointCloud surround;
  Plane plane;
  std::size_t ceiling_removed = 0;
};

namespace detail {

inline std::size_t count_inliers(const std::vector<Vec3>& pts, const Plane& pl, double tol) {
  std::size_t n = 0;
  for (const auto& p : pts) n += std::abs(pl.signed_distance(p)) <= tol;
  return n;
}

}  // namespace detail

/// RANSAC ground-plane extraction. Hypotheses are drawn from a canonical
/// (lexicographically sorted) ordering, so the partition does not depend on
/// the input order for a fixed seed. Output clouds keep input order.
inline GroundSplit split_ground_plane(const PointCloud& cloud, const GroundSplitConfig& cfg) {
  if (cloud.empty()) throw InvalidArgument("split: empty cloud");
  const auto& pts = cloud.points;
  std::vector<std::size_t> canon(pts.size());
  std::iota(canon.begin(), canon.end(), std::size_t{0});
  std::stable_sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(pts[a].data(), pts[a].data() + 3, pts[b].data(), pts[b].data() + 3);
  });

  const double cos_limit = std::cos(cfg.max_normal_angle_deg * kDegToRad);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  Plane best;
  std::size_t best_count = 0;
  bool found = false;
  if (pts.size() >= 3) {
    for (int it = 0; it < cfg.iterations; ++it) {
      const auto i = pick(rng), j = pick(rng), k = pick(rng);
      if (i == j || j == k || i == k) continue;
      const Vec3& a = pts[canon[i]];
      Vec3 n = (pts[canon[j]] - a).cross(pts[canon[k]] - a);
      const double len = n.norm();
      if (len < 1e-9) continue;
      n /= len;
      if (n.z() < 0) n = -n;
      if (n.z() < cos_limit) continue;
      const Plane cand{n, n.dot(a)};
      const auto count = detail::count_inliers(pts, cand, cfg.inlier_distance);
      if (count > best_count) {
        best = cand;
        best_count = count;
        found = true;
      }
    }
  }
  if (!found || static_cast<double>(best_count) < cfg.min_inlier_ratio * static_cast<double>(pts.size())) {
    throw NoGroundPlane("ground plane supports " + std::to_string(best_count) + " of " + std::to_string(pts.size()) +
                        " points");
  }

  // least-squares refit on the consensus set
  Vec3 mean = Vec3::Zero();
  std::size_t m = 0;
  for (const auto& p : pts) {
    if (std::abs(best.signed_distance(p)) <= cfg.inlier_distance) {
      mean += p;
      ++m;
    }
  }
  mean /= static_cast<double>(m);
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : pts) {
    if (std::abs(best.signed_distance(p)) <= cfg.inlier_distance) scatter += (p - mean) * (p - mean).transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  Vec3 n = es.eigenvectors().col(0);
  if (n.z() < 0) n = -n;
  if (n.z() >= cos_limit && m >= 3) {
    const Plane refined{n, n.dot(mean)};
    if (detail::count_inliers(pts, refined, cfg.inlier_distance) >= best_count) best = refined;
  }

  GroundSplit out{PointCloud(cloud.frame), PointCloud(cloud.frame), best, 0};
  for (const auto& p : pts) {
    const double h = best.signed_distance(p);
    if (std::abs(h) <= cfg.inlier_distance) {
      out.ground.points.push_back(p);
    } else if (h > cfg.ceiling_height) {
      ++out.ceiling_removed;
    } else {
      out.surround.points.push_back(p);
    }
  }
  return out;
}

/// Indoor prior map with its ground/surround partition.
struct IndoorMap {
  PointCloud full;
  PointCloud ground;
  PointCloud surround;
};

inline IndoorMap split_indoor(const PointCloud& map, const GroundSplitConfig& cfg) {
  require_frame(map, Frame::LocalLevel, "split_indoor");
  auto s = split_ground_plane(map, cfg);
  return {map, std::move(s.ground), std::move(s.surround)};
}

/// Loads an indoor map point file; uses a cached split (<stem>.ground.bin,
/// <stem>.surround.bin next to it) when present, otherwise splits and caches.
inline IndoorMap load_indoor_map(const fs::path& file, const GroundSplitConfig& cfg, bool write_cache = true) {
  IndoorMap m;
  m.full = io::read_points(file);
  const auto stem = file.parent_path() / file.stem();
  const fs::path g = stem.string() + ".ground.bin";
  const fs::path s = stem.string() + ".surround.bin";
  if (fs::exists(g) && fs::exists(s)) {
    m.ground = io::read_points_bin(g);
    m.surround = io::read_points_bin(s);
    return m;
  }
  m = split_indoor(m.full, cfg);
  if (write_cache) {
    io::write_points_bin(g, m.ground);
    io::write_points_bin(s, m.surround);
  }
  return m;
}

}  // namespace vmr
