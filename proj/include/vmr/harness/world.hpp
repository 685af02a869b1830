#pragma once

// Synthetic worlds built from analytic primitives (rectangles, boxes, vertical
// cylinders): surface sampling for prior maps and exact ray casting for depth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "vmr/cloud.hpp"
#include "vmr/errors.hpp"
#include "vmr/geom.hpp"
#include "vmr/mapstore.hpp"

namespace vmr::harness {

/// Parallelogram origin + a*u + b*v, a, b in [0, 1].
struct Rectangle {
  Vec3 origin = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  double area() const { return u.cross(v).norm(); }
};

/// Axis-aligned box. The bottom face is never sampled.
struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  bool top = true;
  double area() const {
    const Vec3 d = max - min;
    return 2.0 * (d.x() + d.y()) * d.z() + (top ? d.x() * d.y() : 0.0);
  }
};

/// Vertical cylinder, lateral surface only.
struct Cylinder {
  Vec2 center = Vec2::Zero();
  double radius = 0.1;
  double z0 = 0.0;
  double z1 = 1.0;
  double area() const { return 2.0 * kPi * radius * (z1 - z0); }
};

enum class Kind { Ground, Ceiling, Wall, Pillar, Facade, Pole, Vehicle };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::Ground: return "ground";
    case Kind::Ceiling: return "ceiling";
    case Kind::Wall: return "wall";
    case Kind::Pillar: return "pillar";
    case Kind::Facade: return "facade";
    case Kind::Pole: return "pole";
    case Kind::Vehicle: return "vehicle";
  }
  return "?";
}

struct Primitive {
  Kind kind = Kind::Ground;
  std::variant<Rectangle, Box, Cylinder> shape;
  /// Transient objects are rendered (and masked) but are not part of the map.
  bool transient = false;

  double area() const {
    return std::visit([](const auto& s) { return s.area(); }, shape);
  }
};

struct SyntheticWorld {
  std::string kind;
  std::vector<Primitive> primitives;
  /// Region the vehicle may occupy (x/y).
  Rect2 drivable;
  std::uint64_t seed = 0;
};

struct WorldSpec {
  std::string preset = "garage";  // garage | street | plane
  double density = 100.0;         // points per m^2
  std::uint64_t seed = 1;
  /// Number of parked vehicles (garage) rendered as transient objects.
  int vehicles = 6;
  /// Street length along +x.
  double street_length = 200.0;
};

struct LabeledCloud {
  PointCloud cloud{Frame::LocalLevel};
  std::vector<std::size_t> labels;  // primitive index per point
};

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline Rectangle rect_xy(double x0, double y0, double x1, double y1, double z) {
  return {Vec3(x0, y0, z), Vec3(x1 - x0, 0, 0), Vec3(0, y1 - y0, 0)};
}

inline Rectangle rect_vertical(const Vec2& a, const Vec2& b, double z0, double z1) {
  return {Vec3(a.x(), a.y(), z0), Vec3(b.x() - a.x(), b.y() - a.y(), 0), Vec3(0, 0, z1 - z0)};
}

}  // namespace detail

inline constexpr double kGarageLength = 60.0;
inline constexpr double kGarageWidth = 24.0;
inline constexpr double kGarageHeight = 3.0;

/// 60 x 24 x 3 m parking level: floor, ceiling, four walls, eight pillars and
/// parked vehicles (transient).
inline SyntheticWorld garage_world(const WorldSpec& spec) {
  SyntheticWorld w;
  w.kind = "garage";
  w.seed = spec.seed;
  const double L = kGarageLength, W = kGarageWidth, H = kGarageHeight;
  w.primitives.push_back({Kind::Ground, detail::rect_xy(0, 0, L, W, 0), false});
  w.primitives.push_back({Kind::Ceiling, detail::rect_xy(0, 0, L, W, H), false});
  const Vec2 c[4] = {{0, 0}, {L, 0}, {L, W}, {0, W}};
  for (int i = 0; i < 4; ++i) w.primitives.push_back({Kind::Wall, detail::rect_vertical(c[i], c[(i + 1) % 4], 0, H), false});
  for (double x : {12.0, 24.0, 36.0, 48.0}) {
    for (double y : {7.0, 17.0}) {
      w.primitives.push_back({Kind::Pillar, Box{Vec3(x - 0.3, y - 0.3, 0), Vec3(x + 0.3, y + 0.3, H), false}, false});
    }
  }
  // parking bays along the long walls
  std::mt19937_64 rng(spec.seed);
  std::vector<double> bays;
  for (double x = 3.0; x + 2.5 < L; x += 3.0) bays.push_back(x);
  std::shuffle(bays.begin(), bays.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  for (int i = 0; i < spec.vehicles && i < static_cast<int>(2 * bays.size()); ++i) {
    const double x = bays[static_cast<std::size_t>(i / 2)] + jitter(rng);
    const double y0 = (i % 2 == 0) ? 0.6 : W - 0.6 - 4.5;
    w.primitives.push_back({Kind::Vehicle, Box{Vec3(x, y0, 0), Vec3(x + 1.8, y0 + 4.5, 1.5), true}, true});
  }
  w.drivable = {Vec2(1.0, 1.0), Vec2(L - 1.0, W - 1.0)};
  return w;
}

/// Straight street along +x: ground, building blocks on both sides, poles.
inline SyntheticWorld street_world(const WorldSpec& spec) {
  SyntheticWorld w;
  w.kind = "street";
  w.seed = spec.seed;
  const double len = spec.street_length;
  w.primitives.push_back({Kind::Ground, detail::rect_xy(-20, -30, len + 20, 30, 0), false});
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> block(12.0, 30.0), gap(4.0, 10.0), height(6.0, 20.0), setback(11.0, 14.0),
      depth(8.0, 14.0);
  for (int side : {-1, 1}) {
    double x = -15.0 + gap(rng);
    while (x < len + 10.0) {
      const double bx = std::min(block(rng), len + 18.0 - x);
      const double near = setback(rng), far = near + depth(rng);
      const double y0 = side > 0 ? near : -far, y1 = side > 0 ? far : -near;
      w.primitives.push_back({Kind::Facade, Box{Vec3(x, y0, 0), Vec3(x + bx, y1, height(rng)), true}, false});
      x += bx + gap(rng);
    }
    for (double px = 5.0; px < len; px += 25.0) {
      w.primitives.push_back({Kind::Pole, Cylinder{Vec2(px + (side > 0 ? 0.0 : 12.5), side * 8.0), 0.15, 0.0, 7.0}, false});
    }
  }
  w.drivable = {Vec2(-10.0, -6.0), Vec2(len + 10.0, 6.0)};
  return w;
}

/// Single 10 x 10 m ground plane.
inline SyntheticWorld plane_world(const WorldSpec& spec) {
  SyntheticWorld w;
  w.kind = "plane";
  w.seed = spec.seed;
  w.primitives.push_back({Kind::Ground, detail::rect_xy(0, 0, 10, 10, 0), false});
  w.drivable = {Vec2(0, 0), Vec2(10, 10)};
  return w;
}

inline SyntheticWorld make_world(const WorldSpec& spec) {
  if (!(spec.density > 0.0)) throw InvalidArgument("world density must be > 0");
  if (spec.preset == "garage") return garage_world(spec);
  if (spec.preset == "street") return street_world(spec);
  if (spec.preset == "plane") return plane_world(spec);
  throw InvalidArgument("unknown world preset '" + spec.preset + "'");
}

// ---------------------------------------------------------------------------
// Surface sampling

namespace detail {

inline int grid_count(double length, double density) {
  return std::max(1, static_cast<int>(std::lround(length * std::sqrt(density))));
}

/// Jittered grid over a parallelogram.
inline void sample_rect(const Rectangle& r, double density, std::mt19937_64& rng, std::vector<Vec3>& out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int nu = grid_count(r.u.norm(), density);
  const int nv = grid_count(r.v.norm(), density);
  for (int j = 0; j < nv; ++j) {
    for (int i = 0; i < nu; ++i) {
      const double a = (i + unit(rng)) / nu;
      const double b = (j + unit(rng)) / nv;
      out.push_back(r.origin + a * r.u + b * r.v);
    }
  }
}

inline std::vector<Rectangle> box_faces(const Box& b) {
  const Vec3& lo = b.min;
  const Vec3& hi = b.max;
  std::vector<Rectangle> f{
      rect_vertical({lo.x(), lo.y()}, {hi.x(), lo.y()}, lo.z(), hi.z()),
      rect_vertical({hi.x(), lo.y()}, {hi.x(), hi.y()}, lo.z(), hi.z()),
      rect_vertical({hi.x(), hi.y()}, {lo.x(), hi.y()}, lo.z(), hi.z()),
      rect_vertical({lo.x(), hi.y()}, {lo.x(), lo.y()}, lo.z(), hi.z()),
  };
  if (b.top) f.push_back(rect_xy(lo.x(), lo.y(), hi.x(), hi.y(), hi.z()));
  return f;
}

}  // namespace detail

/// Samples every non-transient primitive at `density` points per m^2.
/// Deterministic for a fixed seed.
inline LabeledCloud sample_world(const SyntheticWorld& world, double density, std::uint64_t seed) {
  if (!(density > 0.0)) throw InvalidArgument("density must be > 0");
  LabeledCloud out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < world.primitives.size(); ++k) {
    const auto& prim = world.primitives[k];
    if (prim.transient) continue;
    if (const auto* r = std::get_if<Rectangle>(&prim.shape)) {
      detail::sample_rect(*r, density, rng, out.cloud.points);
    } else if (const auto* b = std::get_if<Box>(&prim.shape)) {
      for (const auto& f : detail::box_faces(*b)) detail::sample_rect(f, density, rng, out.cloud.points);
    } else if (const auto* c = std::get_if<Cylinder>(&prim.shape)) {
      const int nt = detail::grid_count(2.0 * kPi * c->radius, density);
      const int nz = detail::grid_count(c->z1 - c->z0, density);
      for (int j = 0; j < nz; ++j) {
        for (int i = 0; i < nt; ++i) {
          const double th = 2.0 * kPi * (i + unit(rng)) / nt;
          const double z = c->z0 + (c->z1 - c->z0) * (j + unit(rng)) / nz;
          out.cloud.points.emplace_back(c->center.x() + c->radius * std::cos(th), c->center.y() + c->radius * std::sin(th), z);
        }
      }
    }
    out.labels.resize(out.cloud.size(), k);
  }
  return out;
}

/// Preset world plus its map cloud.
inline std::pair<SyntheticWorld, LabeledCloud> build_world(const WorldSpec& spec) {
  auto world = make_world(spec);
  auto map = sample_world(world, spec.density, spec.seed);
  return {std::move(world), std::move(map)};
}

// ---------------------------------------------------------------------------
// Ray casting

struct Hit {
  double t = 0.0;
  Vec3 normal = Vec3::UnitZ();  // unit, facing the ray origin
  std::size_t primitive = 0;
};

namespace detail {

inline std::optional<Hit> hit_rect(const Rectangle& r, const Vec3& o, const Vec3& d) {
  Vec3 n = r.u.cross(r.v);
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = n.dot(r.origin - o) / denom;
  if (!(t > 1e-9)) return std::nullopt;
  const Vec3 rel = o + t * d - r.origin;
  // solve rel = a u + b v in the plane
  const double uu = r.u.dot(r.u), uv = r.u.dot(r.v), vv = r.v.dot(r.v);
  const double ru = rel.dot(r.u), rv = rel.dot(r.v);
  const double det = uu * vv - uv * uv;
  const double a = (ru * vv - rv * uv) / det;
  const double b = (rv * uu - ru * uv) / det;
  if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) return std::nullopt;
  n.normalize();
  if (n.dot(d) > 0) n = -n;
  return Hit{t, n, 0};
}

inline std::optional<Hit> hit_box(const Box& b, const Vec3& o, const Vec3& d) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < b.min[i] || o[i] > b.max[i]) return std::nullopt;
      continue;
    }
    double ta = (b.min[i] - o[i]) / d[i], tb = (b.max[i] - o[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = i;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || !(t0 > 1e-9) || axis < 0) return std::nullopt;  // outside-only hits
  Vec3 n = Vec3::Zero();
  n[axis] = d[axis] > 0 ? -1.0 : 1.0;
  return Hit{t0, n, 0};
}

inline std::optional<Hit> hit_cylinder(const Cylinder& c, const Vec3& o, const Vec3& d) {
  const Vec2 oc(o.x() - c.center.x(), o.y() - c.center.y());
  const Vec2 dd(d.x(), d.y());
  const double a = dd.squaredNorm();
  if (a < 1e-15) return std::nullopt;
  const double b = oc.dot(dd);
  const double cc = oc.squaredNorm() - c.radius * c.radius;
  const double disc = b * b - a * cc;
  if (disc < 0.0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / a;
  if (!(t > 1e-9)) return std::nullopt;
  const Vec3 p = o + t * d;
  if (p.z() < c.z0 || p.z() > c.z1) return std::nullopt;
  const Vec3 n = Vec3(p.x() - c.center.x(), p.y() - c.center.y(), 0).normalized();
  return Hit{t, n, 0};
}

}  // namespace detail

/// Nearest intersection of o + t d (t > 0) with any primitive, transient ones included.
/// Corners of a convex hull of the primitive.
inline std::vector<Vec3> hull_corners(const Primitive& prim) {
  auto box = [](const Vec3& lo, const Vec3& hi) {
    std::vector<Vec3> c;
    for (int i = 0; i < 8; ++i) c.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
    return c;
  };
  return std::visit(
      [&](const auto& s) -> std::vector<Vec3> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Rectangle>) return {s.origin, s.origin + s.u, s.origin + s.v, s.origin + s.u + s.v};
        else if constexpr (std::is_same_v<S, Box>) return box(s.min, s.max);
        else return box(Vec3(s.center.x() - s.radius, s.center.y() - s.radius, s.z0),
                        Vec3(s.center.x() + s.radius, s.center.y() + s.radius, s.z1));
      },
      prim.shape);
}

/// Nearest hit among the listed primitives.
inline std::optional<Hit> cast_ray(const SyntheticWorld& world, const std::vector<std::size_t>& subset, const Vec3& o,
                                   const Vec3& d) {
  std::optional<Hit> best;
  for (const std::size_t k : subset) {
    const auto h = std::visit(
        [&](const auto& s) -> std::optional<Hit> {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, Rectangle>) return detail::hit_rect(s, o, d);
          else if constexpr (std::is_same_v<S, Box>) return detail::hit_box(s, o, d);
          else return detail::hit_cylinder(s, o, d);
        },
        world.primitives[k].shape);
    if (h && (!best || h->t < best->t)) {
      best = h;
      best->primitive = k;
    }
  }
  return best;
}

inline std::optional<Hit> cast_ray(const SyntheticWorld& world, const Vec3& o, const Vec3& d) {
  std::vector<std::size_t> all(world.primitives.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return cast_ray(world, all, o, d);
}

/// Distance from p to the nearest non-transient primitive surface.
inline double distance_to_surface(const SyntheticWorld& world, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  auto rect_dist = [&](const Rectangle& r) {
    const double uu = r.u.dot(r.u), uv = r.u.dot(r.v), vv = r.v.dot(r.v);
    const Vec3 rel = p - r.origin;
    const double ru = rel.dot(r.u), rv = rel.dot(r.v);
    const double det = uu * vv - uv * uv;
    const double a = std::clamp((ru * vv - rv * uv) / det, 0.0, 1.0);
    const double b = std::clamp((rv * uu - ru * uv) / det, 0.0, 1.0);
    return (p - (r.origin + a * r.u + b * r.v)).norm();
  };
  for (const auto& prim : world.primitives) {
    if (prim.transient) continue;
    double dist = std::numeric_limits<double>::infinity();
    if (const auto* r = std::get_if<Rectangle>(&prim.shape)) {
      dist = rect_dist(*r);
    } else if (const auto* b = std::get_if<Box>(&prim.shape)) {
      for (const auto& f : detail::box_faces(*b)) dist = std::min(dist, rect_dist(f));
    } else if (const auto* c = std::get_if<Cylinder>(&prim.shape)) {
      const double radial = std::abs(std::hypot(p.x() - c->center.x(), p.y() - c->center.y()) - c->radius);
      const double vert = std::max({0.0, c->z0 - p.z(), p.z() - c->z1});
      dist = std::hypot(radial, vert);
    }
    best = std::min(best, dist);
  }
  return best;
}

}  // namespace vmr::harness
