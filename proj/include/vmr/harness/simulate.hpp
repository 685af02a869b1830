#pragma once

// Trajectory, IMU, odometer and depth-frame synthesis over a SyntheticWorld.
//
// The vehicle follows the waypoint polyline with a pure-pursuit steering law on
// level ground. IMU samples are obtained by inverting the discrete mechanization
// step, and the ground truth is the mechanized state itself, so replaying the
// noise-free stream through mechanize() reproduces it exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "vmr/cloudgen.hpp"
#include "vmr/fusion.hpp"
#include "vmr/harness/world.hpp"

namespace vmr::harness {

struct Waypoint {
  Vec2 position = Vec2::Zero();
  /// Initial heading (rad, ENU yaw) for the first waypoint; NaN = towards the next one.
  double heading = std::numeric_limits<double>::quiet_NaN();
  /// Target speed on the segment that starts here, m/s.
  double speed = 2.0;
};

struct SimNoise {
  double accel_density = 100e-6 * kGravity;  // m/s^2/sqrt(Hz)
  double gyro_density = 0.01 * kDegToRad;    // rad/s/sqrt(Hz)
  /// Turn-on bias 1-sigma, drawn once per run.
  double accel_bias_std = 0.01;              // m/s^2
  double gyro_bias_std = 0.05 * kDegToRad;   // rad/s
  /// Bias random-walk densities.
  double accel_bias_walk = 1e-4;
  double gyro_bias_walk = 1e-6;
  double odo_std = 0.1;         // m/s
  double depth_rel_std = 0.02;  // fraction of range
  /// Fraction of pixels reported with low confidence and heavy depth noise.
  double low_confidence_fraction = 0.05;

  static SimNoise none() {
    return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  }
};

struct CameraRig {
  CameraIntrinsics intrinsics{74.0, 74.0, 128.0, 96.0, 256, 192, 74.0};  // 120 deg horizontal FOV
  /// Camera-to-body: optical axis forward, image x right, image y down.
  ExtrinsicCalibration extrinsic{(Mat3() << 0, 0, 1, -1, 0, 0, 0, -1, 0).finished(), Vec3(1.0, 0.0, 1.5)};
  double max_range = 40.0;
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;
  bool loop = false;
  /// Seconds; 0 = until the end of the (non-looping) path.
  double duration = 0.0;
  double imu_rate = 100.0;
  double frame_rate = 10.0;
  double odo_rate = 16.0;
  double lookahead = 4.0;
  double max_yaw_rate = 1.0;
  double max_accel = 1.0;
  SimNoise noise;
  CameraRig camera;

  void validate() const {
    if (waypoints.size() < 2) throw InvalidArgument("trajectory needs at least two waypoints");
    if (!(imu_rate > 0 && frame_rate > 0 && odo_rate > 0)) throw InvalidArgument("trajectory rates must be > 0");
    if (imu_rate > 1000.0 || 1.0 / imu_rate > 0.1) throw InvalidArgument("imu_rate must lie in [10, 1000] Hz");
    for (const auto& w : waypoints) {
      if (!(w.speed >= 0)) throw InvalidArgument("waypoint speeds must be >= 0");
    }
    if (!(duration >= 0)) throw InvalidArgument("duration must be >= 0");
    if (loop && duration <= 0) throw InvalidArgument("a looping trajectory needs a duration");
    if (!(lookahead > 0 && max_yaw_rate > 0 && max_accel > 0)) throw InvalidArgument("controller limits must be > 0");
    camera.intrinsics.validate();
  }
};

struct FrameRecord {
  std::size_t epoch = 0;
  double time = 0.0;
  DepthFrame frame;
};

struct PoseSample {
  double time = 0.0;
  Vec3 position = Vec3::Zero();
  EulerZYX euler;
};

/// What a dataset directory holds.
struct Dataset {
  CameraIntrinsics intrinsics;
  ExtrinsicCalibration extrinsic;
  std::vector<ImuSample> imu;
  std::vector<OdoSample> odo;
  std::vector<FrameRecord> frames;
  std::vector<PoseSample> gt;
};

struct Simulation {
  Dataset dataset;
  /// Noise-free truth at every IMU time, velocity included.
  std::vector<NavState> truth;
  /// Noise-free IMU stream (dataset.imu is this plus noise and biases).
  std::vector<ImuSample> clean_imu;
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Path following

namespace detail {

class Polyline {
 public:
  explicit Polyline(std::vector<Vec2> pts) : pts_(std::move(pts)) {
    cum_.push_back(0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) cum_.push_back(cum_.back() + (pts_[i] - pts_[i - 1]).norm());
  }

  double length() const { return cum_.back(); }
  std::size_t segment_at(double s) const {
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cum_.begin() - 1, 0));
    return std::min(i, pts_.size() - 2);
  }
  Vec2 point_at(double s) const {
    s = std::clamp(s, 0.0, length());
    const std::size_t i = segment_at(s);
    const double len = cum_[i + 1] - cum_[i];
    return len > 0 ? pts_[i] + (pts_[i + 1] - pts_[i]) * ((s - cum_[i]) / len) : pts_[i];
  }
  /// Arc length of the closest point, searched within [s_lo, s_hi].
  double project(const Vec2& p, double s_lo, double s_hi) const {
    double best_s = s_lo, best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = segment_at(std::max(s_lo, 0.0)); i + 1 < pts_.size() && cum_[i] <= s_hi; ++i) {
      const Vec2 ab = pts_[i + 1] - pts_[i];
      const double len2 = ab.squaredNorm();
      const double a = len2 > 0 ? std::clamp((p - pts_[i]).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const double s = std::clamp(cum_[i] + a * std::sqrt(len2), s_lo, s_hi);
      const double d = (point_at(s) - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best_s = s;
      }
    }
    return best_s;
  }

 private:
  std::vector<Vec2> pts_;
  std::vector<double> cum_;
};

inline bool inside(const Rect2& r, const Vec2& p) {
  return p.x() >= r.min.x() && p.x() <= r.max.x() && p.y() >= r.min.y() && p.y() <= r.max.y();
}

}  // namespace detail

struct KinematicTrack {
  std::vector<double> time;
  std::vector<double> speed;
  std::vector<double> yaw_rate;  // applied over [t_k, t_k+1)
  double initial_heading = 0.0;
  Vec2 start = Vec2::Zero();
};

/// Pure-pursuit speed / yaw-rate profile. The controller integrates the same
/// kinematics the IMU inversion produces.
inline KinematicTrack plan_track(const TrajectorySpec& spec, const Rect2& bounds) {
  spec.validate();
  std::vector<Vec2> pts;
  std::vector<double> speeds;
  const std::size_t n = spec.waypoints.size();
  double perimeter = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) perimeter += (spec.waypoints[i + 1].position - spec.waypoints[i].position).norm();
  if (spec.loop) perimeter += (spec.waypoints.front().position - spec.waypoints.back().position).norm();
  if (!(perimeter > 0)) throw InvalidArgument("trajectory has zero length");
  double vmax = 0.0;
  for (const auto& w : spec.waypoints) vmax = std::max(vmax, w.speed);
  const std::size_t laps = spec.loop ? static_cast<std::size_t>(std::ceil(spec.duration * vmax / perimeter)) + 2 : 1;
  for (std::size_t lap = 0; lap < laps; ++lap) {
    for (std::size_t i = 0; i < n; ++i) {
      if (lap > 0 && i == 0 && !spec.loop) break;
      pts.push_back(spec.waypoints[i].position);
      speeds.push_back(spec.waypoints[i].speed);
    }
  }
  if (spec.loop) {
    pts.push_back(spec.waypoints.front().position);
    speeds.push_back(spec.waypoints.front().speed);
  }
  for (const auto& p : pts) {
    if (!detail::inside(bounds, p)) throw TrajectoryOutOfBounds("waypoint outside the drivable area");
  }
  const detail::Polyline path(pts);

  KinematicTrack track;
  track.start = pts[0];
  const auto& w0 = spec.waypoints.front();
  track.initial_heading = std::isnan(w0.heading) ? std::atan2(pts[1].y() - pts[0].y(), pts[1].x() - pts[0].x()) : w0.heading;

  const double dt_nominal = 1.0 / spec.imu_rate;
  const std::size_t max_steps =
      spec.duration > 0 ? static_cast<std::size_t>(std::llround(spec.duration * spec.imu_rate))
                        : static_cast<std::size_t>(std::ceil(10.0 * path.length() / std::max(vmax, 0.1) * spec.imu_rate));
  Vec2 p = pts[0];
  double yaw = track.initial_heading, v = w0.speed, s_path = 0.0;
  for (std::size_t k = 0;; ++k) {
    track.time.push_back(static_cast<double>(k) / spec.imu_rate);
    track.speed.push_back(v);
    s_path = path.project(p, s_path - 1.0, s_path + 10.0);
    if (k == max_steps) break;
    if (!spec.loop && spec.duration <= 0 && s_path >= path.length() - 1e-6) break;

    const Vec2 target = path.point_at(s_path + spec.lookahead);
    const Vec2 to = target - p;
    double omega = 0.0;
    if (to.norm() > 1e-6) {
      const double alpha = wrap_angle(std::atan2(to.y(), to.x()) - yaw);
      omega = std::clamp(2.0 * std::sin(alpha) / to.norm() * v, -spec.max_yaw_rate, spec.max_yaw_rate);
    }
    track.yaw_rate.push_back(omega);
    const double target_speed = speeds[path.segment_at(s_path)];
    v = std::max(0.0, v + std::clamp(target_speed - v, -spec.max_accel * dt_nominal, spec.max_accel * dt_nominal));
    yaw += omega * dt_nominal;
    p += v * dt_nominal * Vec2(std::cos(yaw), std::sin(yaw));
    if (!detail::inside(bounds, p)) throw TrajectoryOutOfBounds("vehicle leaves the drivable area");
  }
  track.yaw_rate.push_back(0.0);
  return track;
}

/// Exact IMU inversion of the mechanization step. Returns truth states and the
/// clean IMU samples (sample k drives the step from t_k to t_k+1).
inline std::pair<std::vector<NavState>, std::vector<ImuSample>> synthesize_imu(const KinematicTrack& track,
                                                                               const Rect2& bounds) {
  std::vector<NavState> truth;
  std::vector<ImuSample> imu;
  NavState s;
  s.attitude = Quaternion(to_rotation({track.initial_heading, 0.0, 0.0}));
  s.position = Vec3(track.start.x(), track.start.y(), 0.0);
  s.velocity = s.rotation() * Vec3(track.speed[0], 0, 0);
  s.time = track.time[0];
  truth.push_back(s);
  for (std::size_t k = 0; k + 1 < track.time.size(); ++k) {
    const double dt = track.time[k + 1] - track.time[k];
    const Vec3 omega(0.0, 0.0, track.yaw_rate[k]);
    const Quaternion next_q = (s.attitude * quat_increment(omega, dt)).normalized();
    const Vec3 next_v = next_q * Vec3(track.speed[k + 1], 0, 0);
    const Vec3 f = s.rotation().transpose() * ((next_v - s.velocity) / dt - kGravityEnu);
    const ImuSample sample{track.time[k], f, omega};
    imu.push_back(sample);
    s = mechanize(s, sample, dt);
    s.time = track.time[k + 1];
    if (!detail::inside(bounds, s.position.head<2>())) throw TrajectoryOutOfBounds("vehicle leaves the drivable area");
    truth.push_back(s);
  }
  imu.push_back({track.time.back(), imu.empty() ? Vec3(0, 0, kGravity) : imu.back().f, Vec3::Zero()});
  return {std::move(truth), std::move(imu)};
}

// ---------------------------------------------------------------------------
// Depth rendering

/// Noise-free depth frame (depth = camera Z, 0 on miss or beyond max_range),
/// confidence 1 on hits, mask = 1 on transient primitives.
inline DepthFrame render_depth(const SyntheticWorld& world, const Pose& body_to_nav, const CameraRig& rig,
                               double timestamp = 0.0) {
  const auto& k = rig.intrinsics;
  DepthFrame f;
  f.intrinsics = k;
  f.timestamp = timestamp;
  f.depth = Raster<double>(k.width, k.height, 0.0);
  f.confidence = Raster<double>(k.width, k.height, 0.0);
  f.mask = Raster<std::uint8_t>(k.width, k.height, 0);
  const Pose cam = body_to_nav * rig.extrinsic;
  // only primitives with some part in front of the image plane can be hit
  const Vec3 axis = cam.rotation.col(2);
  std::vector<std::size_t> visible;
  for (std::size_t i = 0; i < world.primitives.size(); ++i) {
    const auto corners = hull_corners(world.primitives[i]);
    if (std::any_of(corners.begin(), corners.end(), [&](const Vec3& c) { return axis.dot(c - cam.translation) > 0.0; })) {
      visible.push_back(i);
    }
  }
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 dir = cam.rotation * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const auto hit = cast_ray(world, visible, cam.translation, dir);
      if (!hit || hit->t > rig.max_range) continue;
      f.depth.at(u, v) = hit->t;
      f.confidence.at(u, v) = 1.0;
      f.mask.at(u, v) = world.primitives[hit->primitive].transient ? 1 : 0;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

inline Simulation simulate(const SyntheticWorld& world, const TrajectorySpec& spec, std::uint64_t seed) {
  const auto track = plan_track(spec, world.drivable);
  auto [truth, clean] = synthesize_imu(track, world.drivable);

  Simulation sim;
  sim.truth = std::move(truth);
  sim.clean_imu = clean;
  auto& ds = sim.dataset;
  ds.intrinsics = spec.camera.intrinsics;
  ds.extrinsic = spec.camera.extrinsic;

  const auto& nz = spec.noise;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto gvec = [&] { return Vec3(gauss(rng), gauss(rng), gauss(rng)); };

  sim.accel_bias = nz.accel_bias_std * gvec();
  sim.gyro_bias = nz.gyro_bias_std * gvec();
  Vec3 bf = sim.accel_bias, bw = sim.gyro_bias;
  const double dt = 1.0 / spec.imu_rate, root_rate = std::sqrt(spec.imu_rate);
  ds.imu.reserve(clean.size());
  for (const auto& c : clean) {
    ImuSample m = c;
    m.f += bf + nz.accel_density * root_rate * gvec();
    m.omega += bw + nz.gyro_density * root_rate * gvec();
    ds.imu.push_back(m);
    bf += nz.accel_bias_walk * std::sqrt(dt) * gvec();
    bw += nz.gyro_bias_walk * std::sqrt(dt) * gvec();
  }

  const double t_end = sim.truth.back().time;
  auto truth_index = [&](double t) {
    return std::min(static_cast<std::size_t>(std::llround(t * spec.imu_rate)), sim.truth.size() - 1);
  };
  for (std::size_t m = 0;; ++m) {
    const double t = static_cast<double>(m) / spec.odo_rate;
    if (t > t_end + 1e-9) break;
    const auto& s = sim.truth[truth_index(t)];
    const double speed = (s.rotation().transpose() * s.velocity).x();
    ds.odo.push_back({t, speed + nz.odo_std * gauss(rng)});
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 1;; ++j) {
    const double t = static_cast<double>(j) / spec.frame_rate;
    if (t > t_end + 1e-9) break;
    DepthFrame f = render_depth(world, sim.truth[truth_index(t)].pose(), spec.camera, t);
    for (std::size_t i = 0; i < f.depth.size(); ++i) {
      double& d = f.depth.data[i];
      if (!(d > 0)) continue;
      if (unit(rng) < nz.low_confidence_fraction) {
        f.confidence.data[i] = 0.75 * unit(rng);
        d *= std::max(0.05, 1.0 + 0.3 * gauss(rng));
      } else {
        f.confidence.data[i] = 0.9 + 0.1 * unit(rng);
        d *= std::max(0.05, 1.0 + nz.depth_rel_std * gauss(rng));
      }
      // stored as float32 on disk
      d = static_cast<float>(d);
      f.confidence.data[i] = static_cast<float>(f.confidence.data[i]);
    }
    ds.frames.push_back({j, t, std::move(f)});
  }

  ds.gt.reserve(sim.truth.size());
  for (const auto& s : sim.truth) ds.gt.push_back({s.time, s.position, from_rotation(s.rotation())});
  return sim;
}

}  // namespace vmr::harness
