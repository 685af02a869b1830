#pragma once

// Runs a dataset through the loop: INS propagation, odometer update, depth
// frame -> cloud -> map registration -> tuned pose update.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmr/cloudgen.hpp"
#include "vmr/fusion.hpp"
#include "vmr/harness/dataset.hpp"
#include "vmr/harness/metrics.hpp"
#include "vmr/mapstore.hpp"
#include "vmr/registration.hpp"

namespace vmr::harness {

enum class Mode { Indoor, Outdoor };

struct SessionConfig {
  Mode mode = Mode::Indoor;
  FusionConfig fusion;
  CloudgenConfig cloudgen = CloudgenConfig::indoor();
  IndoorRegistrationConfig indoor;
  OutdoorRegistrationConfig outdoor;
  /// Tile size used when an outdoor map is given as a single point file.
  double tile_size = 50.0;
  /// Reporting clock when the dataset carries no frames.
  double report_rate = 10.0;
  bool disable_vmr = false;
  bool disable_odo = false;

  static SessionConfig defaults(Mode mode) {
    SessionConfig c;
    c.mode = mode;
    c.cloudgen = mode == Mode::Indoor ? CloudgenConfig::indoor() : CloudgenConfig::outdoor();
    // the filter prior is already within a few decimetres
    c.indoor.ground_gicp.coarse_correspondence_dist = 1.0;
    c.indoor.planar_gicp.coarse_correspondence_dist = 1.0;
    c.outdoor.gicp.coarse_correspondence_dist = 1.0;
    return c;
  }
};

inline Mode parse_mode(const std::string& s) {
  if (s == "indoor") return Mode::Indoor;
  if (s == "outdoor") return Mode::Outdoor;
  throw ConfigError("mode must be 'indoor' or 'outdoor', got '" + s + "'");
}

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

inline void read_gicp(const nlohmann::json& j, GicpConfig& g) {
  read_opt(j, "k_neighbors", g.k_neighbors);
  read_opt(j, "max_correspondence_dist", g.max_correspondence_dist);
  read_opt(j, "coarse_correspondence_dist", g.coarse_correspondence_dist);
  read_opt(j, "max_iterations", g.max_iterations);
  read_opt(j, "translation_eps", g.translation_epsilon);
  read_opt(j, "rotation_eps", g.rotation_epsilon);
  read_opt(j, "plane_regularization", g.plane_regularization);
}

template <int N>
Eigen::Matrix<double, N, N> diag_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != static_cast<std::size_t>(N)) throw ConfigError("expected a " + std::to_string(N) + "-vector");
  Eigen::Matrix<double, N, 1> d;
  for (int i = 0; i < N; ++i) d(i) = v[static_cast<std::size_t>(i)];
  return d.asDiagonal();
}

}  // namespace detail

/// Missing keys keep their defaults. `mode_override`, when set, wins over the file.
inline SessionConfig parse_session_config(const nlohmann::json& j, std::optional<Mode> mode_override = {}) {
  try {
    Mode mode = mode_override.value_or(j.contains("mode") ? parse_mode(j.at("mode").get<std::string>()) : Mode::Indoor);
    SessionConfig c = SessionConfig::defaults(mode);
    detail::read_opt(j, "tile_size", c.tile_size);
    detail::read_opt(j, "report_rate", c.report_rate);
    detail::read_opt(j, "disable_vmr", c.disable_vmr);
    detail::read_opt(j, "disable_odo", c.disable_odo);
    if (j.contains("fusion")) {
      const auto& f = j.at("fusion");
      auto& n = c.fusion.noise;
      if (f.contains("accel_density") || f.contains("gyro_density")) {
        const double rate = f.value("imu_rate", 100.0);
        n.sigma_f = f.value("accel_density", n.sigma_f / std::sqrt(rate)) * std::sqrt(rate);
        n.sigma_w = f.value("gyro_density", n.sigma_w / std::sqrt(rate)) * std::sqrt(rate);
      }
      detail::read_opt(f, "sigma_bf", n.sigma_bf);
      detail::read_opt(f, "sigma_bw", n.sigma_bw);
      detail::read_opt(f, "alpha", n.alpha);
      if (f.contains("n_speed")) n.n_speed = detail::diag_from<3>(f.at("n_speed"));
      if (f.contains("n_pose")) n.n_pose = detail::diag_from<6>(f.at("n_pose"));
      if (f.contains("initial_std")) {
        const auto v = f.at("initial_std").get<std::vector<double>>();
        if (v.size() != 15) throw ConfigError("fusion.initial_std needs 15 values");
        for (int i = 0; i < 15; ++i) c.fusion.initial_std(i) = v[static_cast<std::size_t>(i)];
      }
      detail::read_opt(f, "gating", c.fusion.gating);
      detail::read_opt(f, "dynamic_tuning", c.fusion.dynamic_tuning);
      if (f.contains("max_attitude_innovation_deg")) {
        c.fusion.max_attitude_innovation = f.at("max_attitude_innovation_deg").get<double>() * kDegToRad;
      }
    }
    if (j.contains("cloudgen")) {
      const auto& g = j.at("cloudgen");
      auto& cg = c.cloudgen;
      detail::read_opt(g, "confidence_threshold", cg.confidence_threshold);
      detail::read_opt(g, "dilation_kernel", cg.dilation_kernel);
      detail::read_opt(g, "voxel_size", cg.voxel_size);
      detail::read_opt(g, "d_max", cg.d_max);
      if (g.contains("h_max")) cg.h_max = g.at("h_max").is_null() ? std::numeric_limits<double>::infinity() : g.at("h_max").get<double>();
      detail::read_opt(g, "scale", cg.scale_s);
      if (g.contains("sor_pass1")) cg.sor_pass1 = {g.at("sor_pass1").at(0).get<std::size_t>(), g.at("sor_pass1").at(1).get<double>()};
      if (g.contains("sor_pass2")) cg.sor_pass2 = {g.at("sor_pass2").at(0).get<std::size_t>(), g.at("sor_pass2").at(1).get<double>()};
    }
    if (j.contains("indoor")) {
      const auto& r = j.at("indoor");
      if (r.contains("ground_gicp")) detail::read_gicp(r.at("ground_gicp"), c.indoor.ground_gicp);
      if (r.contains("planar_gicp")) detail::read_gicp(r.at("planar_gicp"), c.indoor.planar_gicp);
      detail::read_opt(r, "flatten_voxel", c.indoor.flatten_voxel);
      detail::read_opt(r, "fitness_gate", c.indoor.fitness_gate);
      detail::read_opt(r, "rmse_gate", c.indoor.rmse_gate);
      detail::read_opt(r, "ground_distance_tol", c.indoor.split.inlier_distance);
      detail::read_opt(r, "ceiling_height", c.indoor.split.ceiling_height);
    }
    if (j.contains("outdoor")) {
      const auto& r = j.at("outdoor");
      if (r.contains("gicp")) detail::read_gicp(r.at("gicp"), c.outdoor.gicp);
      detail::read_opt(r, "roi_extent", c.outdoor.roi_extent);
      detail::read_opt(r, "fitness_gate", c.outdoor.fitness_gate);
      detail::read_opt(r, "rmse_gate", c.outdoor.rmse_gate);
      detail::read_opt(r, "d_min", c.outdoor.d_min);
      detail::read_opt(r, "d_max_total", c.outdoor.d_max_total);
      detail::read_opt(r, "merge_voxel", c.outdoor.merge_voxel);
    }
    c.fusion.noise.validate();
    c.cloudgen.validate();
    c.indoor.ground_gicp.validate();
    c.indoor.planar_gicp.validate();
    c.outdoor.gicp.validate();
    if (!(c.tile_size > 0 && c.report_rate > 0)) throw ConfigError("tile_size and report_rate must be > 0");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline SessionConfig load_session_config(const fs::path& p, std::optional<Mode> mode_override = {}) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open config " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + p.string() + ": " + e.what());
  }
  return parse_session_config(j, mode_override);
}

// ---------------------------------------------------------------------------
// Maps

/// Registration targets for one session.
struct SessionMap {
  std::optional<IndoorTargets> indoor;
  std::optional<MapStore> outdoor;
};

inline SessionMap prepare_indoor_map(const PointCloud& cloud, const SessionConfig& cfg) {
  SessionMap m;
  m.indoor = IndoorTargets::prepare(split_indoor(cloud, cfg.indoor.split), cfg.indoor);
  return m;
}

inline SessionMap prepare_outdoor_map(const PointCloud& cloud, const SessionConfig& cfg) {
  SessionMap m;
  m.outdoor = MapStore::from_cloud(cloud, cfg.tile_size);
  return m;
}

/// A point file, or a tile directory holding index.json.
inline SessionMap load_session_map(const fs::path& p, const SessionConfig& cfg) {
  if (fs::is_directory(p)) {
    const auto index = read_index(p);
    SessionMap m;
    if (cfg.mode == Mode::Outdoor) {
      m.outdoor = MapStore::load(index);
      return m;
    }
    const auto store = MapStore::load(index);
    PointCloud all(Frame::LocalLevel);
    for (const auto& [id, tile] : store.tiles()) append_cloud(all, tile.points);
    return prepare_indoor_map(all, cfg);
  }
  if (!fs::exists(p)) throw IoError("map not found: " + p.string());
  if (cfg.mode == Mode::Indoor) {
    SessionMap m;
    m.indoor = IndoorTargets::prepare(load_indoor_map(p, cfg.indoor.split), cfg.indoor);
    return m;
  }
  return prepare_outdoor_map(io::read_points(p), cfg);
}

// ---------------------------------------------------------------------------
// Session

struct TrajectoryRow {
  double time = 0.0;
  PoseSample pose;
  Vec15 std_dev = Vec15::Zero();
};

/// Optional hooks, used by tests and experiments.
struct SessionObserver {
  std::function<void(std::size_t epoch, const IndoorRegistrationResult&)> on_indoor;
  /// May rewrite the corrected pose before the update.
  std::function<void(std::size_t epoch, Pose& corrected)> on_correction;
  std::function<void(std::size_t epoch, const NavState& before, const NavState& after, const UpdateReport&)> on_pose_update;
};

struct SessionResult {
  std::vector<TrajectoryRow> rows;
  std::vector<std::string> events;
  std::optional<Metrics> metrics;
  std::size_t registrations_attempted = 0;
  std::size_t registrations_applied = 0;
  bool failed = false;  // an epoch hit an unrecoverable error
};

namespace detail {

struct Epoch {
  double time = 0.0;
  std::optional<OdoSample> odo;
  const FrameRecord* frame = nullptr;
  bool report = false;
  std::size_t index = 0;
};

/// Index of the IMU sample nearest to t.
inline std::size_t nearest_imu(const std::vector<ImuSample>& imu, double t) {
  const auto it = std::lower_bound(imu.begin(), imu.end(), t, [](const ImuSample& s, double v) { return s.time < v; });
  if (it == imu.end()) return imu.size() - 1;
  if (it == imu.begin()) return 0;
  return (t - std::prev(it)->time <= it->time - t) ? static_cast<std::size_t>(std::prev(it) - imu.begin())
                                                   : static_cast<std::size_t>(it - imu.begin());
}

inline std::vector<Epoch> build_timeline(const Dataset& ds, const SessionConfig& cfg) {
  const double t0 = ds.imu.front().time, t1 = ds.imu.back().time;
  std::map<std::size_t, Epoch> by_imu;  // keyed by IMU index
  auto at = [&](double t) -> Epoch& {
    const std::size_t k = nearest_imu(ds.imu, t);
    auto& e = by_imu[k];
    e.time = ds.imu[k].time;
    return e;
  };
  if (!cfg.disable_odo) {
    for (const auto& o : ds.odo) {
      if (o.time <= t0 || o.time > t1) continue;
      at(o.time).odo = OdoSample{at(o.time).time, o.speed};
    }
  }
  if (!ds.frames.empty()) {
    for (const auto& f : ds.frames) {
      if (f.time <= t0 || f.time > t1) continue;
      auto& e = at(f.time);
      e.report = true;
      e.index = f.epoch;
      if (!cfg.disable_vmr) e.frame = &f;
    }
  } else {
    for (std::size_t j = 1;; ++j) {
      const double t = t0 + static_cast<double>(j) / cfg.report_rate;
      if (t > t1 + 1e-9) break;
      auto& e = at(t);
      e.report = true;
      e.index = j;
    }
  }
  std::vector<Epoch> out;
  out.reserve(by_imu.size());
  for (auto& [k, e] : by_imu) out.push_back(e);
  return out;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

/// Initial state from the first ground-truth pose and the first odometer speed.
inline NavState initial_state(const Dataset& ds) {
  NavState s;
  s.time = ds.imu.front().time;
  if (ds.gt.empty()) throw IoError("dataset has no ground truth to initialise from");
  const auto& g = ds.gt.front();
  s.position = g.position;
  s.attitude = Quaternion(to_rotation(g.euler));
  double speed = 0.0;
  for (const auto& o : ds.odo) {
    if (std::abs(o.time - s.time) < 0.5 / 16.0) {
      speed = o.speed;
      break;
    }
  }
  s.velocity = s.rotation() * Vec3(speed, 0, 0);
  return s;
}

inline SessionResult run_session(const Dataset& ds, const SessionMap& map, const SessionConfig& cfg,
                                 const SessionObserver& obs = {}) {
  if (ds.imu.size() < 2) throw IoError("dataset needs at least two IMU samples");
  if (!cfg.disable_vmr && !ds.frames.empty()) {
    if (cfg.mode == Mode::Indoor && !map.indoor) throw ConfigError("indoor session without an indoor map");
    if (cfg.mode == Mode::Outdoor && !map.outdoor) throw ConfigError("outdoor session without a tile store");
  }
  SessionResult res;
  FusionSession session(initial_state(ds), ds.imu.front(), cfg.fusion);
  std::optional<AggregationBuffer> buffer;
  if (cfg.mode == Mode::Outdoor) buffer.emplace(cfg.outdoor.d_min, cfg.outdoor.d_max_total, cfg.outdoor.merge_voxel);

  const auto timeline = detail::build_timeline(ds, cfg);
  std::size_t next_imu = 1;
  auto log = [&](double t, const std::string& msg) { res.events.push_back(detail::fmt("%.3f ", t) + msg); };

  for (const auto& ep : timeline) {
    EpochInput in;
    in.time = ep.time;
    while (next_imu < ds.imu.size() && ds.imu[next_imu].time <= ep.time) in.imu.push_back(ds.imu[next_imu++]);
    in.odo = ep.odo;
    in.has_frame = ep.frame != nullptr;

    RegistrationFn reg = [&](const NavState& prior_state) -> std::optional<Pose> {
      const Pose prior = prior_state.pose();
      // outdoor frames only count once a merged cloud is registered
      if (cfg.mode == Mode::Indoor) ++res.registrations_attempted;
      try {
        const PointCloud body = generate(ep.frame->frame, ds.extrinsic, cfg.cloudgen);
        if (cfg.mode == Mode::Indoor) {
          const auto r = register_indoor(to_local_frame(body, prior), *map.indoor, cfg.indoor);
          if (obs.on_indoor) obs.on_indoor(ep.index, r);
          log(ep.time, "epoch " + std::to_string(ep.index) + " registration ok fitness " +
                           detail::fmt("%.3f", r.combined.fitness) + " rmse " + detail::fmt("%.3f", r.combined.rmse_inliers));
          return apply_correction(prior, r.combined.delta);
        }
        const auto merged = buffer->push(body, prior, prior.translation);
        if (!merged) return std::nullopt;
        ++res.registrations_attempted;
        const auto r = register_outdoor(*merged, *map.outdoor, prior.translation.head<2>(), cfg.outdoor);
        log(ep.time, "epoch " + std::to_string(ep.index) + " registration ok fitness " + detail::fmt("%.3f", r.fitness) +
                         " rmse " + detail::fmt("%.3f", r.rmse_inliers) + " points " + std::to_string(merged->size()));
        return apply_correction(prior, r.delta);
      } catch (const Error& e) {
        log(ep.time, "epoch " + std::to_string(ep.index) + " registration failed: " + e.what());
        return std::nullopt;
      }
    };

    try {
      NavState before;
      RegistrationFn wrapped = [&](const NavState& prior) -> std::optional<Pose> {
        auto corrected = reg(prior);
        if (corrected && obs.on_correction) obs.on_correction(ep.index, *corrected);
        before = prior;
        return corrected;
      };
      const auto rep = session.step(in, wrapped);
      if (rep.speed && rep.speed->status != UpdateStatus::Applied) {
        log(ep.time, std::string("odometer update ") + to_string(rep.speed->status) + " d2 " + detail::fmt("%.2f", rep.speed->mahalanobis2));
      }
      if (rep.pose) {
        log(ep.time, "epoch " + std::to_string(ep.index) + " pose update " + to_string(rep.pose->status) + " d2 " +
                         detail::fmt("%.2f", rep.pose->mahalanobis2));
        if (rep.pose->status == UpdateStatus::Applied) ++res.registrations_applied;
        if (obs.on_pose_update) obs.on_pose_update(ep.index, before, session.state(), *rep.pose);
      }
      if (!covariance_valid(session.error().P)) throw Error("covariance lost symmetry or positive semi-definiteness");
    } catch (const Error& e) {
      log(ep.time, std::string("unrecoverable: ") + e.what());
      res.failed = true;
      break;
    }

    if (ep.report) {
      const auto& s = session.state();
      TrajectoryRow row;
      row.time = ep.time;
      row.pose = {ep.time, s.position, from_rotation(s.rotation())};
      row.std_dev = session.error().P.diagonal().cwiseMax(0.0).cwiseSqrt();
      res.rows.push_back(row);
    }
  }

  if (!ds.gt.empty() && !res.rows.empty()) {
    std::vector<PoseSample> est;
    for (const auto& r : res.rows) est.push_back(r.pose);
    try {
      res.metrics = compute_metrics(est, ds.gt);
    } catch (const NoOverlap& e) {
      res.events.push_back(std::string("metrics skipped: ") + e.what());
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Outputs

inline void write_trajectory_csv(const fs::path& p, const std::vector<TrajectoryRow>& rows) {
  auto out = detail::open_out(p);
  out << "time,x,y,z,roll,pitch,yaw";
  for (const char* n : {"px", "py", "pz", "vx", "vy", "vz", "thx", "thy", "thz", "bfx", "bfy", "bfz", "bwx", "bwy", "bwz"}) {
    out << ",sd_" << n;
  }
  out << '\n';
  for (const auto& r : rows) {
    out << detail::num(r.time) << ',' << detail::num(r.pose.position.x()) << ',' << detail::num(r.pose.position.y())
        << ',' << detail::num(r.pose.position.z()) << ',' << detail::num(r.pose.euler.roll * kRadToDeg) << ','
        << detail::num(r.pose.euler.pitch * kRadToDeg) << ',' << detail::num(r.pose.euler.yaw * kRadToDeg);
    for (int i = 0; i < 15; ++i) out << ',' << detail::num(r.std_dev(i));
    out << '\n';
  }
}

inline void write_session_outputs(const fs::path& dir, const SessionResult& res) {
  fs::create_directories(dir);
  write_trajectory_csv(dir / "trajectory.csv", res.rows);
  {
    nlohmann::json j = res.metrics ? to_json(*res.metrics) : nlohmann::json::object();
    j["registrations_attempted"] = res.registrations_attempted;
    j["registrations_applied"] = res.registrations_applied;
    j["failed"] = res.failed;
    detail::open_out(dir / "metrics.json") << j.dump(2) << '\n';
  }
  auto log = detail::open_out(dir / "events.log");
  for (const auto& e : res.events) log << e << '\n';
}

}  // namespace vmr::harness
