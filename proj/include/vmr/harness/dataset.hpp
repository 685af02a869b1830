#pragma once

// Dataset directory layout:
//   calib.json            intrinsics (incl. f_canonical), camera-to-body extrinsics, frame tags
//   imu.csv               time,fx,fy,fz,wx,wy,wz
//   odo.csv               time,speed
//   gt.csv                time,x,y,z,roll,pitch,yaw   (degrees)
//   frames/index.csv      epoch,time
//   frames/<epoch>.depth  float32 LE, row-major     (meters, 0 = invalid)
//   frames/<epoch>.conf   float32 LE, row-major
//   frames/<epoch>.mask   uint8, row-major          (1 = transient object)

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmr/harness/simulate.hpp"
#include "vmr/pointio.hpp"

namespace vmr::harness {

namespace fs = std::filesystem;

namespace detail {

/// Shortest text that round-trips the double.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string epoch_name(std::size_t epoch) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", epoch);
  return buf;
}

inline std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

/// Parses a headed CSV of numbers; every row must have `columns` fields.
inline std::vector<std::vector<double>> read_csv(const fs::path& p, std::size_t columns) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(field, &used));
      } catch (const std::exception&) {
        throw IoError(p.string() + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
    }
    if (row.size() != columns) {
      throw IoError(p.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename T>
void write_raster(const fs::path& p, const Raster<T>& r) {
  auto out = open_out(p, std::ios::binary);
  if constexpr (std::is_same_v<T, std::uint8_t>) {
    out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
  } else {
    std::vector<float> buf(r.data.begin(), r.data.end());
    io::write_le_floats(out, buf.data(), buf.size());
  }
  if (!out) throw IoError("write failed for " + p.string());
}

inline Raster<double> read_float_raster(const fs::path& p, int w, int h) {
  const auto values = io::read_le_floats(p);
  if (values.size() != static_cast<std::size_t>(w) * h) throw IoError(p.string() + ": raster size mismatch");
  Raster<double> r(w, h);
  std::copy(values.begin(), values.end(), r.data.begin());
  return r;
}

inline Raster<std::uint8_t> read_mask(const fs::path& p, int w, int h) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  Raster<std::uint8_t> r(w, h);
  in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.data.size()) || in.peek() != EOF) {
    throw IoError(p.string() + ": raster size mismatch");
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pose series CSV (gt.csv layout)

inline void write_pose_csv(const fs::path& p, const std::vector<PoseSample>& poses) {
  auto out = detail::open_out(p);
  out << "time,x,y,z,roll,pitch,yaw\n";
  for (const auto& s : poses) {
    out << detail::num(s.time) << ',' << detail::num(s.position.x()) << ',' << detail::num(s.position.y()) << ','
        << detail::num(s.position.z()) << ',' << detail::num(s.euler.roll * kRadToDeg) << ','
        << detail::num(s.euler.pitch * kRadToDeg) << ',' << detail::num(s.euler.yaw * kRadToDeg) << '\n';
  }
}

/// Reads time,x,y,z,roll,pitch,yaw (degrees); extra trailing columns are ignored.
inline std::vector<PoseSample> read_pose_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::string header;
  std::getline(in, header);
  const std::size_t cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  if (cols < 7) throw IoError(p.string() + ": expected at least 7 columns");
  std::vector<PoseSample> out;
  for (const auto& r : detail::read_csv(p, cols)) {
    PoseSample s;
    s.time = r[0];
    s.position = Vec3(r[1], r[2], r[3]);
    s.euler = {r[6] * kDegToRad, r[5] * kDegToRad, r[4] * kDegToRad};
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json calib_to_json(const CameraIntrinsics& k, const ExtrinsicCalibration& e) {
  nlohmann::json j;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
                     {"width", k.width}, {"height", k.height}, {"f_canonical", k.f_canonical}};
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({e.rotation(r, 0), e.rotation(r, 1), e.rotation(r, 2)});
  j["extrinsics"] = {{"rotation", rot}, {"translation", {e.translation.x(), e.translation.y(), e.translation.z()}}};
  j["body_frame"] = "x-forward,y-left,z-up";
  j["nav_frame"] = "ENU";
  return j;
}

inline void calib_from_json(const nlohmann::json& j, CameraIntrinsics& k, ExtrinsicCalibration& e) {
  try {
    const auto& in = j.at("intrinsics");
    k.fx = in.at("fx");
    k.fy = in.at("fy");
    k.cx = in.at("cx");
    k.cy = in.at("cy");
    k.width = in.at("width");
    k.height = in.at("height");
    k.f_canonical = in.at("f_canonical");
    const auto& ex = j.at("extrinsics");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) e.rotation(r, c) = ex.at("rotation").at(r).at(c);
    for (int i = 0; i < 3; ++i) e.translation[i] = ex.at("translation").at(i);
    if (j.contains("body_frame") && j["body_frame"] != "x-forward,y-left,z-up") {
      throw ConfigError("calib.json: unsupported body frame convention " + j["body_frame"].dump());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("calib.json: ") + ex.what());
  }
  k.validate();
  if ((e.rotation.transpose() * e.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw ConfigError("calib.json: extrinsic rotation is not orthonormal");
  }
}

// ---------------------------------------------------------------------------
// Scenario files

/// {"preset": "garage", "density": 100, "seed": 1, "vehicles": 6, "street_length": 200}
inline WorldSpec world_spec_from_json(const nlohmann::json& j) {
  WorldSpec w;
  try {
    w.preset = j.value("preset", w.preset);
    w.density = j.value("density", w.density);
    w.seed = j.value("seed", w.seed);
    w.vehicles = j.value("vehicles", w.vehicles);
    w.street_length = j.value("street_length", w.street_length);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world: ") + e.what());
  }
  return w;
}

/// Waypoints are {"x", "y", "speed", "heading_deg"}; noise keys use the
/// SimNoise field names with densities given per sqrt(Hz) in the units the
/// keys name (accel_density_ug, gyro_density_dps).
inline TrajectorySpec trajectory_from_json(const nlohmann::json& j) {
  TrajectorySpec t;
  try {
    for (const auto& w : j.at("waypoints")) {
      Waypoint wp;
      wp.position = Vec2(w.at("x").get<double>(), w.at("y").get<double>());
      wp.speed = w.value("speed", wp.speed);
      if (w.contains("heading_deg")) wp.heading = w.at("heading_deg").get<double>() * kDegToRad;
      t.waypoints.push_back(wp);
    }
    t.loop = j.value("loop", t.loop);
    t.duration = j.value("duration", t.duration);
    t.imu_rate = j.value("imu_rate", t.imu_rate);
    t.frame_rate = j.value("frame_rate", t.frame_rate);
    t.odo_rate = j.value("odo_rate", t.odo_rate);
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      if (n.is_string()) {
        if (n.get<std::string>() != "none") throw ConfigError("noise must be an object or \"none\"");
        t.noise = SimNoise::none();
      } else {
        auto& z = t.noise;
        if (n.contains("accel_density_ug")) z.accel_density = n.at("accel_density_ug").get<double>() * 1e-6 * kGravity;
        if (n.contains("gyro_density_dps")) z.gyro_density = n.at("gyro_density_dps").get<double>() * kDegToRad;
        z.accel_bias_std = n.value("accel_bias_std", z.accel_bias_std);
        if (n.contains("gyro_bias_std_dps")) z.gyro_bias_std = n.at("gyro_bias_std_dps").get<double>() * kDegToRad;
        z.accel_bias_walk = n.value("accel_bias_walk", z.accel_bias_walk);
        z.gyro_bias_walk = n.value("gyro_bias_walk", z.gyro_bias_walk);
        z.odo_std = n.value("odo_std", z.odo_std);
        z.depth_rel_std = n.value("depth_rel_std", z.depth_rel_std);
        z.low_confidence_fraction = n.value("low_confidence_fraction", z.low_confidence_fraction);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("trajectory: ") + e.what());
  }
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("trajectory: ") + e.what());
  }
  return t;
}

inline nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "frames");
  detail::open_out(dir / "calib.json") << calib_to_json(ds.intrinsics, ds.extrinsic).dump(2) << '\n';
  {
    auto out = detail::open_out(dir / "imu.csv");
    out << "time,fx,fy,fz,wx,wy,wz\n";
    for (const auto& s : ds.imu) {
      out << detail::num(s.time);
      for (int i = 0; i < 3; ++i) out << ',' << detail::num(s.f[i]);
      for (int i = 0; i < 3; ++i) out << ',' << detail::num(s.omega[i]);
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "odo.csv");
    out << "time,speed\n";
    for (const auto& s : ds.odo) out << detail::num(s.time) << ',' << detail::num(s.speed) << '\n';
  }
  if (!ds.gt.empty()) write_pose_csv(dir / "gt.csv", ds.gt);
  auto index = detail::open_out(dir / "frames" / "index.csv");
  index << "epoch,time\n";
  for (const auto& f : ds.frames) {
    index << f.epoch << ',' << detail::num(f.time) << '\n';
    const auto stem = dir / "frames" / detail::epoch_name(f.epoch);
    detail::write_raster(fs::path(stem.string() + ".depth"), f.frame.depth);
    detail::write_raster(fs::path(stem.string() + ".conf"), f.frame.confidence);
    detail::write_raster(fs::path(stem.string() + ".mask"), f.frame.mask);
  }
}

/// Loads a dataset. odo.csv, gt.csv and frames/ are optional.
inline Dataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset ds;
  {
    std::ifstream in(dir / "calib.json");
    if (!in) throw IoError("cannot open " + (dir / "calib.json").string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("calib.json: ") + e.what());
    }
    calib_from_json(j, ds.intrinsics, ds.extrinsic);
  }
  for (const auto& r : detail::read_csv(dir / "imu.csv", 7)) ds.imu.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  if (ds.imu.empty()) throw IoError("imu.csv holds no samples");
  if (fs::exists(dir / "odo.csv")) {
    for (const auto& r : detail::read_csv(dir / "odo.csv", 2)) ds.odo.push_back({r[0], r[1]});
  }
  if (fs::exists(dir / "gt.csv")) ds.gt = read_pose_csv(dir / "gt.csv");
  if (fs::exists(dir / "frames" / "index.csv")) {
    const int w = ds.intrinsics.width, h = ds.intrinsics.height;
    for (const auto& r : detail::read_csv(dir / "frames" / "index.csv", 2)) {
      FrameRecord rec;
      rec.epoch = static_cast<std::size_t>(r[0]);
      rec.time = r[1];
      const auto stem = (dir / "frames" / detail::epoch_name(rec.epoch)).string();
      rec.frame.intrinsics = ds.intrinsics;
      rec.frame.timestamp = rec.time;
      rec.frame.depth = detail::read_float_raster(stem + ".depth", w, h);
      rec.frame.confidence = detail::read_float_raster(stem + ".conf", w, h);
      rec.frame.mask = detail::read_mask(stem + ".mask", w, h);
      ds.frames.push_back(std::move(rec));
    }
  }
  return ds;
}

}  // namespace vmr::harness
