// vmrnav: simulate datasets, run map-aided navigation sessions, score trajectories.

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "vmr/harness/dataset.hpp"
#include "vmr/harness/metrics.hpp"
#include "vmr/harness/session.hpp"
#include "vmr/mapstore.hpp"
#include "vmr/pointio.hpp"

namespace {

using namespace vmr;
using namespace vmr::harness;

constexpr int kExitError = 1;
constexpr int kExitEpochFailure = 2;

WorldSpec resolve_world(const std::string& arg, double density) {
  WorldSpec w;
  if (arg == "garage" || arg == "street" || arg == "plane") {
    w.preset = arg;
  } else {
    w = world_spec_from_json(read_json_file(arg));
  }
  if (density > 0) w.density = density;
  return w;
}

int cmd_simulate(const std::string& world_arg, const std::string& traj, std::uint64_t seed, double density,
                 const std::string& out) {
  const auto spec = resolve_world(world_arg, density);
  const auto [world, map] = build_world(spec);
  spdlog::info("world '{}' with {} primitives, map of {} points", world.kind, world.primitives.size(), map.cloud.size());
  const auto sim = simulate(world, trajectory_from_json(read_json_file(traj)), seed);
  write_dataset(out, sim.dataset);
  io::write_points_bin(fs::path(out) / "map.bin", map.cloud);
  spdlog::info("wrote {} IMU samples, {} odometer samples, {} frames to {}", sim.dataset.imu.size(),
               sim.dataset.odo.size(), sim.dataset.frames.size(), out);
  return 0;
}

int cmd_run(const std::string& dataset, const std::string& map_path, const std::string& config,
            const std::string& mode, const std::string& out, bool disable_vmr, bool disable_odo) {
  std::optional<Mode> override_mode;
  if (!mode.empty()) override_mode = parse_mode(mode);
  SessionConfig cfg = config.empty() ? SessionConfig::defaults(override_mode.value_or(Mode::Indoor))
                                     : load_session_config(config, override_mode);
  cfg.disable_vmr = cfg.disable_vmr || disable_vmr;
  cfg.disable_odo = cfg.disable_odo || disable_odo;

  const auto ds = read_dataset(dataset);
  SessionMap map;
  if (!cfg.disable_vmr && !ds.frames.empty()) {
    if (map_path.empty()) throw ConfigError("--map is required unless registration is disabled");
    map = load_session_map(map_path, cfg);
  }
  spdlog::info("dataset: {} IMU samples, {} frames; mode {}", ds.imu.size(), ds.frames.size(),
               cfg.mode == Mode::Indoor ? "indoor" : "outdoor");
  const auto res = run_session(ds, map, cfg);
  for (const auto& e : res.events) spdlog::debug("{}", e);
  write_session_outputs(out, res);
  spdlog::info("{} rows, registrations applied {}/{}", res.rows.size(), res.registrations_applied,
               res.registrations_attempted);
  if (res.metrics) {
    spdlog::info("horizontal RMSE {:.3f} m, heading RMSE {:.3f} deg", res.metrics->horizontal.rmse,
                 res.metrics->heading.rmse);
  }
  if (res.failed) {
    spdlog::error("session stopped on an unrecoverable epoch error: {}", res.events.back());
    return kExitEpochFailure;
  }
  return 0;
}

int cmd_metrics(const std::string& est, const std::string& gt, double window) {
  const auto m = compute_metrics(read_pose_csv(est), read_pose_csv(gt), MetricsOptions{window});
  std::cout << to_json(m).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual map registration aided navigation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::string world = "garage", traj, out, dataset, map, config, mode, est, gt, dir, in;
  std::uint64_t seed = 1;
  double density = 0.0, window = 0.05, tile_size = 50.0;
  bool disable_vmr = false, disable_odo = false;

  auto* sim = app.add_subcommand("simulate", "synthesize a dataset and its map");
  sim->add_option("--world", world, "preset (garage|street|plane) or world JSON file");
  sim->add_option("--traj", traj, "trajectory JSON file")->required();
  sim->add_option("--seed", seed, "noise seed");
  sim->add_option("--map-density", density, "map sampling density, points per m^2");
  sim->add_option("--out", out, "output dataset directory")->required();

  auto* run = app.add_subcommand("run", "run a navigation session over a dataset");
  run->add_option("--dataset", dataset, "dataset directory")->required();
  run->add_option("--map", map, "map point file or tile directory");
  run->add_option("--config", config, "session config JSON");
  run->add_option("--mode", mode, "indoor|outdoor (overrides the config)");
  run->add_option("--out", out, "output directory")->required();
  run->add_flag("--disable-vmr", disable_vmr, "skip map registration (inertial + odometer only)");
  run->add_flag("--disable-odo", disable_odo, "skip odometer updates");

  auto* met = app.add_subcommand("metrics", "score an estimated trajectory against ground truth");
  met->add_option("--est", est, "estimated trajectory CSV")->required();
  met->add_option("--gt", gt, "ground-truth CSV")->required();
  met->add_option("--window", window, "time matching window, s");

  auto* idx = app.add_subcommand("build-index", "tile the point files in a directory");
  idx->add_option("--dir", dir, "directory holding .bin/.xyz point files")->required();
  idx->add_option("--tile-size", tile_size, "tile edge, m");

  auto* imp = app.add_subcommand("import-xyz", "convert an ASCII x y z file to the binary point format");
  imp->add_option("--in", in, "input .xyz")->required();
  imp->add_option("--out", out, "output .bin")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*sim) return cmd_simulate(world, traj, seed, density, out);
    if (*run) return cmd_run(dataset, map, config, mode, out, disable_vmr, disable_odo);
    if (*met) return cmd_metrics(est, gt, window);
    if (*idx) {
      const auto index = build_index(dir, tile_size);
      spdlog::info("indexed {} tiles into {}", index.entries.size(), (fs::path(dir) / "index.json").string());
      return 0;
    }
    if (*imp) {
      const auto cloud = io::import_xyz(in);
      io::write_points_bin(out, cloud);
      spdlog::info("wrote {} points to {}", cloud.size(), out);
      return 0;
    }
  } catch (const vmr::Error& e) {
    spdlog::error("{}", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    spdlog::error("unexpected: {}", e.what());
    return kExitError;
  }
  return 0;
}
