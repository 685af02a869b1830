#pragma once

// Trajectory accuracy statistics: RMSE and maximum absolute error per channel,
// plus the share of epochs under the 1 m and 1.5 m horizontal thresholds.

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "vmr/errors.hpp"
#include "vmr/harness/simulate.hpp"

namespace vmr::harness {

struct ChannelStats {
  double rmse = 0.0;
  double max_abs = 0.0;
};

struct Metrics {
  ChannelStats horizontal;  // m
  ChannelStats vertical;    // m
  ChannelStats roll;        // deg
  ChannelStats pitch;       // deg
  ChannelStats heading;     // deg
  double pct_within_1m = 0.0;
  double pct_within_1p5m = 0.0;
  std::size_t matched = 0;
};

struct MetricsOptions {
  /// Largest |t_est - t_truth| accepted as a match, s.
  double window = 0.05;
};

/// Per-epoch errors after nearest-time matching; unmatched epochs are dropped.
struct EpochErrors {
  std::vector<double> time, horizontal, vertical, roll, pitch, heading;
};

inline EpochErrors match_errors(const std::vector<PoseSample>& est, const std::vector<PoseSample>& truth,
                                const MetricsOptions& opt = {}) {
  std::vector<PoseSample> sorted = truth;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
  EpochErrors e;
  for (const auto& s : est) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), s.time,
                                     [](const PoseSample& p, double t) { return p.time < t; });
    const PoseSample* best = nullptr;
    if (it != sorted.end()) best = &*it;
    if (it != sorted.begin() && (!best || s.time - std::prev(it)->time <= best->time - s.time)) best = &*std::prev(it);
    if (!best || std::abs(best->time - s.time) > opt.window) continue;
    const Vec3 d = s.position - best->position;
    e.time.push_back(s.time);
    e.horizontal.push_back(std::hypot(d.x(), d.y()));
    e.vertical.push_back(std::abs(d.z()));
    e.roll.push_back(wrap_angle(s.euler.roll - best->euler.roll) * kRadToDeg);
    e.pitch.push_back(wrap_angle(s.euler.pitch - best->euler.pitch) * kRadToDeg);
    e.heading.push_back(wrap_angle(s.euler.yaw - best->euler.yaw) * kRadToDeg);
  }
  return e;
}

inline ChannelStats channel_stats(const std::vector<double>& err) {
  ChannelStats c;
  double ss = 0.0;
  for (double v : err) {
    ss += v * v;
    c.max_abs = std::max(c.max_abs, std::abs(v));
  }
  c.rmse = std::sqrt(ss / static_cast<double>(err.size()));
  return c;
}

/// Throws NoOverlap when no estimated epoch has a truth sample within the window.
inline Metrics compute_metrics(const std::vector<PoseSample>& est, const std::vector<PoseSample>& truth,
                               const MetricsOptions& opt = {}) {
  const auto e = match_errors(est, truth, opt);
  if (e.time.empty()) throw NoOverlap("no estimated epoch lies within the matching window of the truth series");
  Metrics m;
  m.matched = e.time.size();
  m.horizontal = channel_stats(e.horizontal);
  m.vertical = channel_stats(e.vertical);
  m.roll = channel_stats(e.roll);
  m.pitch = channel_stats(e.pitch);
  m.heading = channel_stats(e.heading);
  const double n = static_cast<double>(m.matched);
  m.pct_within_1m = 100.0 * static_cast<double>(std::count_if(e.horizontal.begin(), e.horizontal.end(), [](double h) { return h < 1.0; })) / n;
  m.pct_within_1p5m = 100.0 * static_cast<double>(std::count_if(e.horizontal.begin(), e.horizontal.end(), [](double h) { return h < 1.5; })) / n;
  return m;
}

inline nlohmann::json to_json(const Metrics& m) {
  auto ch = [](const ChannelStats& c) { return nlohmann::json{{"rmse", c.rmse}, {"max_ae", c.max_abs}}; };
  return {{"horizontal_m", ch(m.horizontal)},
          {"vertical_m", ch(m.vertical)},
          {"roll_deg", ch(m.roll)},
          {"pitch_deg", ch(m.pitch)},
          {"heading_deg", ch(m.heading)},
          {"pct_within_1m", m.pct_within_1m},
          {"pct_within_1p5m", m.pct_within_1p5m},
          {"matched_epochs", m.matched}};
}

}  // namespace vmr::harness
