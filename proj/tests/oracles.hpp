#pragma once

// Test-only reference implementations. Everything here is written
// independently of the library code path it checks: dense loops, brute-force
// scans and textbook series rather than the optimised routines.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "vmr/geom.hpp"

namespace vmr::oracle {

/// Truncated power series of the matrix exponential.
inline Mat3 matrix_exp_series(const Mat3& a, int terms = 20) {
  Mat3 sum = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int n = 1; n < terms; ++n) {
    term = term * a / static_cast<double>(n);
    sum += term;
  }
  return sum;
}

/// Brute-force k nearest neighbours (self excluded), ties by index.
inline std::vector<std::pair<double, std::size_t>> brute_knn(const std::vector<Vec3>& pts, std::size_t i,
                                                             std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (j == i) continue;
    all.emplace_back((pts[j] - pts[i]).norm(), j);
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, all.size()));
  return all;
}

/// Single-pass statistical outlier removal by O(n^2) neighbour search.
inline std::vector<Vec3> brute_sor(const std::vector<Vec3>& pts, std::size_t k, double tau) {
  if (pts.size() <= k) return pts;
  std::vector<double> mu_i(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double s = 0.0;
    for (const auto& [d, j] : brute_knn(pts, i, k)) s += d;
    mu_i[i] = s / static_cast<double>(k);
  }
  double mu = 0.0;
  for (double m : mu_i) mu += m;
  mu /= static_cast<double>(pts.size());
  double var = 0.0;
  for (double m : mu_i) var += (m - mu) * (m - mu);
  const double sigma = std::sqrt(var / static_cast<double>(pts.size() - 1));
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (mu_i[i] <= mu + tau * sigma) out.push_back(pts[i]);
  }
  return out;
}

/// Groups points by floor(coord / voxel) with an ordered map and averages.
inline std::vector<Vec3> brute_voxel(const std::vector<Vec3>& pts, double voxel) {
  std::map<std::tuple<long, long, long>, std::pair<Vec3, int>> groups;
  for (const auto& p : pts) {
    auto key = std::make_tuple(static_cast<long>(std::floor(p.x() / voxel)), static_cast<long>(std::floor(p.y() / voxel)),
                               static_cast<long>(std::floor(p.z() / voxel)));
    auto& g = groups[key];
    if (g.second == 0) g.first = Vec3::Zero();
    g.first += p;
    g.second += 1;
  }
  std::vector<Vec3> out;
  for (auto& [key, g] : groups) out.push_back(g.first / g.second);
  return out;
}

/// Sorts points lexicographically so two clouds can be compared as multisets.
inline std::vector<Vec3> sorted(std::vector<Vec3> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  return pts;
}

inline double max_multiset_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  const auto sa = sorted(a);
  const auto sb = sorted(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) worst = std::max(worst, (sa[i] - sb[i]).norm());
  return worst;
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle = kPi) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis(n(rng), n(rng), n(rng));
  axis.normalize();
  return Eigen::AngleAxisd(u(rng), axis).toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle = kPi, double trans = 10.0) {
  return {random_rotation(rng, max_angle), random_vec(rng, trans)};
}

}  // namespace vmr::oracle
