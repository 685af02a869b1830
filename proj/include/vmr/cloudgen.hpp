#pragma once

// Depth frame -> refined body-frame point cloud.
//
// Stage order used by generate():
//   confidence gate -> canonical focal rescale -> transient-object masking ->
//   pinhole back-projection -> camera-to-body transform -> voxel downsampling ->
//   depth/height crop -> scale correction -> statistical outlier removal (x2)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "vmr/cloud.hpp"
#include "vmr/errors.hpp"
#include "vmr/geom.hpp"
#include "vmr/kdtree.hpp"

namespace vmr {

/// Row-major raster, (u, v) = (column, row).
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  const T& at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  std::size_t size() const noexcept { return data.size(); }
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  /// Focal length the depth network was trained against.
  double f_canonical = 0.0;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0 && f_canonical > 0.0)) throw InvalidArgument("intrinsics: focal lengths must be > 0");
    if (width <= 0 || height <= 0) throw InvalidArgument("intrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw InvalidArgument("intrinsics: principal point outside the image");
    }
  }
};

/// Camera-to-body rigid transform.
using ExtrinsicCalibration = Pose;

struct DepthFrame {
  Raster<double> depth;       // meters, 0 = invalid
  Raster<double> confidence;  // [0, 1]
  Raster<std::uint8_t> mask;  // 1 = transient object
  CameraIntrinsics intrinsics;
  double timestamp = 0.0;

  void validate() const {
    intrinsics.validate();
    auto same = [&](int w, int h) { return w == intrinsics.width && h == intrinsics.height; };
    if (!same(depth.width, depth.height) || !same(confidence.width, confidence.height) ||
        !same(mask.width, mask.height)) {
      throw InvalidArgument("depth frame: raster dimensions disagree with intrinsics");
    }
    for (double d : depth.data) {
      if (!std::isfinite(d) || d < 0.0) throw InvalidArgument("depth frame: depth must be finite and >= 0");
    }
  }

  std::size_t valid_pixel_count() const {
    return static_cast<std::size_t>(std::count_if(depth.data.begin(), depth.data.end(), [](double d) { return d > 0.0; }));
  }
};

struct SorParams {
  std::size_t k = 6;
  double tau = 1.0;
};

struct CloudgenConfig {
  double confidence_threshold = 0.75;
  int dilation_kernel = 7;
  double voxel_size = 0.2;
  double d_max = 15.0;
  double h_max = 2.2;
  double scale_s = 1.0;
  SorParams sor_pass1{6, 1.0};
  SorParams sor_pass2{10, 2.0};

  static CloudgenConfig indoor() { return {}; }
  static CloudgenConfig outdoor() {
    CloudgenConfig c;
    c.d_max = 30.0;
    c.h_max = std::numeric_limits<double>::infinity();
    return c;
  }

  void validate() const {
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
      throw ConfigError("cloudgen: confidence_threshold must lie in [0, 1]");
    }
    if (dilation_kernel < 1 || dilation_kernel % 2 == 0) throw ConfigError("cloudgen: dilation_kernel must be odd and >= 1");
    if (!(voxel_size > 0.0 && d_max > 0.0 && h_max > 0.0 && scale_s > 0.0)) {
      throw ConfigError("cloudgen: voxel_size, d_max, h_max and scale_s must be positive");
    }
    for (const auto& p : {sor_pass1, sor_pass2}) {
      if (p.k < 1 || !(p.tau >= 0.0)) throw ConfigError("cloudgen: SOR needs k >= 1 and tau >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Raster stages

inline DepthFrame confidence_gate(DepthFrame frame, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("confidence_gate: threshold outside [0, 1]");
  for (std::size_t i = 0; i < frame.depth.size(); ++i) {
    if (frame.confidence.data[i] < threshold) frame.depth.data[i] = 0.0;
  }
  return frame;
}

/// Converts canonical-camera depth to the input camera: d * f_input / f_canonical, f_input = fx.
inline DepthFrame canonical_rescale(DepthFrame frame) {
  if (!(frame.intrinsics.f_canonical > 0.0)) throw InvalidArgument("canonical_rescale: f_canonical must be > 0");
  const double ratio = frame.intrinsics.fx / frame.intrinsics.f_canonical;
  for (double& d : frame.depth.data) {
    if (d > 0.0) d *= ratio;
  }
  return frame;
}

/// Binary dilation with a kernel x kernel square, clipped at the borders.
inline Raster<std::uint8_t> dilate_mask(const Raster<std::uint8_t>& mask, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("dilate_mask: kernel must be odd and >= 1");
  const int r = kernel / 2;
  Raster<std::uint8_t> rows(mask.width, mask.height, 0);
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (!mask.at(u, v)) continue;
      for (int du = std::max(0, u - r); du <= std::min(mask.width - 1, u + r); ++du) rows.at(du, v) = 1;
    }
  }
  Raster<std::uint8_t> out(mask.width, mask.height, 0);
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      if (!rows.at(u, v)) continue;
      for (int dv = std::max(0, v - r); dv <= std::min(mask.height - 1, v + r); ++dv) out.at(u, dv) = 1;
    }
  }
  return out;
}

/// Dilates the transient-object mask and zeroes depth underneath it.
inline DepthFrame apply_masks(DepthFrame frame, int kernel) {
  const auto dilated = dilate_mask(frame.mask, kernel);
  for (std::size_t i = 0; i < frame.depth.size(); ++i) {
    if (dilated.data[i]) frame.depth.data[i] = 0.0;
  }
  return frame;
}

/// Pinhole back-projection of every valid pixel, in row-major pixel order.
inline PointCloud back_project(const DepthFrame& frame) {
  const auto& k = frame.intrinsics;
  k.validate();
  PointCloud cloud(Frame::Camera);
  cloud.points.reserve(frame.valid_pixel_count());
  for (int v = 0; v < frame.depth.height; ++v) {
    for (int u = 0; u < frame.depth.width; ++u) {
      const double d = frame.depth.at(u, v);
      if (!(d > 0.0)) continue;
      cloud.points.emplace_back((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d);
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Cloud stages

inline PointCloud to_body_frame(const PointCloud& cloud, const ExtrinsicCalibration& calib) {
  require_frame(cloud, Frame::Camera, "to_body_frame");
  return transform_cloud(cloud, calib, Frame::Body);
}

namespace detail {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_key(const Vec3& p, double voxel) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel)), static_cast<std::int64_t>(std::floor(p.y() / voxel)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

}  // namespace detail

/// One centroid per occupied voxel; output follows first-occupancy order.
/// Covariances are dropped.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw InvalidArgument("voxel_downsample: voxel size must be > 0");
  std::unordered_map<detail::VoxelKey, std::size_t, detail::VoxelKeyHash> slots;
  slots.reserve(cloud.size());
  std::vector<Vec3> sums;
  std::vector<std::size_t> counts;
  for (const auto& p : cloud.points) {
    auto [it, inserted] = slots.try_emplace(detail::voxel_key(p, voxel), sums.size());
    if (inserted) {
      sums.push_back(p);
      counts.push_back(1);
    } else {
      sums[it->second] += p;
      ++counts[it->second];
    }
  }
  PointCloud out(cloud.frame);
  out.points.reserve(sums.size());
  for (std::size_t i = 0; i < sums.size(); ++i) out.points.push_back(sums[i] / static_cast<double>(counts[i]));
  return out;
}

/// Keeps points with forward coordinate x < d_max and height z < h_max.
inline PointCloud crop(const PointCloud& cloud, double d_max, double h_max) {
  if (!(d_max > 0.0)) throw InvalidArgument("crop: d_max must be > 0");
  PointCloud out(cloud.frame);
  const bool cov = cloud.has_covariances();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    if (p.x() < d_max && p.z() < h_max) {
      out.points.push_back(p);
      if (cov) out.covariances.push_back(cloud.covariances[i]);
    }
  }
  return out;
}

inline PointCloud apply_scale(const PointCloud& cloud, double s) {
  if (!(s > 0.0)) throw InvalidArgument("apply_scale: s must be > 0");
  PointCloud out(cloud.frame);
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(s * p);
  return out;
}

/// Mean distance from every point to its k nearest neighbours (self excluded).
inline std::vector<double> knn_mean_distances(const PointCloud& cloud, std::size_t k) {
  const KdTree tree(cloud.points);
  std::vector<double> mean(cloud.size(), 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nn = tree.knn(cloud.points[i], k, i);
    double sum = 0.0;
    for (const auto& n : nn) sum += std::sqrt(n.dist2);
    mean[i] = sum / static_cast<double>(nn.size());
  }
  return mean;
}

struct SorResult {
  PointCloud cloud;
  /// Set when the cloud had <= k points and was returned unchanged.
  bool too_few_points = false;
  std::size_t removed = 0;
};

/// Statistical outlier removal: keeps points whose mean k-NN distance is at
/// most mu + tau * sigma over the whole cloud (sigma with n - 1 denominator).
inline SorResult sor_filter(const PointCloud& cloud, std::size_t k, double tau) {
  if (k < 1) throw InvalidArgument("sor_filter: k must be >= 1");
  if (!(tau >= 0.0)) throw InvalidArgument("sor_filter: tau must be >= 0");
  if (cloud.size() <= k) return {cloud, true, 0};

  const auto mean_d = knn_mean_distances(cloud, k);
  const double n = static_cast<double>(mean_d.size());
  const double mu = std::accumulate(mean_d.begin(), mean_d.end(), 0.0) / n;
  double ss = 0.0;
  for (double m : mean_d) ss += (m - mu) * (m - mu);
  const double sigma = std::sqrt(ss / (n - 1.0));
  const double limit = std::isinf(tau) ? std::numeric_limits<double>::infinity() : mu + tau * sigma;

  SorResult res{PointCloud(cloud.frame), false, 0};
  const bool cov = cloud.has_covariances();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (mean_d[i] <= limit) {
      res.cloud.points.push_back(cloud.points[i]);
      if (cov) res.cloud.covariances.push_back(cloud.covariances[i]);
    }
  }
  res.removed = cloud.size() - res.cloud.size();
  return res;
}

/// Full depth-frame-to-body-cloud pipeline.
inline PointCloud generate(const DepthFrame& frame, const ExtrinsicCalibration& calib, const CloudgenConfig& cfg) {
  cfg.validate();
  frame.validate();
  DepthFrame f = confidence_gate(frame, cfg.confidence_threshold);
  f = canonical_rescale(std::move(f));
  f = apply_masks(std::move(f), cfg.dilation_kernel);
  PointCloud cloud = to_body_frame(back_project(f), calib);
  cloud = voxel_downsample(cloud, cfg.voxel_size);
  cloud = crop(cloud, cfg.d_max, cfg.h_max);
  cloud = apply_scale(cloud, cfg.scale_s);
  cloud = sor_filter(cloud, cfg.sor_pass1.k, cfg.sor_pass1.tau).cloud;
  cloud = sor_filter(cloud, cfg.sor_pass2.k, cfg.sor_pass2.tau).cloud;
  return cloud;
}

}  // namespace vmr
