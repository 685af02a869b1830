#pragma once

#include <string_view>
#include <vector>

#include "vmr/geom.hpp"

namespace vmr {

enum class Frame { Camera, Body, LocalLevel };

inline std::string_view to_string(Frame f) {
  switch (f) {
    case Frame::Camera: return "camera";
    case Frame::Body: return "body";
    case Frame::LocalLevel: return "local-level";
  }
  return "?";
}

/// A set of 3-D points tagged with the frame they are expressed in.
/// `covariances` is either empty or holds one 3x3 matrix per point.
struct PointCloud {
  std::vector<Vec3> points;
  Frame frame = Frame::LocalLevel;
  std::vector<Mat3> covariances;

  PointCloud() = default;
  explicit PointCloud(Frame f) : frame(f) {}
  PointCloud(std::vector<Vec3> pts, Frame f) : points(std::move(pts)), frame(f) {}

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  bool has_covariances() const noexcept { return !covariances.empty() && covariances.size() == points.size(); }
};

inline void require_frame(const PointCloud& cloud, Frame expected, std::string_view op) {
  if (cloud.frame != expected) {
    throw FrameMismatch(std::string(op) + ": expected " + std::string(to_string(expected)) + " cloud, got " +
                        std::string(to_string(cloud.frame)));
  }
}

/// Applies a rigid transform to every point (and rotates covariances).
inline PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose, Frame result_frame) {
  PointCloud out(result_frame);
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(pose * p);
  if (cloud.has_covariances()) {
    out.covariances.reserve(cloud.size());
    for (const auto& c : cloud.covariances) out.covariances.push_back(pose.rotation * c * pose.rotation.transpose());
  }
  return out;
}

/// Concatenates `more` onto `into`; covariances are kept only if both carry them.
inline void append_cloud(PointCloud& into, const PointCloud& more) {
  const bool keep_cov = (into.empty() || into.has_covariances()) && more.has_covariances();
  into.points.insert(into.points.end(), more.points.begin(), more.points.end());
  if (keep_cov) {
    into.covariances.insert(into.covariances.end(), more.covariances.begin(), more.covariances.end());
  } else {
    into.covariances.clear();
  }
}

inline Vec3 centroid(const PointCloud& cloud) {
  Vec3 c = Vec3::Zero();
  if (cloud.empty()) return c;
  for (const auto& p : cloud.points) c += p;
  return c / static_cast<double>(cloud.size());
}

}  // namespace vmr
