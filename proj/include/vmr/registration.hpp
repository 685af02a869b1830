#pragma once

// Visual map registration: Generalized-ICP plus the indoor two-stage and the
// outdoor aggregated registration flows.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "vmr/cloud.hpp"
#include "vmr/cloudgen.hpp"
#include "vmr/errors.hpp"
#include "vmr/geom.hpp"
#include "vmr/kdtree.hpp"
#include "vmr/mapstore.hpp"

namespace vmr {

/// Body cloud -> local-level frame through the a priori pose.
inline PointCloud to_local_frame(const PointCloud& cloud, const Pose& prior) {
  require_frame(cloud, Frame::Body, "to_local_frame");
  return transform_cloud(cloud, prior, Frame::LocalLevel);
}

/// T_hat = delta * prior (correction expressed in the local-level frame).
inline Pose apply_correction(const Pose& prior, const Pose& delta) { return delta * prior; }

// ---------------------------------------------------------------------------
// Per-point covariances

enum class CovarianceModel {
  /// Surface patch: eps along the local normal, 1 in the tangent plane.
  Plane,
  /// Flattened (z = 0) cloud: eps along z and along the in-plane normal,
  /// 1 along the dominant x/y direction.
  Line,
  /// eps * I, no neighbourhood estimate (for sparse, noisy sources).
  Isotropic,
};

inline PointCloud estimate_covariances(const PointCloud& cloud, std::size_t k, double eps,
                                       CovarianceModel model = CovarianceModel::Plane) {
  if (k < 1) throw InvalidArgument("estimate_covariances: k must be >= 1");
  if (model == CovarianceModel::Isotropic) {
    PointCloud out = cloud;
    out.covariances.assign(cloud.size(), eps * Mat3::Identity());
    return out;
  }
  if (cloud.size() <= k) {
    throw TooFewPoints("estimate_covariances: " + std::to_string(cloud.size()) + " points, need more than " +
                       std::to_string(k));
  }
  PointCloud out = cloud;
  out.covariances.assign(cloud.size(), Mat3::Identity());
  const KdTree tree(cloud.points);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nn = tree.knn(cloud.points[i], k);  // includes the point itself
    Vec3 mean = Vec3::Zero();
    for (const auto& n : nn) mean += cloud.points[n.index];
    mean /= static_cast<double>(nn.size());
    Mat3 scatter = Mat3::Zero();
    for (const auto& n : nn) {
      const Vec3 d = cloud.points[n.index] - mean;
      scatter += d * d.transpose();
    }
    if (model == CovarianceModel::Plane) {
      Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
      const Mat3& basis = es.eigenvectors();  // ascending eigenvalues: normal first
      out.covariances[i] = basis * Vec3(eps, 1.0, 1.0).asDiagonal() * basis.transpose();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(scatter.topLeftCorner<2, 2>());
      const Eigen::Vector2d t = es.eigenvectors().col(1);
      const Vec3 tangent(t.x(), t.y(), 0.0);
      out.covariances[i] = eps * Mat3::Identity() + (1.0 - eps) * tangent * tangent.transpose();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// GICP

struct GicpConfig {
  std::size_t k_neighbors = 20;
  double max_correspondence_dist = 1.0;
  /// The correspondence radius starts here and is halved each time the
  /// solver settles, down to max_correspondence_dist.
  double coarse_correspondence_dist = 3.0;
  int max_iterations = 60;
  double translation_epsilon = 1e-4;
  double rotation_epsilon = 1e-4;
  double plane_regularization = 1e-3;
  /// Solve only this subset of the pose; the others stay at the initial guess.
  std::optional<DofGroup> dofs;

  static GicpConfig restricted(DofGroup g) {
    GicpConfig c;
    c.dofs = g;
    return c;
  }

  void validate() const {
    if (k_neighbors < 1 || max_iterations < 1) throw ConfigError("gicp: k_neighbors and max_iterations must be >= 1");
    if (!(max_correspondence_dist > 0.0 && translation_epsilon > 0.0 && rotation_epsilon > 0.0 &&
          plane_regularization > 0.0)) {
      throw ConfigError("gicp: distances, epsilons and regularization must be positive");
    }
  }
};

struct RegistrationResult {
  Pose delta;
  double fitness = 0.0;
  double rmse_inliers = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Objective before and after each accepted Gauss-Newton step (fixed correspondences).
  std::vector<std::array<double, 2>> objective_trace;
};

/// Target cloud with covariances and a search tree, reusable across registrations.
class GicpTarget {
 public:
  GicpTarget() = default;
  GicpTarget(const PointCloud& cloud, std::size_t k, double eps, CovarianceModel model = CovarianceModel::Plane)
      : cloud_(cloud.has_covariances() ? cloud : estimate_covariances(cloud, k, eps, model)), tree_(cloud_.points) {}

  const PointCloud& cloud() const noexcept { return cloud_; }
  const KdTree& tree() const noexcept { return tree_; }
  bool empty() const noexcept { return cloud_.empty(); }

 private:
  PointCloud cloud_;
  KdTree tree_;
};

namespace detail {

struct Correspondence {
  std::size_t source;
  std::size_t target;
  Mat3 weight;  // (C_target + R C_source R^T)^-1
};

inline double gicp_objective(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt,
                             const std::vector<Correspondence>& corr, const Pose& t) {
  double e = 0.0;
  for (const auto& c : corr) {
    const Vec3 r = tgt[c.target] - t * src[c.source];
    e += r.dot(c.weight * r);
  }
  return e;
}

inline Pose se3_left_update(const Vec6& xi, const Pose& t) { return Pose(exp_so3(xi.tail<3>()), xi.head<3>()) * t; }

}  // namespace detail

/// Generalized-ICP (plane-to-plane). Minimises sum d^T (C_t + R C_s R^T)^-1 d
/// over nearest-neighbour correspondences by Gauss-Newton on SE(3) with left
/// perturbations. The returned delta satisfies: delta * init maps source onto
/// target. Throws Degenerate on < 10 correspondences or an ill-conditioned
/// (cond > 1e12) normal matrix.
namespace detail {

/// xi = -H^-1 b over the active coordinates (translation 0..2, rotation 3..5).
inline Vec6 solve_normal(const Mat6& h, const Vec6& b, std::optional<DofGroup> dofs) {
  std::array<int, 6> idx{0, 1, 2, 3, 4, 5};
  int n = 6;
  if (dofs == DofGroup::Vertical) {
    idx = {2, 3, 4};
    n = 3;
  } else if (dofs == DofGroup::Horizontal) {
    idx = {0, 1, 5};
    n = 3;
  }
  Eigen::MatrixXd hr(n, n);
  Eigen::VectorXd br(n);
  for (int r = 0; r < n; ++r) {
    br(r) = b(idx[r]);
    for (int c = 0; c < n; ++c) hr(r, c) = h(idx[r], idx[c]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hr, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(n - 1);
  if (!(lo > 0.0) || hi / lo > 1e12) throw Degenerate("gicp: normal matrix is singular (condition > 1e12)");
  const Eigen::VectorXd xr = hr.ldlt().solve(-br);
  Vec6 xi = Vec6::Zero();
  for (int r = 0; r < n; ++r) xi(idx[r]) = xr(r);
  return xi;
}

}  // namespace detail

inline RegistrationResult gicp(const PointCloud& source, const GicpTarget& target, const Pose& init,
                               const GicpConfig& cfg, CovarianceModel source_model = CovarianceModel::Plane) {
  cfg.validate();
  if (source.empty() || target.empty()) throw Degenerate("gicp: empty source or target");
  if (!source.has_covariances() && source_model != CovarianceModel::Isotropic && source.size() <= cfg.k_neighbors) {
    throw Degenerate("gicp: source has only " + std::to_string(source.size()) + " points");
  }
  const PointCloud src =
      source.has_covariances() ? source : estimate_covariances(source, cfg.k_neighbors, cfg.plane_regularization, source_model);
  const auto& tgt_pts = target.cloud().points;
  const auto& tgt_cov = target.cloud().covariances;

  RegistrationResult res;
  Pose t = init;
  double radius = std::max(cfg.coarse_correspondence_dist, cfg.max_correspondence_dist);
  std::vector<detail::Correspondence> corr;
  corr.reserve(src.size());

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    res.iterations = iter;
    corr.clear();
    const Mat3& r = t.rotation;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const Vec3 q = t * src.points[i];
      const auto nn = target.tree().nearest(q, radius);
      if (!nn) continue;
      const Mat3 c = tgt_cov[nn->index] + r * src.covariances[i] * r.transpose();
      corr.push_back({i, nn->index, c.inverse()});
    }
    if (corr.size() < 10) {
      throw Degenerate("gicp: only " + std::to_string(corr.size()) + " correspondences within " +
                       std::to_string(radius) + " m");
    }

    Mat6 h = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    double e0 = 0.0;
    for (const auto& c : corr) {
      const Vec3 q = t * src.points[c.source];
      const Vec3 res_i = tgt_pts[c.target] - q;
      Eigen::Matrix<double, 3, 6> j;
      j.leftCols<3>() = -Mat3::Identity();
      j.rightCols<3>() = skew(q);
      const Eigen::Matrix<double, 6, 3> jtw = j.transpose() * c.weight;
      h.noalias() += jtw * j;
      b.noalias() += jtw * res_i;
      e0 += res_i.dot(c.weight * res_i);
    }
    const Vec6 xi = detail::solve_normal(h, b, cfg.dofs);

    // step halving keeps the objective non-increasing for fixed correspondences
    double scale = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 12; ++halving, scale *= 0.5) {
      const Pose cand = detail::se3_left_update(scale * xi, t);
      const double e1 = detail::gicp_objective(src.points, tgt_pts, corr, cand);
      if (e1 <= e0) {
        res.objective_trace.push_back({e0, e1});
        t = cand;
        accepted = true;
        break;
      }
    }
    const bool small = !accepted || ((scale * xi.head<3>()).norm() < cfg.translation_epsilon &&
                                     (scale * xi.tail<3>()).norm() < cfg.rotation_epsilon);
    if (small) {
      if (radius > cfg.max_correspondence_dist) {
        radius = std::max(cfg.max_correspondence_dist, 0.5 * radius);
        continue;
      }
      res.converged = true;
      break;
    }
  }

  res.delta = t * init.inverse();
  std::size_t inliers = 0;
  double sq = 0.0;
  for (const auto& p : src.points) {
    if (const auto nn = target.tree().nearest(t * p, cfg.max_correspondence_dist)) {
      ++inliers;
      sq += nn->dist2;
    }
  }
  res.fitness = static_cast<double>(inliers) / static_cast<double>(src.size());
  res.rmse_inliers = inliers ? std::sqrt(sq / static_cast<double>(inliers)) : 0.0;
  return res;
}

inline RegistrationResult gicp(const PointCloud& source, const PointCloud& target, const Pose& init,
                               const GicpConfig& cfg) {
  cfg.validate();
  if (target.empty()) throw Degenerate("gicp: empty target");
  if (!target.has_covariances() && target.size() <= cfg.k_neighbors) {
    throw Degenerate("gicp: target has only " + std::to_string(target.size()) + " points");
  }
  return gicp(source, GicpTarget(target, cfg.k_neighbors, cfg.plane_regularization), init, cfg);
}

// ---------------------------------------------------------------------------
// Indoor two-stage registration

/// Ground/surround partition of a generated (local-level) cloud; same
/// algorithm as the indoor map split.
inline std::pair<PointCloud, PointCloud> split_ground(const PointCloud& cloud, const GroundSplitConfig& cfg) {
  auto s = split_ground_plane(cloud, cfg);
  return {std::move(s.ground), std::move(s.surround)};
}

/// Top-down projection: z set to 0, then voxel downsampling.
inline PointCloud flatten_2d(const PointCloud& cloud, double voxel) {
  PointCloud flat(cloud.frame);
  flat.points.reserve(cloud.size());
  for (const auto& p : cloud.points) flat.points.emplace_back(p.x(), p.y(), 0.0);
  return voxel_downsample(flat, voxel);
}

struct IndoorRegistrationConfig {
  GroundSplitConfig split;
  GicpConfig ground_gicp = GicpConfig::restricted(DofGroup::Vertical);
  GicpConfig planar_gicp = GicpConfig::restricted(DofGroup::Horizontal);
  double flatten_voxel = 0.05;
  /// Surround points closer than this to the fitted floor are left out of the
  /// planar stage (noisy floor returns that missed the ground inlier band).
  double floor_clearance = 0.3;
  CovarianceModel planar_source_model = CovarianceModel::Isotropic;
  double fitness_gate = 0.4;
  double rmse_gate = 1.0;
};

/// Registration targets derived once from an indoor map.
struct IndoorTargets {
  GicpTarget ground;
  GicpTarget planar;

  static IndoorTargets prepare(const IndoorMap& map, const IndoorRegistrationConfig& cfg) {
    return {GicpTarget(map.ground, cfg.ground_gicp.k_neighbors, cfg.ground_gicp.plane_regularization),
            GicpTarget(flatten_2d(map.surround, cfg.flatten_voxel), cfg.planar_gicp.k_neighbors,
                       cfg.planar_gicp.plane_regularization, CovarianceModel::Line)};
  }
};

struct IndoorRegistrationResult {
  RegistrationResult combined;
  RegistrationResult ground_stage;
  RegistrationResult planar_stage;
  Pose delta_vertical;
  Pose delta_horizontal;
};

/// Ground registration (z, pitch, roll) followed by planar registration of the
/// flattened surround cloud (x, y, yaw); delta = delta_h * delta_v.
/// Throws StageFailed(1|2) when a stage is degenerate or gated out.
inline IndoorRegistrationResult register_indoor(const PointCloud& cloud, const IndoorTargets& map,
                                                const IndoorRegistrationConfig& cfg) {
  require_frame(cloud, Frame::LocalLevel, "register_indoor");
  if (cloud.empty()) throw StageFailed(1, "empty cloud");
  auto gate = [&](int stage, const RegistrationResult& r) {
    if (r.fitness < cfg.fitness_gate || r.rmse_inliers > cfg.rmse_gate) {
      throw StageFailed(stage, "fitness " + std::to_string(r.fitness) + ", rmse " + std::to_string(r.rmse_inliers));
    }
  };

  GroundSplit split;
  try {
    split = split_ground_plane(cloud, cfg.split);
  } catch (const NoGroundPlane& e) {
    throw StageFailed(1, e.what());
  }
  const PointCloud& ground = split.ground;
  PointCloud surround(Frame::LocalLevel);
  for (const auto& p : split.surround.points) {
    if (split.plane.signed_distance(p) > cfg.floor_clearance) surround.points.push_back(p);
  }

  IndoorRegistrationResult out;
  try {
    out.ground_stage = gicp(ground, map.ground, Pose::identity(), cfg.ground_gicp);
    out.delta_vertical = compose_partial(decompose(out.ground_stage.delta), DofGroup::Vertical);
  } catch (const Error& e) {
    throw StageFailed(1, e.what());
  }
  gate(1, out.ground_stage);

  const PointCloud levelled = transform_cloud(surround, out.delta_vertical, Frame::LocalLevel);
  try {
    out.planar_stage = gicp(flatten_2d(levelled, cfg.flatten_voxel), map.planar, Pose::identity(), cfg.planar_gicp,
                            cfg.planar_source_model);
    out.delta_horizontal = compose_partial(decompose(out.planar_stage.delta), DofGroup::Horizontal);
  } catch (const Error& e) {
    throw StageFailed(2, e.what());
  }
  gate(2, out.planar_stage);

  out.combined.delta = out.delta_horizontal * out.delta_vertical;
  out.combined.fitness = std::min(out.ground_stage.fitness, out.planar_stage.fitness);
  out.combined.rmse_inliers = std::max(out.ground_stage.rmse_inliers, out.planar_stage.rmse_inliers);
  out.combined.iterations = out.ground_stage.iterations + out.planar_stage.iterations;
  out.combined.converged = out.ground_stage.converged && out.planar_stage.converged;
  return out;
}

// ---------------------------------------------------------------------------
// Outdoor aggregated registration

/// Displacement-triggered accumulation of body clouds in the local-level frame.
/// Single-owner state: one buffer per vehicle session.
class AggregationBuffer {
 public:
  AggregationBuffer(double d_min, double d_max_total, double voxel)
      : d_min_(d_min), d_max_total_(d_max_total), voxel_(voxel) {
    if (!(d_min > 0.0 && d_min < d_max_total)) throw InvalidArgument("aggregation: need 0 < d_min < d_max_total");
    if (!(voxel > 0.0)) throw InvalidArgument("aggregation: voxel must be > 0");
  }

  /// Offers a frame. It is accepted once the vehicle has moved d_min from the
  /// last accepted position; the merged, voxel-filtered cloud is returned (and
  /// the buffer reset) once the accepted displacement reaches d_max_total.
  std::optional<PointCloud> push(const PointCloud& cloud_body, const Pose& pose, const Vec3& position) {
    if (!anchor_) {
      anchor_ = position;
      return std::nullopt;
    }
    const double step = (position - *anchor_).norm();
    if (step < d_min_) return std::nullopt;
    clouds_.push_back(to_local_frame(cloud_body, pose));
    anchor_ = position;
    distance_ += step;
    if (distance_ < d_max_total_) return std::nullopt;

    PointCloud merged(Frame::LocalLevel);
    for (const auto& c : clouds_) append_cloud(merged, c);
    clouds_.clear();
    distance_ = 0.0;
    return voxel_downsample(merged, voxel_);
  }

  const std::vector<PointCloud>& clouds() const noexcept { return clouds_; }
  std::optional<Vec3> anchor() const noexcept { return anchor_; }
  double distance_accumulated() const noexcept { return distance_; }

 private:
  double d_min_;
  double d_max_total_;
  double voxel_;
  std::vector<PointCloud> clouds_;
  std::optional<Vec3> anchor_;
  double distance_ = 0.0;
};

struct OutdoorRegistrationConfig {
  GicpConfig gicp;
  double roi_extent = 100.0;
  double fitness_gate = 0.4;
  double rmse_gate = 1.0;
  double d_min = 1.0;
  double d_max_total = 10.0;
  double merge_voxel = 0.2;
};

/// Full 6-DOF GICP of an aggregated cloud against the ROI around the prior.
/// Throws EmptyRoi, Degenerate or GateRejected.
inline RegistrationResult register_outdoor(const PointCloud& merged, const MapStore& store, const Vec2& prior_xy,
                                           const OutdoorRegistrationConfig& cfg) {
  require_frame(merged, Frame::LocalLevel, "register_outdoor");
  if (merged.empty()) throw Degenerate("register_outdoor: empty merged cloud");
  const PointCloud ref = query_roi(store, prior_xy, cfg.roi_extent);
  if (ref.size() <= cfg.gicp.k_neighbors) throw EmptyRoi("ROI holds too few points to register against");
  auto r = gicp(merged, GicpTarget(ref, cfg.gicp.k_neighbors, cfg.gicp.plane_regularization), Pose::identity(), cfg.gicp);
  if (r.fitness < cfg.fitness_gate || r.rmse_inliers > cfg.rmse_gate) throw GateRejected(r.fitness, r.rmse_inliers);
  return r;
}

}  // namespace vmr
