#pragma once

// Error-state EKF: INS mechanization, odometer speed and map-registration pose
// updates (Joseph form), dynamic measurement-noise tuning and closed-loop reset.
//
// Error state order: dp, dv, dtheta, db_f, db_w. The attitude error is a
// body-frame rotation vector, R_true = R * Exp(dtheta); errors are defined as
// true minus nominal.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "vmr/errors.hpp"
#include "vmr/geom.hpp"

namespace vmr {

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

inline constexpr double kGravity = 9.80665;
inline const Vec3 kGravityEnu(0.0, 0.0, -kGravity);

/// chi-square 0.999 quantiles for 3 and 6 degrees of freedom.
inline constexpr double kChi2Gate3 = 16.266;
inline constexpr double kChi2Gate6 = 22.458;

namespace idx {
inline constexpr int p = 0, v = 3, th = 6, bf = 9, bw = 12;
}

struct NavState {
  Quaternion attitude = Quaternion::Identity();  // body -> nav
  Vec3 velocity = Vec3::Zero();
  Vec3 position = Vec3::Zero();
  Vec3 bias_accel = Vec3::Zero();
  Vec3 bias_gyro = Vec3::Zero();
  double time = 0.0;

  Mat3 rotation() const { return attitude.toRotationMatrix(); }
  Pose pose() const { return {rotation(), position}; }
};

struct ErrorState {
  Vec15 mean = Vec15::Zero();
  Mat15 P = Mat15::Identity();
};

struct ImuSample {
  double time = 0.0;
  Vec3 f = Vec3::Zero();
  Vec3 omega = Vec3::Zero();
};

struct OdoSample {
  double time = 0.0;
  double speed = 0.0;
};

struct NoiseConfig {
  /// Per-sample white-noise std of specific force (m/s^2) and angular rate (rad/s).
  double sigma_f = 9.81e-4 * 10.0;
  double sigma_w = 1.745e-4 * 10.0;
  /// Bias random-walk densities: m/s^2/sqrt(s) and rad/s/sqrt(s).
  double sigma_bf = 1e-4;
  double sigma_bw = 1e-6;
  Mat3 n_speed = Mat3::Identity() * 0.01;
  Mat6 n_pose = Vec6(0.0025, 0.0025, 0.0025, 1.2e-5, 1.2e-5, 3e-5).asDiagonal();
  double alpha = 0.5;

  /// White-noise std per sample from spectral densities (unit/sqrt(Hz)) at a sample rate.
  static NoiseConfig from_densities(double accel_density, double gyro_density, double rate_hz) {
    NoiseConfig n;
    n.sigma_f = accel_density * std::sqrt(rate_hz);
    n.sigma_w = gyro_density * std::sqrt(rate_hz);
    return n;
  }

  void validate() const {
    if (!(sigma_f > 0 && sigma_w > 0 && sigma_bf > 0 && sigma_bw > 0)) throw ConfigError("noise sigmas must be > 0");
    if (!(alpha >= 0)) throw ConfigError("alpha must be >= 0");
    if (Eigen::LLT<Mat3>(n_speed).info() != Eigen::Success) throw ConfigError("speed noise matrix is not SPD");
    if (Eigen::LLT<Mat6>(n_pose).info() != Eigen::Success) throw ConfigError("pose noise matrix is not SPD");
  }
};

struct FusionConfig {
  NoiseConfig noise;
  /// Initial 1-sigma: position m, velocity m/s, attitude rad, accel bias m/s^2, gyro bias rad/s.
  Vec15 initial_std = (Vec15() << Vec3::Constant(0.05), Vec3::Constant(0.05), Vec3::Constant(0.2 * kDegToRad),
                       Vec3::Constant(0.01), Vec3::Constant(1e-3))
                          .finished();
  bool gating = true;
  double max_attitude_innovation = 30.0 * kDegToRad;
  bool dynamic_tuning = true;

  Mat15 initial_covariance() const { return initial_std.array().square().matrix().asDiagonal(); }
};

// ---------------------------------------------------------------------------
// Mechanization

/// One strapdown step: attitude by the exact quaternion increment, velocity
/// with the pre-update rotation, position with the post-update velocity.
inline NavState mechanize(const NavState& s, const ImuSample& imu, double dt) {
  if (!(dt > 0.0) || dt > 0.1) throw DtOutOfRange("mechanize: dt = " + std::to_string(dt) + " s");
  NavState out = s;
  const Mat3 r_prev = s.rotation();
  out.attitude = (s.attitude * quat_increment(imu.omega - s.bias_gyro, dt)).normalized();
  out.velocity = s.velocity + (r_prev * (imu.f - s.bias_accel) + kGravityEnu) * dt;
  out.position = s.position + out.velocity * dt;
  out.time = s.time + dt;
  return out;
}

/// Discrete error-state transition matrix.
inline Mat15 transition_matrix(const NavState& s, const ImuSample& imu, double dt) {
  const Mat3 r = s.rotation();
  const Mat3 omega_f = skew(imu.f - s.bias_accel);
  Mat15 f = Mat15::Identity();
  f.block<3, 3>(idx::p, idx::v) = Mat3::Identity() * dt;
  f.block<3, 3>(idx::v, idx::th) = -r * omega_f * dt;
  f.block<3, 3>(idx::v, idx::bf) = -r * dt;
  f.block<3, 3>(idx::th, idx::th) = exp_so3(-(imu.omega - s.bias_gyro) * dt).transpose();  // exp(-skew(w) dt)^T
  f.block<3, 3>(idx::th, idx::bw) = -Mat3::Identity() * dt;
  return f;
}

inline Mat15 process_noise(const NoiseConfig& n, double dt) {
  Vec15 d;
  d << Vec3::Zero(), Vec3::Constant(n.sigma_f * n.sigma_f * dt * dt), Vec3::Constant(n.sigma_w * n.sigma_w * dt * dt),
      Vec3::Constant(n.sigma_bf * n.sigma_bf * dt), Vec3::Constant(n.sigma_bw * n.sigma_bw * dt);
  return d.asDiagonal();
}

/// P <- F P F^T + Q, evaluated at the pre-step nominal state.
inline ErrorState propagate(const ErrorState& err, const NavState& s, const ImuSample& imu, const NoiseConfig& n,
                            double dt) {
  if (!(dt > 0.0)) throw DtOutOfRange("propagate: dt must be > 0");
  const Mat15 f = transition_matrix(s, imu, dt);
  ErrorState out;
  out.P = f * err.P * f.transpose() + process_noise(n, dt);
  out.P = 0.5 * (out.P + out.P.transpose());
  out.mean = Vec15::Zero();
  return out;
}

// ---------------------------------------------------------------------------
// Measurements

/// Azimuth clockwise from North and nose-up pitch of the body x axis.
struct HeadingPitch {
  double azimuth = 0.0;
  double pitch = 0.0;
};

inline HeadingPitch heading_pitch(const Mat3& r) {
  const Vec3 fwd = r.col(0);
  return {std::atan2(fwd.x(), fwd.y()), std::asin(std::clamp(fwd.z(), -1.0, 1.0))};
}

inline Vec3 project_odo_velocity(double speed, const HeadingPitch& hp) {
  return {std::sin(hp.azimuth) * std::cos(hp.pitch) * speed, std::cos(hp.azimuth) * std::cos(hp.pitch) * speed,
          std::sin(hp.pitch) * speed};
}

enum class UpdateStatus { Applied, GateExceeded, AttitudeTooLarge };

inline std::string to_string(UpdateStatus s) {
  switch (s) {
    case UpdateStatus::Applied: return "applied";
    case UpdateStatus::GateExceeded: return "gate_exceeded";
    case UpdateStatus::AttitudeTooLarge: return "attitude_too_large";
  }
  return "?";
}

struct UpdateReport {
  UpdateStatus status = UpdateStatus::Applied;
  double mahalanobis2 = 0.0;
  Eigen::VectorXd innovation;
  Eigen::MatrixXd noise;  // N actually used
};

/// Gain, state correction and Joseph-form covariance for z = H dx + eta.
struct KalmanStep {
  Eigen::MatrixXd K;
  Vec15 dx;
  Mat15 P;
};

inline KalmanStep kalman_step(const Mat15& p, const Eigen::MatrixXd& h, const Eigen::MatrixXd& n,
                              const Eigen::VectorXd& z) {
  const Eigen::MatrixXd s = h * p * h.transpose() + n;
  KalmanStep out;
  out.K = p * h.transpose() * s.ldlt().solve(Eigen::MatrixXd::Identity(s.rows(), s.cols()));
  out.dx = out.K * z;
  const Mat15 ikh = Mat15::Identity() - out.K * h;
  out.P = ikh * p * ikh.transpose() + out.K * n * out.K.transpose();
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

/// Injects the error mean into the nominal state and zeroes it (P kept).
inline void reset_errors(ErrorState& err, NavState& s) {
  s.position += err.mean.segment<3>(idx::p);
  s.velocity += err.mean.segment<3>(idx::v);
  s.attitude = (s.attitude * quat_from_rotvec(err.mean.segment<3>(idx::th))).normalized();
  s.bias_accel += err.mean.segment<3>(idx::bf);
  s.bias_gyro += err.mean.segment<3>(idx::bw);
  err.mean.setZero();
}

inline Eigen::MatrixXd speed_h() {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 15);
  h.block<3, 3>(0, idx::v).setIdentity();
  return h;
}

inline Eigen::MatrixXd pose_h() {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(6, 15);
  h.block<3, 3>(0, idx::p).setIdentity();
  h.block<3, 3>(3, idx::th).setIdentity();
  return h;
}

/// Odometer speed projected along the current heading/pitch; the innovation
/// also carries the zero lateral/vertical velocity constraint.
inline UpdateReport update_speed(ErrorState& err, NavState& s, const OdoSample& odo, const Mat3& n, bool gating = true) {
  UpdateReport rep;
  const Vec3 z = project_odo_velocity(odo.speed, heading_pitch(s.rotation())) - s.velocity;
  rep.innovation = z;
  rep.noise = n;
  const Eigen::MatrixXd h = speed_h();
  const Mat3 sm = err.P.block<3, 3>(idx::v, idx::v) + n;
  rep.mahalanobis2 = z.dot(sm.ldlt().solve(z));
  if (gating && rep.mahalanobis2 > kChi2Gate3) {
    rep.status = UpdateStatus::GateExceeded;
    return rep;
  }
  const auto k = kalman_step(err.P, h, n, z);
  err.mean = k.dx;
  err.P = k.P;
  reset_errors(err, s);
  return rep;
}

/// Pose innovation (dp, body rotation vector) of a corrected pose against the nominal state.
inline Vec6 pose_innovation(const NavState& s, const Pose& corrected) {
  Vec6 z;
  z.head<3>() = corrected.translation - s.position;
  z.tail<3>() = log_so3(s.rotation().transpose() * corrected.rotation);
  return z;
}

/// N_static * diag(exp(alpha |innovation_i|)).
inline Mat6 dynamic_tune(const Mat6& n_static, const Vec6& innovation, double alpha) {
  if (!(alpha >= 0.0)) throw InvalidArgument("dynamic_tune: alpha must be >= 0");
  const Vec6 lambda = (alpha * innovation.cwiseAbs()).array().exp().matrix();
  return n_static * lambda.asDiagonal();
}

inline UpdateReport update_pose(ErrorState& err, NavState& s, const Pose& corrected, const Mat6& n, bool gating = true,
                                double max_attitude = 30.0 * kDegToRad) {
  UpdateReport rep;
  const Vec6 z = pose_innovation(s, corrected);
  rep.innovation = z;
  rep.noise = n;
  if (z.tail<3>().norm() > max_attitude) {
    rep.status = UpdateStatus::AttitudeTooLarge;
    return rep;
  }
  const Eigen::MatrixXd h = pose_h();
  const Eigen::MatrixXd sm = h * err.P * h.transpose() + n;
  rep.mahalanobis2 = z.dot(sm.ldlt().solve(Eigen::VectorXd(z)));
  if (gating && rep.mahalanobis2 > kChi2Gate6) {
    rep.status = UpdateStatus::GateExceeded;
    return rep;
  }
  const auto k = kalman_step(err.P, h, n, z);
  err.mean = k.dx;
  err.P = k.P;
  reset_errors(err, s);
  return rep;
}

/// Symmetry and PSD check with relative tolerances.
inline bool covariance_valid(const Mat15& p) {
  const double scale = p.cwiseAbs().maxCoeff();
  if (!p.allFinite()) return false;
  if ((p - p.transpose()).cwiseAbs().maxCoeff() >= 1e-9 * std::max(scale, 1e-300)) return false;
  Eigen::SelfAdjointEigenSolver<Mat15> es(p, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0) > -1e-9 * std::max(p.trace(), 1e-300);
}

// ---------------------------------------------------------------------------
// Session

/// Inputs available at one processing epoch.
struct EpochInput {
  double time = 0.0;
  std::vector<ImuSample> imu;  // samples with time in (previous epoch, time]
  std::optional<OdoSample> odo;
  bool has_frame = false;
};

struct EpochReport {
  std::optional<UpdateReport> speed;
  std::optional<UpdateReport> pose;
  Pose prior_pose;  // nominal pose handed to registration
};

/// Registration callback: given the prior pose, returns a corrected pose or
/// nothing (failed / gated registration).
using RegistrationFn = std::function<std::optional<Pose>(const NavState& prior)>;

/// Single-owner sequential filter state.
class FusionSession {
 public:
  FusionSession(const NavState& initial, const ImuSample& first_imu, const FusionConfig& cfg)
      : cfg_(cfg), state_(initial), held_(first_imu) {
    cfg_.noise.validate();
    err_.P = cfg_.initial_covariance();
  }

  const NavState& state() const noexcept { return state_; }
  const ErrorState& error() const noexcept { return err_; }
  const FusionConfig& config() const noexcept { return cfg_; }

  /// Mechanizes and propagates through `samples`, then up to `t`. Each sample
  /// is held until the next one arrives.
  void advance(const std::vector<ImuSample>& samples, double t) {
    for (const auto& imu : samples) {
      if (imu.time < state_.time - 1e-12) throw InvalidArgument("IMU timestamps must be monotone");
      step_to(imu.time);
      held_ = imu;
    }
    step_to(t);
  }

  UpdateReport apply_speed(const OdoSample& odo) {
    return update_speed(err_, state_, odo, cfg_.noise.n_speed, cfg_.gating);
  }

  UpdateReport apply_pose(const Pose& corrected) {
    const Vec6 z = pose_innovation(state_, corrected);
    const Mat6 n = cfg_.dynamic_tuning ? dynamic_tune(cfg_.noise.n_pose, z, cfg_.noise.alpha) : cfg_.noise.n_pose;
    return update_pose(err_, state_, corrected, n, cfg_.gating, cfg_.max_attitude_innovation);
  }

  /// Fixed order: propagate -> speed update -> registration on the posterior
  /// -> tuned pose update (reset after every applied update).
  EpochReport step(const EpochInput& in, const RegistrationFn& registration = {}) {
    EpochReport rep;
    advance(in.imu, in.time);
    if (in.odo) rep.speed = apply_speed(*in.odo);
    rep.prior_pose = state_.pose();
    if (in.has_frame && registration) {
      if (const auto corrected = registration(state_)) rep.pose = apply_pose(*corrected);
    }
    return rep;
  }

 private:
  void step_to(double t) {
    const double dt = t - state_.time;
    if (dt <= 1e-12) return;
    const NavState before = state_;
    state_ = mechanize(state_, held_, dt);
    state_.time = t;
    err_ = propagate(err_, before, held_, cfg_.noise, dt);
  }

  FusionConfig cfg_;
  NavState state_;
  ErrorState err_;
  ImuSample held_;
};

}  // namespace vmr
