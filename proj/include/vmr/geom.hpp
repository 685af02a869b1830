#pragma once

// Rotation, quaternion and rigid-transform algebra.
//
// Conventions used throughout the library:
//   * quaternions are Hamilton, scalar-first, and rotate body vectors into
//     the navigation frame;
//   * Euler angles are intrinsic Z-Y-X: R = Rz(yaw) * Ry(pitch) * Rx(roll);
//   * the body frame is x forward, y left, z up; the navigation frame is ENU.

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "vmr/errors.hpp"

namespace vmr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Quaternion = Eigen::Quaterniond;

constexpr double kPi = std::numbers::pi;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kRadToDeg = 180.0 / kPi;

/// Pitch magnitude at which Z-Y-X decomposition is refused.
constexpr double kGimbalMargin = 1e-3;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

/// Exponential map of a rotation vector.
inline Mat3 exp_so3(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) return Mat3::Identity() + skew(rotvec);
  return Eigen::AngleAxisd(angle, rotvec / angle).toRotationMatrix();
}

/// Logarithm map; returns the rotation vector with angle in [0, pi].
inline Vec3 log_so3(const Mat3& rotation) {
  Quaternion q(rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double n = v.norm();
  if (n < 1e-12) return 2.0 * v / q.w();
  return (2.0 * std::atan2(n, q.w()) / n) * v;
}

/// Unit quaternion for the rotation accumulated by a constant rate over dt.
/// Exact exponential map, so the result is unit-norm by construction.
inline Quaternion quat_increment(const Vec3& omega, double dt) {
  const Vec3 rotvec = omega * dt;
  const double angle = rotvec.norm();
  const double half = 0.5 * angle;
  // sin(half)/angle, with its series near zero
  const double k = angle < 1e-8 ? 0.5 - angle * angle / 48.0 : std::sin(half) / angle;
  return Quaternion(std::cos(half), k * rotvec.x(), k * rotvec.y(), k * rotvec.z());
}

/// Small-rotation quaternion from a rotation vector (same map as quat_increment).
inline Quaternion quat_from_rotvec(const Vec3& rotvec) { return quat_increment(rotvec, 1.0); }

struct EulerZYX {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

/// Rz(yaw) * Ry(pitch) * Rx(roll), written out so zero angles give exact zeros.
inline Mat3 to_rotation(const EulerZYX& e) {
  const double cy = std::cos(e.yaw), sy = std::sin(e.yaw);
  const double cp = std::cos(e.pitch), sp = std::sin(e.pitch);
  const double cr = std::cos(e.roll), sr = std::sin(e.roll);
  Mat3 r;
  r << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp, cp * sr, cp * cr;
  return r;
}

/// Throws GimbalLock when |pitch| >= pi/2 - 1e-3.
inline EulerZYX from_rotation(const Mat3& r) {
  EulerZYX e;
  e.pitch = std::atan2(-r(2, 0), std::hypot(r(0, 0), r(1, 0)));
  if (std::abs(e.pitch) >= kPi / 2.0 - kGimbalMargin) {
    throw GimbalLock("pitch " + std::to_string(e.pitch) + " rad is too close to +-pi/2");
  }
  e.yaw = std::atan2(r(1, 0), r(0, 0));
  e.roll = std::atan2(r(2, 1), r(2, 2));
  return e;
}

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

/// Rigid transform x -> rotation * x + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}
  Pose(const Quaternion& q, const Vec3& t) : rotation(q.normalized().toRotationMatrix()), translation(t) {}

  static Pose identity() { return {}; }

  /// Builds a pose from a 4x4 homogeneous matrix (bottom row ignored).
  static Pose from_matrix(const Mat4& m) { return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()}; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Quaternion quaternion() const { return Quaternion(rotation).normalized(); }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  /// Composition: (a * b)(x) = a(b(x)).
  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

struct Decomposition {
  EulerZYX euler;
  Vec3 translation = Vec3::Zero();
};

inline Decomposition decompose(const Pose& pose) { return {from_rotation(pose.rotation), pose.translation}; }

inline Pose recompose(const EulerZYX& euler, const Vec3& translation) {
  return {to_rotation(euler), translation};
}

/// Which degrees of freedom a partial correction keeps.
enum class DofGroup {
  /// z, pitch, roll (ground registration)
  Vertical,
  /// x, y, yaw (planar registration)
  Horizontal,
};

/// Rebuilds a pose from the selected degrees of freedom of a decomposition;
/// the other three are zeroed.
inline Pose compose_partial(const Decomposition& d, DofGroup group) {
  EulerZYX e;
  Vec3 t = Vec3::Zero();
  if (group == DofGroup::Vertical) {
    e.pitch = d.euler.pitch;
    e.roll = d.euler.roll;
    t.z() = d.translation.z();
  } else {
    e.yaw = d.euler.yaw;
    t.x() = d.translation.x();
    t.y() = d.translation.y();
  }
  return recompose(e, t);
}

/// Rotation angle between two rotations, radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return log_so3(a.transpose() * b).norm();
}

}  // namespace vmr
