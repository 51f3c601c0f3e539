#pragma once

// SO(3)/SE(3) types and maps.
//
// Conventions used throughout the library:
//   * Twist ordering is (rho, phi): translation part first, rotation second.
//   * Perturbations are applied on the right: T <- T * exp_se3(delta).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "demslam/error.hpp"

namespace demslam {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Matrix4 = Eigen::Matrix4d;

/// Element of the Lie algebra se(3), ordered (rho, phi).
using Twist = Vector6;

/// Below this angle exp/log switch to Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;
/// log is only defined for rotation angles strictly below pi - kPiMargin.
inline constexpr double kPiMargin = 1e-6;

inline Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  // clang-format off
  s <<   0.0, -v.z(),  v.y(),
       v.z(),    0.0, -v.x(),
      -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// Unit quaternion rotation, renormalized after every composition.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  explicit Rotation(const Eigen::Quaterniond& q) : q_(q.normalized()) {}

  Rotation(double w, double x, double y, double z)
      : q_(Eigen::Quaterniond(w, x, y, z).normalized()) {}

  static Rotation identity() { return {}; }

  static Rotation from_matrix(const Matrix3& m) {
    return Rotation(Eigen::Quaterniond(m));
  }

  static Rotation about_axis(const Vector3& axis, double angle) {
    return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
  }

  [[nodiscard]] const Eigen::Quaterniond& quaternion() const { return q_; }
  [[nodiscard]] Matrix3 matrix() const { return q_.toRotationMatrix(); }
  [[nodiscard]] Rotation inverse() const { return Rotation(q_.conjugate()); }

  [[nodiscard]] Rotation operator*(const Rotation& other) const {
    return Rotation(q_ * other.q_);
  }
  [[nodiscard]] Vector3 operator*(const Vector3& v) const { return q_ * v; }

  /// Angle in [0, pi].
  [[nodiscard]] double angle() const {
    return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w()));
  }

 private:
  Eigen::Quaterniond q_;
};

/// Rigid transform x -> R x + t.
struct Pose {
  Rotation rotation;
  Vector3 translation = Vector3::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Vector3& t) : rotation(r), translation(t) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vector3& t) { return {Rotation(), t}; }
  static Pose from_translation(double x, double y, double z) {
    return from_translation(Vector3(x, y, z));
  }

  [[nodiscard]] Pose inverse() const {
    const Rotation r_inv = rotation.inverse();
    return {r_inv, -(r_inv * translation)};
  }

  [[nodiscard]] Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  [[nodiscard]] Vector3 operator*(const Vector3& p) const {
    return rotation * p + translation;
  }

  [[nodiscard]] Matrix4 matrix() const {
    Matrix4 m = Matrix4::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

// ---------------------------------------------------------------------------
// SO(3)
// ---------------------------------------------------------------------------

inline Rotation so3_exp(const Vector3& phi) {
  const double theta = phi.norm();
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    const Vector3 v = 0.5 * (1.0 - t2 / 24.0) * phi;
    return Rotation(1.0 - t2 / 8.0, v.x(), v.y(), v.z());
  }
  const double half = 0.5 * theta;
  const Vector3 v = (std::sin(half) / theta) * phi;
  return Rotation(std::cos(half), v.x(), v.y(), v.z());
}

inline Vector3 so3_log(const Rotation& r) {
  Eigen::Quaterniond q = r.quaternion();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double s = q.vec().norm();
  const double theta = 2.0 * std::atan2(s, q.w());
  if (theta >= std::numbers::pi - kPiMargin) {
    throw Error(ErrorCode::kAngleNearPi,
                "rotation angle " + std::to_string(theta) + " too close to pi");
  }
  if (theta < kSmallAngle) {
    const double w2 = q.w() * q.w();
    return (2.0 / q.w()) * (1.0 - s * s / (3.0 * w2)) * q.vec();
  }
  return (theta / s) * q.vec();
}

namespace detail {

// Coefficients of the SO(3) left Jacobian J = I + a*Phi + b*Phi^2:
//   a = (1 - cos t) / t^2, b = (t - sin t) / t^3.
struct JacobianCoeffs {
  double a;
  double b;
};

inline JacobianCoeffs so3_jacobian_coeffs(double theta, double small) {
  const double t2 = theta * theta;
  if (theta < small) {
    return {0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  const double sh = std::sin(0.5 * theta);
  return {2.0 * sh * sh / t2, (theta - std::sin(theta)) / (t2 * theta)};
}

// Coefficient of Phi^2 in the inverse left Jacobian:
//   1/t^2 - (1 + cos t) / (2 t sin t).
inline double so3_inverse_jacobian_coeff(double theta, double small) {
  const double t2 = theta * theta;
  if (theta < small) return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  return 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
}

// Jacobians are only ever compared against finite differences, so they use a
// wider series window where the closed forms lose digits to cancellation.
inline constexpr double kJacobianSeriesAngle = 5e-2;

}  // namespace detail

/// Left Jacobian of SO(3).
inline Matrix3 so3_left_jacobian(const Vector3& phi) {
  const auto [a, b] = detail::so3_jacobian_coeffs(phi.norm(), detail::kJacobianSeriesAngle);
  const Matrix3 p = skew(phi);
  return Matrix3::Identity() + a * p + b * p * p;
}

inline Matrix3 so3_left_jacobian_inverse(const Vector3& phi) {
  const double c = detail::so3_inverse_jacobian_coeff(phi.norm(), detail::kJacobianSeriesAngle);
  const Matrix3 p = skew(phi);
  return Matrix3::Identity() - 0.5 * p + c * p * p;
}

inline Matrix3 so3_right_jacobian_inverse(const Vector3& phi) {
  return so3_left_jacobian_inverse(-phi);
}

// ---------------------------------------------------------------------------
// SE(3)
// ---------------------------------------------------------------------------

inline Pose exp_se3(const Twist& xi) {
  const Vector3 rho = xi.head<3>();
  const Vector3 phi = xi.tail<3>();
  const auto [a, b] = detail::so3_jacobian_coeffs(phi.norm(), kSmallAngle);
  const Matrix3 p = skew(phi);
  const Matrix3 v = Matrix3::Identity() + a * p + b * p * p;
  return {so3_exp(phi), v * rho};
}

/// Throws AngleNearPi when the rotation angle is within kPiMargin of pi.
inline Twist log_se3(const Pose& pose) {
  const Vector3 phi = so3_log(pose.rotation);
  const double c = detail::so3_inverse_jacobian_coeff(phi.norm(), kSmallAngle);
  const Matrix3 p = skew(phi);
  const Matrix3 v_inv = Matrix3::Identity() - 0.5 * p + c * p * p;
  Twist xi;
  xi.head<3>() = v_inv * pose.translation;
  xi.tail<3>() = phi;
  return xi;
}

/// a^-1 * b.
inline Pose between(const Pose& a, const Pose& b) { return a.inverse() * b; }

/// Adjoint for (rho, phi) ordering: T * exp(x) = exp(Ad_T x) * T.
inline Matrix6 adjoint(const Pose& pose) {
  const Matrix3 r = pose.rotation.matrix();
  Matrix6 ad = Matrix6::Zero();
  ad.topLeftCorner<3, 3>() = r;
  ad.topRightCorner<3, 3>() = skew(pose.translation) * r;
  ad.bottomRightCorner<3, 3>() = r;
  return ad;
}

namespace detail {

// Off-diagonal block of the SE(3) left Jacobian.
inline Matrix3 se3_left_jacobian_q(const Vector3& rho, const Vector3& phi) {
  const double t = phi.norm();
  const double t2 = t * t;
  double c1;
  double c2;
  double c3;
  if (t < kJacobianSeriesAngle) {
    const double t4 = t2 * t2;
    const double t6 = t4 * t2;
    c1 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0 - t6 / 3628800.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0 - t6 / 9979200.0;
  } else {
    const double s = std::sin(t);
    const double c = std::cos(t);
    c1 = (t - s) / (t2 * t);
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
    c3 = (2.0 * t - 3.0 * s + t * c) / (2.0 * t2 * t2 * t);
  }
  const Matrix3 p = skew(phi);
  const Matrix3 r = skew(rho);
  const Matrix3 pr = p * r;
  const Matrix3 rp = r * p;
  const Matrix3 prp = pr * p;
  const Matrix3 pp = p * p;
  return 0.5 * r + c1 * (pr + rp + prp) + c2 * (pp * r + rp * p - 3.0 * prp) +
         c3 * (prp * p + pp * r * p);
}

}  // namespace detail

/// Inverse of the SE(3) right Jacobian: Log(exp(xi) * exp(d)) ~ xi + Jr^-1(xi) d.
inline Matrix6 se3_right_jacobian_inverse(const Twist& xi) {
  const Vector3 rho = -xi.head<3>();
  const Vector3 phi = -xi.tail<3>();
  const Matrix3 j_inv = so3_left_jacobian_inverse(phi);
  const Matrix3 q = detail::se3_left_jacobian_q(rho, phi);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j_inv;
  out.topRightCorner<3, 3>() = -j_inv * q * j_inv;
  out.bottomRightCorner<3, 3>() = j_inv;
  return out;
}

/// Minimal (yaw-free) rotation taking the world z-axis onto the unit vector n.
/// The rotation axis is z x n, so it always lies in the x-y plane.
inline Rotation rot_from_normal(const Vector3& n) {
  if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6) {
    throw Error(ErrorCode::kInvalidArgument, "normal must be a unit vector");
  }
  if (n.z() <= -1.0 + 1e-9) {
    throw Error(ErrorCode::kAntipodalNormal, "normal points along -z");
  }
  // Half-way quaternion [1 + z.n, z x n].
  return Rotation(1.0 + n.z(), -n.y(), n.x(), 0.0);
}

}  // namespace demslam
