#pragma once

// Residuals and Jacobians for the five constraint kinds of the pose graph.
//
// All Jacobians are taken with respect to a right perturbation of each
// involved pose, T <- T * exp_se3(delta), delta ordered (rho, phi).

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "demslam/dem.hpp"
#include "demslam/error.hpp"
#include "demslam/geometry.hpp"

namespace demslam {

enum class FactorKind { kPrior, kOdometry, kLoopClosure, kDemHeight, kDemNormal };

inline constexpr std::array<FactorKind, 5> kAllFactorKinds = {
    FactorKind::kPrior, FactorKind::kOdometry, FactorKind::kLoopClosure, FactorKind::kDemHeight,
    FactorKind::kDemNormal};

inline std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::kPrior: return "prior";
    case FactorKind::kOdometry: return "odometry";
    case FactorKind::kLoopClosure: return "loop_closure";
    case FactorKind::kDemHeight: return "dem_height";
    case FactorKind::kDemNormal: return "dem_normal";
  }
  return "unknown";
}

inline FactorKind factor_kind_from_string(std::string_view s) {
  for (const FactorKind k : kAllFactorKinds) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::kParseError, "unknown factor kind '" + std::string(s) + "'");
}

inline int residual_dimension(FactorKind kind) {
  switch (kind) {
    case FactorKind::kDemHeight: return 1;
    case FactorKind::kDemNormal: return 3;
    default: return 6;
  }
}

/// Diagonal Gaussian noise: one standard deviation per residual component.
class NoiseModel {
 public:
  NoiseModel() = default;

  explicit NoiseModel(Eigen::VectorXd sigmas) : sigmas_(std::move(sigmas)) {
    for (Eigen::Index i = 0; i < sigmas_.size(); ++i) {
      if (!(sigmas_[i] > 0.0) || !std::isfinite(sigmas_[i])) {
        throw Error(ErrorCode::kInvalidArgument, "noise sigmas must be positive and finite");
      }
    }
  }

  static NoiseModel isotropic(int dim, double sigma) {
    return NoiseModel(Eigen::VectorXd::Constant(dim, sigma));
  }

  /// Six-dimensional pose noise, translation sigma then rotation sigma.
  static NoiseModel pose(double sigma_translation, double sigma_rotation) {
    Eigen::VectorXd s(6);
    s << Eigen::Vector3d::Constant(sigma_translation), Eigen::Vector3d::Constant(sigma_rotation);
    return NoiseModel(std::move(s));
  }

  [[nodiscard]] const Eigen::VectorXd& sigmas() const { return sigmas_; }
  [[nodiscard]] int dimension() const { return static_cast<int>(sigmas_.size()); }

  [[nodiscard]] Eigen::VectorXd whiten(const Eigen::VectorXd& r) const {
    return r.cwiseQuotient(sigmas_);
  }

 private:
  Eigen::VectorXd sigmas_;
};

/// Height factor noise from the DEM's vertical accuracy.
inline NoiseModel height_noise(double sigma_z) { return NoiseModel::isotropic(1, sigma_z); }

/// Normal factor noise. The third residual component (rotation about the
/// surface normal) is unconstrained by the DEM and gets a very weak sigma.
inline NoiseModel normal_noise(double sigma_tilt_rad, double sigma_yaw_rad = 1e3) {
  return NoiseModel(Eigen::Vector3d(sigma_tilt_rad, sigma_tilt_rad, sigma_yaw_rad));
}

inline constexpr double kDefaultSigmaZ = 0.5;
inline constexpr double kDefaultSigmaNormalDeg = 2.0;
inline constexpr double kDefaultSigmaNormalYaw = 1e3;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

// ---------------------------------------------------------------------------
// Residual functions
// ---------------------------------------------------------------------------

/// Log(measured^-1 * Ti^-1 * Tj).
inline Vector6 odometry_residual(const Pose& ti, const Pose& tj, const Pose& measured) {
  return log_se3(measured.inverse() * between(ti, tj));
}

/// Log(measured^-1 * T).
inline Vector6 prior_residual(const Pose& t, const Pose& measured) {
  return log_se3(measured.inverse() * t);
}

/// z - h(x, y).
inline double height_residual(const Pose& t, const DemGrid& dem) {
  return t.translation.z() - dem.height_at(t.translation.x(), t.translation.y());
}

/// Log(R(n_dem)^-1 * R(n_body)), where n_body is the body z-axis.
inline Vector3 normal_residual(const Pose& t, const DemGrid& dem) {
  const Vector3 n_dem = dem.normal_at(t.translation.x(), t.translation.y());
  const Vector3 n_body = t.rotation.matrix().col(2);
  return so3_log(rot_from_normal(n_dem).inverse() * rot_from_normal(n_body));
}

// ---------------------------------------------------------------------------
// Factor
// ---------------------------------------------------------------------------

class Factor {
 public:
  static Factor prior(int node, const Pose& measured, NoiseModel noise) {
    return {FactorKind::kPrior, {node, -1}, measured, std::move(noise), nullptr};
  }
  static Factor odometry(int i, int j, const Pose& measured, NoiseModel noise) {
    return {FactorKind::kOdometry, {i, j}, measured, std::move(noise), nullptr};
  }
  static Factor loop_closure(int i, int j, const Pose& measured, NoiseModel noise) {
    return {FactorKind::kLoopClosure, {i, j}, measured, std::move(noise), nullptr};
  }
  static Factor dem_height(int node, std::shared_ptr<const DemGrid> dem, double sigma_z) {
    return {FactorKind::kDemHeight, {node, -1}, Pose(), height_noise(sigma_z), std::move(dem)};
  }
  static Factor dem_normal(int node, std::shared_ptr<const DemGrid> dem, NoiseModel noise) {
    return {FactorKind::kDemNormal, {node, -1}, Pose(), std::move(noise), std::move(dem)};
  }

  [[nodiscard]] FactorKind kind() const { return kind_; }
  [[nodiscard]] int arity() const { return nodes_[1] < 0 ? 1 : 2; }
  [[nodiscard]] int node(int k) const { return nodes_[static_cast<std::size_t>(k)]; }
  [[nodiscard]] const Pose& measurement() const { return measurement_; }
  [[nodiscard]] const NoiseModel& noise() const { return noise_; }
  [[nodiscard]] const std::shared_ptr<const DemGrid>& dem() const { return dem_; }
  [[nodiscard]] int dimension() const { return residual_dimension(kind_); }

 private:
  Factor(FactorKind kind, std::array<int, 2> nodes, const Pose& measurement, NoiseModel noise,
         std::shared_ptr<const DemGrid> dem)
      : kind_(kind),
        nodes_(nodes),
        measurement_(measurement),
        noise_(std::move(noise)),
        dem_(std::move(dem)) {
    if (noise_.dimension() != residual_dimension(kind_)) {
      throw Error(ErrorCode::kDimensionMismatch,
                  std::string(to_string(kind_)) + " factor needs " +
                      std::to_string(residual_dimension(kind_)) + " sigmas, got " +
                      std::to_string(noise_.dimension()));
    }
    if ((kind_ == FactorKind::kDemHeight || kind_ == FactorKind::kDemNormal) && !dem_) {
      throw Error(ErrorCode::kInvalidArgument, "DEM factor without a DEM");
    }
    if (nodes_[0] < 0 || (arity() == 2 && nodes_[1] < 0)) {
      throw Error(ErrorCode::kInvalidIndex, "negative node index");
    }
    if (arity() == 2 && nodes_[0] == nodes_[1]) {
      throw Error(ErrorCode::kInvalidIndex, "binary factor connects a node to itself");
    }
  }

  FactorKind kind_;
  std::array<int, 2> nodes_;
  Pose measurement_;
  NoiseModel noise_;
  std::shared_ptr<const DemGrid> dem_;
};

/// Unwhitened residual of a factor at the given node estimates.
inline Eigen::VectorXd evaluate(const Factor& f, std::span<const Pose> poses) {
  const Pose& ti = poses[static_cast<std::size_t>(f.node(0))];
  switch (f.kind()) {
    case FactorKind::kPrior:
      return prior_residual(ti, f.measurement());
    case FactorKind::kOdometry:
    case FactorKind::kLoopClosure:
      return odometry_residual(ti, poses[static_cast<std::size_t>(f.node(1))], f.measurement());
    case FactorKind::kDemHeight:
      return Eigen::VectorXd::Constant(1, height_residual(ti, *f.dem()));
    case FactorKind::kDemNormal:
      return normal_residual(ti, *f.dem());
  }
  return {};
}

/// Whitened squared norm r^T Sigma^-1 r.
inline double weighted_cost(const Factor& f, std::span<const Pose> poses) {
  return f.noise().whiten(evaluate(f, poses)).squaredNorm();
}

struct Linearization {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;  // dimension x (6 * arity)
};

inline constexpr double kDemJacobianStep = 1e-6;

namespace detail {

template <typename ResidualFn>
Eigen::MatrixXd central_difference(const Pose& pose, int dim, ResidualFn&& fn) {
  Eigen::MatrixXd jac(dim, 6);
  for (int k = 0; k < 6; ++k) {
    Twist d = Twist::Zero();
    d[k] = kDemJacobianStep;
    const Eigen::VectorXd plus = fn(pose * exp_se3(d));
    const Eigen::VectorXd minus = fn(pose * exp_se3(-d));
    jac.col(k) = (plus - minus) / (2.0 * kDemJacobianStep);
  }
  return jac;
}

}  // namespace detail

/// Residual and Jacobian. Pose-pose factors are analytic; DEM factors use
/// central differences because the bilinear surface has kinks at cell edges.
inline Linearization linearize(const Factor& f, std::span<const Pose> poses) {
  const Pose& ti = poses[static_cast<std::size_t>(f.node(0))];
  Linearization out;
  switch (f.kind()) {
    case FactorKind::kPrior: {
      const Vector6 r = prior_residual(ti, f.measurement());
      out.residual = r;
      out.jacobian = se3_right_jacobian_inverse(r);
      break;
    }
    case FactorKind::kOdometry:
    case FactorKind::kLoopClosure: {
      const Pose& tj = poses[static_cast<std::size_t>(f.node(1))];
      const Vector6 r = odometry_residual(ti, tj, f.measurement());
      const Matrix6 jr_inv = se3_right_jacobian_inverse(r);
      out.residual = r;
      out.jacobian.resize(6, 12);
      out.jacobian.leftCols<6>() = -jr_inv * adjoint(between(tj, ti));
      out.jacobian.rightCols<6>() = jr_inv;
      break;
    }
    case FactorKind::kDemHeight: {
      const DemGrid& dem = *f.dem();
      out.residual = Eigen::VectorXd::Constant(1, height_residual(ti, dem));
      out.jacobian = detail::central_difference(ti, 1, [&](const Pose& p) {
        return Eigen::VectorXd::Constant(1, height_residual(p, dem));
      });
      break;
    }
    case FactorKind::kDemNormal: {
      const DemGrid& dem = *f.dem();
      out.residual = normal_residual(ti, dem);
      out.jacobian = detail::central_difference(
          ti, 3, [&](const Pose& p) -> Eigen::VectorXd { return normal_residual(p, dem); });
      break;
    }
  }
  return out;
}

inline Eigen::MatrixXd factor_jacobian(const Factor& f, std::span<const Pose> poses) {
  return linearize(f, poses).jacobian;
}

}  // namespace demslam
