#pragma once

// Trajectory error metrics: translational RPE and ATE with their RMSE,
// length-normalized ATE and drift percent. Trajectories are associated by
// index, not by timestamp.

#include <Eigen/SVD>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "demslam/error.hpp"
#include "demslam/geometry.hpp"
#include "demslam/trajectory.hpp"

namespace demslam {

enum class Alignment { kNone, kSe3 };

inline std::string_view to_string(Alignment a) { return a == Alignment::kNone ? "none" : "se3"; }

inline Alignment alignment_from_string(std::string_view s) {
  if (s == "none") return Alignment::kNone;
  if (s == "se3") return Alignment::kSe3;
  throw Error(ErrorCode::kInvalidArgument, "alignment must be 'none' or 'se3', got '" +
                                               std::string(s) + "'");
}

struct ErrorSeries {
  std::vector<double> errors;
  double rmse = 0.0;
};

namespace detail {

inline double rms(const std::vector<double>& e) {
  if (e.empty()) return 0.0;
  double ss = 0.0;
  for (double v : e) ss += v * v;
  return std::sqrt(ss / static_cast<double>(e.size()));
}

inline void check_lengths(const Trajectory& gt, const Trajectory& est) {
  if (gt.size() != est.size()) {
    throw Error(ErrorCode::kLengthMismatch, "ground truth has " + std::to_string(gt.size()) +
                                                " poses, estimate has " +
                                                std::to_string(est.size()));
  }
}

}  // namespace detail

/// e_i = || trans( (T_i^-1 T_i+d)^-1 (E_i^-1 E_i+d) ) ||, i = 0 .. N-d-1.
inline ErrorSeries rpe(const Trajectory& gt, const Trajectory& est, int delta = 1) {
  detail::check_lengths(gt, est);
  if (delta < 1 || static_cast<std::size_t>(delta) >= gt.size()) {
    throw Error(ErrorCode::kInvalidArgument, "delta " + std::to_string(delta) +
                                                 " needs 1 <= delta < N = " +
                                                 std::to_string(gt.size()));
  }
  ErrorSeries out;
  const std::size_t d = static_cast<std::size_t>(delta);
  for (std::size_t i = 0; i + d < gt.size(); ++i) {
    const Pose rel_gt = between(gt.pose(i), gt.pose(i + d));
    const Pose rel_est = between(est.pose(i), est.pose(i + d));
    out.errors.push_back((rel_gt.inverse() * rel_est).translation.norm());
  }
  out.rmse = detail::rms(out.errors);
  return out;
}

struct AteResult {
  std::vector<double> errors;
  double rmse = 0.0;
  Pose alignment;                           // S in e_i = trans(T_i^-1 S E_i)
  Alignment mode = Alignment::kNone;        // alignment actually applied
  bool degenerate_alignment = false;        // requested se3 fell back to none
};

/// Rigid (no scale) least-squares alignment S minimizing
/// sum_i || t_gt_i - S * t_est_i ||^2. Returns false for rank-deficient
/// (collinear or coincident) point sets.
inline bool align_se3(const std::vector<Vector3>& gt, const std::vector<Vector3>& est, Pose& out) {
  const std::size_t n = gt.size();
  if (n < 3) return false;
  Vector3 mu_gt = Vector3::Zero();
  Vector3 mu_est = Vector3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_gt += gt[i];
    mu_est += est[i];
  }
  mu_gt /= static_cast<double>(n);
  mu_est /= static_cast<double>(n);
  Matrix3 cov = Matrix3::Zero();
  for (std::size_t i = 0; i < n; ++i) cov += (est[i] - mu_est) * (gt[i] - mu_gt).transpose();
  Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector3 sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) return false;
  const Matrix3 u = svd.matrixU();
  const Matrix3 v = svd.matrixV();
  Matrix3 d = Matrix3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Matrix3 r = v * d * u.transpose();
  out = Pose(Rotation::from_matrix(r), mu_gt - r * mu_est);
  return true;
}

/// e_i = || trans(T_i^-1 S E_i) ||, S = identity or the rigid alignment.
inline AteResult ate(const Trajectory& gt, const Trajectory& est,
                     Alignment align = Alignment::kNone) {
  detail::check_lengths(gt, est);
  AteResult out;
  if (align == Alignment::kSe3) {
    Pose s;
    if (align_se3(gt.positions(), est.positions(), s)) {
      out.alignment = s;
      out.mode = Alignment::kSe3;
    } else {
      out.degenerate_alignment = true;
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    out.errors.push_back((gt.pose(i).inverse() * out.alignment * est.pose(i)).translation.norm());
  }
  out.rmse = detail::rms(out.errors);
  return out;
}

inline double path_length(const Trajectory& traj) {
  if (traj.size() < 2) throw Error(ErrorCode::kInvalidArgument, "path needs >= 2 poses");
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    len += (traj.pose(i + 1).translation - traj.pose(i).translation).norm();
  }
  return len;
}

struct MetricReport {
  double rpe_rmse = 0.0;
  double ate_rmse = 0.0;
  double ate_normalized = 0.0;  // ate_rmse / ground-truth path length
  double drift_percent = 0.0;   // 100 * ate_normalized
  std::vector<double> rpe_errors;
  std::vector<double> ate_errors;
  int delta = 1;
  Alignment alignment = Alignment::kNone;  // as applied
  bool degenerate_alignment = false;
};

inline MetricReport evaluate_metrics(const Trajectory& gt, const Trajectory& est, int delta = 1,
                                     Alignment align = Alignment::kNone) {
  MetricReport m;
  const ErrorSeries r = rpe(gt, est, delta);
  const AteResult a = ate(gt, est, align);
  const double length = path_length(gt);
  m.rpe_rmse = r.rmse;
  m.ate_rmse = a.rmse;
  m.ate_normalized = length > 0.0 ? a.rmse / length : 0.0;
  m.drift_percent = 100.0 * m.ate_normalized;
  m.rpe_errors = r.errors;
  m.ate_errors = a.errors;
  m.delta = delta;
  m.alignment = a.mode;
  m.degenerate_alignment = a.degenerate_alignment;
  return m;
}

inline nlohmann::ordered_json to_json(const MetricReport& m, bool with_series = true) {
  nlohmann::ordered_json j;
  j["rpe_rmse"] = m.rpe_rmse;
  j["ate_rmse"] = m.ate_rmse;
  j["ate_normalized"] = m.ate_normalized;
  j["drift_percent"] = m.drift_percent;
  j["delta"] = m.delta;
  j["alignment"] = std::string(to_string(m.alignment));
  j["degenerate_alignment"] = m.degenerate_alignment;
  if (with_series) {
    j["rpe_errors"] = m.rpe_errors;
    j["ate_errors"] = m.ate_errors;
  }
  return j;
}

}  // namespace demslam
