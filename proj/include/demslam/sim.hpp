#pragma once

// Synthetic terrain, DEM-draped ground-truth traverses and noisy odometry.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "demslam/dem.hpp"
#include "demslam/error.hpp"
#include "demslam/geometry.hpp"
#include "demslam/perturb.hpp"
#include "demslam/rng.hpp"
#include "demslam/trajectory.hpp"

namespace demslam {

struct TerrainSpec {
  int n_rows = 256;
  int n_cols = 256;
  double cell_size = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double amplitude = 0.0;            // RMS of the random component, meters
  double correlation_length = 10.0;  // meters
  double ramp_x = 0.0;               // dh/dx of the large-scale trend
  double ramp_y = 0.0;
  double bowl_depth = 0.0;   // paraboloid rise at bowl_radius from the grid center
  double bowl_radius = 1.0;
  std::uint64_t seed = 0;
};

/// heights = ramp_x * x + ramp_y * y + bowl_depth * (d / bowl_radius)^2
///           + correlated field of RMS `amplitude`, d = distance to grid center.
inline DemGrid synthesize_terrain(const TerrainSpec& spec) {
  if (!(spec.amplitude >= 0.0) || !(spec.correlation_length > 0.0) || !(spec.bowl_radius > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "need amplitude >= 0, correlation_length > 0 and bowl_radius > 0");
  }
  const double cx = spec.origin_x + 0.5 * (spec.n_cols - 1) * spec.cell_size;
  const double cy = spec.origin_y + 0.5 * (spec.n_rows - 1) * spec.cell_size;
  const double k = spec.bowl_depth / (spec.bowl_radius * spec.bowl_radius);
  const auto field = correlated_field(spec.n_rows, spec.n_cols, spec.cell_size, spec.amplitude,
                                      spec.correlation_length, spec.seed);
  std::vector<double> h(field.size());
  for (int r = 0; r < spec.n_rows; ++r) {
    const double y = spec.origin_y + r * spec.cell_size;
    for (int c = 0; c < spec.n_cols; ++c) {
      const double x = spec.origin_x + c * spec.cell_size;
      const std::size_t idx = static_cast<std::size_t>(r) * spec.n_cols + c;
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      h[idx] = spec.ramp_x * x + spec.ramp_y * y + k * d2 + field[idx];
    }
  }
  return {spec.origin_x, spec.origin_y, spec.cell_size, spec.n_rows, spec.n_cols, std::move(h)};
}

/// Ground pose at (x, y) heading along `direction`: pitch/roll follow the DEM
/// normal exactly and the body x-axis lies in the vertical plane of the heading.
inline Pose terrain_pose(const DemGrid& dem, const Vector2& xy, const Vector2& direction,
                         double clearance) {
  const double z = dem.height_at(xy.x(), xy.y()) + clearance;
  const Vector3 n = dem.normal_at(xy.x(), xy.y());
  const Vector3 d(direction.x(), direction.y(), 0.0);
  const Vector3 x_body = (d - d.dot(n) * n).normalized();
  const Rotation tilt = rot_from_normal(n);
  const Vector3 local = tilt.inverse() * x_body;
  const double yaw = std::atan2(local.y(), local.x());
  return {tilt * Rotation::about_axis(Vector3::UnitZ(), yaw), Vector3(xy.x(), xy.y(), z)};
}

/// Samples the waypoint polyline every `spacing` meters of arc length,
/// draped on the DEM. Timestamps equal arc length (1 m/s).
inline Trajectory generate_traverse(const DemGrid& dem, const std::vector<Vector2>& waypoints,
                                    double spacing, double clearance) {
  if (waypoints.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need >= 2 waypoints");
  if (!(spacing > 0.0)) throw Error(ErrorCode::kInvalidArgument, "spacing must be positive");
  std::vector<double> cumulative{0.0};
  for (std::size_t k = 1; k < waypoints.size(); ++k) {
    cumulative.push_back(cumulative.back() + (waypoints[k] - waypoints[k - 1]).norm());
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) throw Error(ErrorCode::kInvalidArgument, "waypoints have zero length");
  const auto n_samples = static_cast<std::size_t>(std::floor(total / spacing + 1e-9)) + 1;

  Trajectory traj;
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    const double s = std::min(static_cast<double>(k) * spacing, total);
    while (seg + 2 < waypoints.size() &&
           (s >= cumulative[seg + 1] || cumulative[seg + 1] == cumulative[seg])) {
      ++seg;
    }
    const Vector2 a = waypoints[seg];
    const Vector2 b = waypoints[seg + 1];
    const double len = cumulative[seg + 1] - cumulative[seg];
    const Vector2 dir = (b - a) / len;
    const Vector2 xy = a + (s - cumulative[seg]) * dir;
    traj.push_back(s, terrain_pose(dem, xy, dir, clearance));
  }
  return traj;
}

/// Closed circle of `n_segments` chords, starting and ending at angle 0.
inline std::vector<Vector2> circle_waypoints(const Vector2& center, double radius, int n_segments) {
  std::vector<Vector2> out;
  for (int k = 0; k <= n_segments; ++k) {
    const double a = 2.0 * std::numbers::pi * (k % n_segments) / n_segments;
    out.emplace_back(center.x() + radius * std::cos(a), center.y() + radius * std::sin(a));
  }
  return out;
}

struct OdometryNoiseSpec {
  Vector6 sigma = Vector6::Zero();  // per step, (translation m, rotation rad)
  Vector6 bias = Vector6::Zero();   // deterministic per-step drift
  std::uint64_t seed = 0;
};

/// measured_k = between(T_k, T_k+1) * exp_se3(bias + sigma .* eps), eps ~ N(0, I).
inline std::vector<Pose> corrupt_odometry(const Trajectory& gt, const OdometryNoiseSpec& noise) {
  if (gt.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need >= 2 poses");
  if ((noise.sigma.array() < 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "odometry sigma must be >= 0");
  }
  Rng rng(noise.seed);
  std::vector<Pose> out;
  out.reserve(gt.size() - 1);
  for (std::size_t k = 0; k + 1 < gt.size(); ++k) {
    Twist eps;
    for (int c = 0; c < 6; ++c) eps[c] = standard_normal(rng);
    const Twist xi = noise.bias + noise.sigma.cwiseProduct(eps);
    out.push_back(between(gt.pose(k), gt.pose(k + 1)) * exp_se3(xi));
  }
  return out;
}

/// Chains relative measurements onto `origin`.
inline std::vector<Pose> dead_reckon(const Pose& origin, const std::vector<Pose>& steps) {
  std::vector<Pose> out{origin};
  out.reserve(steps.size() + 1);
  for (const Pose& s : steps) out.push_back(out.back() * s);
  return out;
}

}  // namespace demslam
