#pragma once

// Pose graph container and Levenberg-Marquardt optimizer.
//
// The damped normal equations (J^T W J + lambda * diag(J^T W J)) dx = -J^T W r
// are solved by Cholesky. Small systems use a dense factorization; larger ones
// a sparse (simplicial, AMD-ordered) factorization of the same matrix, since
// the dense solve is O(n^3) in memory-bound 6n x 6n storage.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "demslam/dem.hpp"
#include "demslam/error.hpp"
#include "demslam/factors.hpp"
#include "demslam/geometry.hpp"

namespace demslam {

struct DemFactorStats {
  int added = 0;         // number of factors (height + normal)
  int skipped_poses = 0; // scheduled poses whose DEM query failed
};

class PoseGraph {
 public:
  PoseGraph() = default;

  /// Graph with node 0 at `origin`, held by a prior factor.
  PoseGraph(const Pose& origin, const NoiseModel& prior_noise) {
    add_node(origin);
    add_factor(Factor::prior(0, origin, prior_noise));
  }

  int add_node(const Pose& initial) {
    poses_.push_back(initial);
    return static_cast<int>(poses_.size()) - 1;
  }

  void add_factor(Factor factor) {
    for (int k = 0; k < factor.arity(); ++k) check_index(factor.node(k));
    factors_.push_back(std::move(factor));
  }

  /// Appends a node initialized at previous * measured and the odometry edge
  /// connecting them.
  int add_odometry_node(const Pose& measured, const NoiseModel& noise) {
    if (poses_.empty()) throw Error(ErrorCode::kInvalidIndex, "odometry on an empty graph");
    const int prev = static_cast<int>(poses_.size()) - 1;
    const int next = add_node(poses_.back() * measured);
    factors_.push_back(Factor::odometry(prev, next, measured, noise));
    return next;
  }

  void add_loop_closure(int i, int j, const Pose& measured, const NoiseModel& noise) {
    check_index(i);
    check_index(j);
    if (i == j) throw Error(ErrorCode::kInvalidIndex, "loop closure from a node to itself");
    factors_.push_back(Factor::loop_closure(i, j, measured, noise));
  }

  /// Height and normal factors on node `i` if its current estimate can be
  /// queried; returns false (nothing added) otherwise.
  bool add_dem_factors_at(int i, const std::shared_ptr<const DemGrid>& dem, double sigma_z,
                          const NoiseModel& normal_noise) {
    check_index(i);
    const Pose& p = poses_[static_cast<std::size_t>(i)];
    if (!dem->queryable(p.translation.x(), p.translation.y())) return false;
    try {
      (void)normal_residual(p, *dem);
    } catch (const Error&) {
      return false;
    }
    factors_.push_back(Factor::dem_height(i, dem, sigma_z));
    factors_.push_back(Factor::dem_normal(i, dem, normal_noise));
    return true;
  }

  /// Height and normal factors on every node whose index is a multiple of
  /// `stride`. Nodes whose current estimate cannot be queried are skipped.
  DemFactorStats add_dem_factors(const std::shared_ptr<const DemGrid>& dem, int stride,
                                 double sigma_z, const NoiseModel& normal_noise) {
    if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "stride must be >= 1");
    DemFactorStats stats;
    for (int i = 0; i < num_nodes(); i += stride) {
      if (add_dem_factors_at(i, dem, sigma_z, normal_noise)) {
        stats.added += 2;
      } else {
        ++stats.skipped_poses;
      }
    }
    return stats;
  }

  [[nodiscard]] int num_nodes() const { return static_cast<int>(poses_.size()); }
  [[nodiscard]] const std::vector<Pose>& poses() const { return poses_; }
  [[nodiscard]] const std::vector<Factor>& factors() const { return factors_; }
  [[nodiscard]] std::vector<Factor>& mutable_factors() { return factors_; }

  void set_poses(std::vector<Pose> poses) {
    if (poses.size() != poses_.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "pose count mismatch");
    }
    poses_ = std::move(poses);
  }

  [[nodiscard]] bool has_prior() const {
    return std::any_of(factors_.begin(), factors_.end(),
                       [](const Factor& f) { return f.kind() == FactorKind::kPrior; });
  }

  /// Every node reachable from a prior-held node through prior, odometry and
  /// loop-closure factors. DEM factors do not count: they leave x, y and yaw
  /// unobservable.
  [[nodiscard]] bool is_connected() const {
    if (poses_.empty()) return false;
    std::vector<int> parent(poses_.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
      while (parent[static_cast<std::size_t>(a)] != a) {
        parent[static_cast<std::size_t>(a)] =
            parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
        a = parent[static_cast<std::size_t>(a)];
      }
      return a;
    };
    std::vector<int> anchored;
    for (const Factor& f : factors_) {
      if (f.kind() == FactorKind::kPrior) anchored.push_back(f.node(0));
      if (f.kind() == FactorKind::kOdometry || f.kind() == FactorKind::kLoopClosure) {
        parent[static_cast<std::size_t>(find(f.node(0)))] = find(f.node(1));
      }
    }
    if (anchored.empty()) return false;
    std::vector<bool> root_anchored(poses_.size(), false);
    for (int a : anchored) root_anchored[static_cast<std::size_t>(find(a))] = true;
    for (int i = 0; i < num_nodes(); ++i) {
      if (!root_anchored[static_cast<std::size_t>(find(i))]) return false;
    }
    return true;
  }

 private:
  void check_index(int i) const {
    if (i < 0 || i >= num_nodes()) {
      throw Error(ErrorCode::kInvalidIndex, "node " + std::to_string(i) + " does not exist");
    }
  }

  std::vector<Pose> poses_;
  std::vector<Factor> factors_;
};

// ---------------------------------------------------------------------------
// Proximity loop-closure detection
// ---------------------------------------------------------------------------

/// Pairs (i, j), i < j, closer than `radius` with j - i >= min_index_gap.
/// Greedy thinning keeps the closest pairs so each node appears at most once.
inline std::vector<std::pair<int, int>> detect_proximity_loop_closures(
    std::span<const Vector3> positions, double radius, int min_index_gap) {
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "radius must be positive");
  if (min_index_gap < 1) throw Error(ErrorCode::kInvalidArgument, "min_index_gap must be >= 1");
  const int n = static_cast<int>(positions.size());
  std::vector<std::tuple<double, int, int>> candidates;
  for (int i = 0; i < n; ++i) {
    for (int j = i + min_index_gap; j < n; ++j) {
      const double d = (positions[static_cast<std::size_t>(i)] -
                        positions[static_cast<std::size_t>(j)]).norm();
      if (d < radius) candidates.emplace_back(d, i, j);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::vector<std::pair<int, int>> out;
  for (const auto& [d, i, j] : candidates) {
    if (used[static_cast<std::size_t>(i)] || used[static_cast<std::size_t>(j)]) continue;
    used[static_cast<std::size_t>(i)] = used[static_cast<std::size_t>(j)] = true;
    out.emplace_back(i, j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::pair<int, int>> detect_proximity_loop_closures(const PoseGraph& graph,
                                                                       double radius,
                                                                       int min_index_gap) {
  std::vector<Vector3> positions;
  positions.reserve(graph.poses().size());
  for (const Pose& p : graph.poses()) positions.push_back(p.translation);
  return detect_proximity_loop_closures(positions, radius, min_index_gap);
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt
// ---------------------------------------------------------------------------

enum class LinearSolverType { kAuto, kDenseCholesky, kSparseCholesky };

struct OptimizeConfig {
  int max_iterations = 100;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  double max_lambda = 1e8;
  double relative_cost_tolerance = 1e-9;
  double gradient_tolerance = 1e-10;
  /// Converged once an accepted step has inf-norm below this (tangent units).
  double step_tolerance = 1e-10;
  LinearSolverType solver = LinearSolverType::kAuto;
  /// kAuto switches to the sparse factorization above this many unknowns.
  int dense_max_dimension = 600;
};

struct KindSummary {
  FactorKind kind;
  int count = 0;
  double residual_rms = 0.0;  // over raw residual components
  double whitened_rms = 0.0;  // over whitened residual components
};

struct OptResult {
  std::vector<Pose> poses;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;  // accepted costs, starting with the initial one
  std::vector<KindSummary> summary;
  std::string termination;
};

inline double total_cost(std::span<const Factor> factors, std::span<const Pose> poses) {
  double cost = 0.0;
  for (const Factor& f : factors) cost += weighted_cost(f, poses);
  return cost;
}

inline std::vector<KindSummary> summarize_residuals(std::span<const Factor> factors,
                                                    std::span<const Pose> poses) {
  std::vector<KindSummary> out;
  for (const FactorKind kind : kAllFactorKinds) {
    KindSummary s{kind};
    double raw = 0.0;
    double white = 0.0;
    int components = 0;
    for (const Factor& f : factors) {
      if (f.kind() != kind) continue;
      const Eigen::VectorXd r = evaluate(f, poses);
      raw += r.squaredNorm();
      white += f.noise().whiten(r).squaredNorm();
      components += static_cast<int>(r.size());
      ++s.count;
    }
    if (s.count == 0) continue;
    s.residual_rms = std::sqrt(raw / components);
    s.whitened_rms = std::sqrt(white / components);
    out.push_back(s);
  }
  return out;
}

namespace detail {

struct NormalEquations {
  Eigen::SparseMatrix<double> hessian;  // J^T W J, full symmetric storage
  Eigen::VectorXd gradient;             // J^T W r
};

inline NormalEquations build_normal_equations(std::span<const Factor> factors,
                                              std::span<const Pose> poses) {
  const Eigen::Index dim = 6 * static_cast<Eigen::Index>(poses.size());
  NormalEquations ne;
  ne.gradient = Eigen::VectorXd::Zero(dim);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(factors.size() * 144);
  for (const Factor& f : factors) {
    const Linearization lin = linearize(f, poses);
    const Eigen::VectorXd inv_sigma = f.noise().sigmas().cwiseInverse();
    const Eigen::MatrixXd wj = inv_sigma.asDiagonal() * lin.jacobian;
    const Eigen::VectorXd wr = inv_sigma.cwiseProduct(lin.residual);
    const Eigen::MatrixXd h = wj.transpose() * wj;
    const Eigen::VectorXd g = wj.transpose() * wr;
    for (int a = 0; a < f.arity(); ++a) {
      const Eigen::Index row0 = 6 * static_cast<Eigen::Index>(f.node(a));
      ne.gradient.segment<6>(row0) += g.segment<6>(6 * a);
      for (int b = 0; b < f.arity(); ++b) {
        const Eigen::Index col0 = 6 * static_cast<Eigen::Index>(f.node(b));
        for (int r = 0; r < 6; ++r) {
          for (int c = 0; c < 6; ++c) {
            triplets.emplace_back(row0 + r, col0 + c, h(6 * a + r, 6 * b + c));
          }
        }
      }
    }
  }
  ne.hessian.resize(dim, dim);
  ne.hessian.setFromTriplets(triplets.begin(), triplets.end());
  return ne;
}

inline std::vector<Pose> retract(std::span<const Pose> poses, const Eigen::VectorXd& delta) {
  std::vector<Pose> out(poses.begin(), poses.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = out[i] * exp_se3(delta.segment<6>(6 * static_cast<Eigen::Index>(i)));
  }
  return out;
}

// Cost at a trial point; a state that leaves the DEM or degenerates is
// treated as infinitely expensive so LM rejects the step.
inline double trial_cost(std::span<const Factor> factors, std::span<const Pose> poses) {
  try {
    return total_cost(factors, poses);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kOutOfBounds:
      case ErrorCode::kNoData:
      case ErrorCode::kAngleNearPi:
      case ErrorCode::kAntipodalNormal:
        return std::numeric_limits<double>::infinity();
      default:
        throw;
    }
  }
}

class DampedSolver {
 public:
  DampedSolver(const Eigen::SparseMatrix<double>& hessian, bool dense)
      : hessian_(hessian), dense_(dense) {
    diagonal_ = hessian_.diagonal().cwiseMax(1e-9);
    if (dense_) {
      dense_hessian_ = Eigen::MatrixXd(hessian_);
    } else {
      damped_ = hessian_;
      sparse_.analyzePattern(damped_);
    }
  }

  /// Solves (H + lambda * D) x = rhs. Returns false if not positive definite.
  bool solve(double lambda, const Eigen::VectorXd& rhs, Eigen::VectorXd& x) {
    if (dense_) {
      Eigen::MatrixXd a = dense_hessian_;
      a.diagonal() += lambda * diagonal_;
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() != Eigen::Success) return false;
      x = llt.solve(rhs);
      return x.allFinite();
    }
    damped_ = hessian_;
    for (Eigen::Index k = 0; k < damped_.rows(); ++k) {
      damped_.coeffRef(k, k) += lambda * diagonal_[k];
    }
    sparse_.factorize(damped_);
    if (sparse_.info() != Eigen::Success) return false;
    x = sparse_.solve(rhs);
    return sparse_.info() == Eigen::Success && x.allFinite();
  }

 private:
  const Eigen::SparseMatrix<double>& hessian_;
  bool dense_;
  Eigen::VectorXd diagonal_;
  Eigen::MatrixXd dense_hessian_;
  Eigen::SparseMatrix<double> damped_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> sparse_;
};

}  // namespace detail

/// Minimizes sum_f r_f^T Sigma_f^-1 r_f over the node poses. Does not modify
/// the graph; the optimized poses are returned in the result.
inline OptResult optimize(const PoseGraph& graph, const OptimizeConfig& config = {}) {
  if (!graph.has_prior() || !graph.is_connected()) {
    throw Error(ErrorCode::kSingularNormalEquations,
                "graph is not connected to a prior-held node; the problem has no unique minimum");
  }
  const std::span<const Factor> factors(graph.factors());
  const Eigen::Index dim = 6 * static_cast<Eigen::Index>(graph.num_nodes());
  const bool dense =
      config.solver == LinearSolverType::kDenseCholesky ||
      (config.solver == LinearSolverType::kAuto && dim <= config.dense_max_dimension);

  OptResult result;
  std::vector<Pose> x = graph.poses();
  double cost = total_cost(factors, x);
  result.initial_cost = cost;
  result.cost_history.push_back(cost);
  double lambda = config.initial_lambda;
  result.termination = "max_iterations";

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const detail::NormalEquations ne = detail::build_normal_equations(factors, x);
    if (ne.gradient.lpNorm<Eigen::Infinity>() < config.gradient_tolerance) {
      result.converged = true;
      result.termination = "gradient";
      break;
    }
    ++result.iterations;
    detail::DampedSolver solver(ne.hessian, dense);
    const Eigen::VectorXd rhs = -ne.gradient;
    bool accepted = false;
    bool stalled = false;
    while (!accepted) {
      Eigen::VectorXd delta;
      if (!solver.solve(lambda, rhs, delta)) {
        lambda *= config.lambda_up;
        if (lambda > config.max_lambda) {
          throw Error(ErrorCode::kSingularNormalEquations,
                      "damped normal equations not positive definite at lambda " +
                          std::to_string(config.max_lambda));
        }
        continue;
      }
      std::vector<Pose> candidate = detail::retract(x, delta);
      const double new_cost = detail::trial_cost(factors, candidate);
      if (new_cost <= cost) {
        const double decrease = cost - new_cost;
        const bool small = decrease <= config.relative_cost_tolerance * cost;
        const bool tiny_step = delta.lpNorm<Eigen::Infinity>() < config.step_tolerance;
        x = std::move(candidate);
        cost = new_cost;
        result.cost_history.push_back(cost);
        lambda = std::max(lambda / config.lambda_down, 1e-12);
        accepted = true;
        if (small) {
          result.converged = true;
          result.termination = "relative_cost";
        } else if (tiny_step) {
          result.converged = true;
          result.termination = "step";
        }
      } else {
        lambda *= config.lambda_up;
        if (lambda > config.max_lambda) {
          // No descent direction left at working precision.
          stalled = true;
          break;
        }
      }
    }
    if (stalled) {
      result.converged = true;
      result.termination = "no_descent";
      break;
    }
    if (result.converged) break;
  }

  result.final_cost = cost;
  result.summary = summarize_residuals(factors, x);
  result.poses = std::move(x);
  return result;
}

}  // namespace demslam
