#pragma once

// End-to-end experiment driver: terrain/DEM -> ground-truth traverse ->
// corrupted odometry -> {VO, SLAM, DEM-SLAM} x DEM perturbations -> metrics.
//
// Every random stage draws its seed from the master seed through
// derive_seed(), so a perturbation sweep shares one traverse and one
// odometry noise realization.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "demslam/dem.hpp"
#include "demslam/dem_io.hpp"
#include "demslam/error.hpp"
#include "demslam/eval.hpp"
#include "demslam/factors.hpp"
#include "demslam/graph.hpp"
#include "demslam/perturb.hpp"
#include "demslam/rng.hpp"
#include "demslam/sim.hpp"
#include "demslam/trajectory.hpp"

namespace demslam {

inline constexpr const char* kMethodVo = "VO";
inline constexpr const char* kMethodSlam = "SLAM";
inline constexpr const char* kMethodDemSlam = "DEM-SLAM";
inline constexpr const char* kUnperturbed = "none";

struct TraverseConfig {
  std::vector<Vector2> waypoints;
  double spacing = 1.0;
  double clearance = 0.0;
};

struct DemFactorConfig {
  int stride = 10;
  std::optional<double> sigma_z;  // default: sidecar vertical_rmse_m, else 0.5 m
  double sigma_normal_deg = kDefaultSigmaNormalDeg;
  double sigma_normal_yaw = kDefaultSigmaNormalYaw;
};

struct LoopClosureConfig {
  bool enabled = true;
  double radius = 2.0;
  int min_index_gap = 50;
  /// Noise injected into, and assumed for, each loop-closure measurement.
  Vector6 sigma = (Vector6() << 0.02, 0.02, 0.02, 0.002, 0.002, 0.002).finished();
  std::uint64_t seed = 0;  // measurement noise; derived from the master seed unless given
};

struct MetricsConfig {
  int delta = 1;
  Alignment align = Alignment::kNone;
};

enum class OptimizationMode { kBatch, kIncremental };

struct ExperimentConfig {
  std::optional<TerrainSpec> terrain;
  std::optional<std::string> dem_path;
  TraverseConfig traverse;
  Vector6 odometry_sigma = Vector6::Zero();
  Vector6 odometry_bias = Vector6::Zero();
  std::uint64_t odometry_seed = 0;  // derived from the master seed unless given
  /// Sigmas of the odometry factors; default is odometry_sigma floored at
  /// 1e-3 m / 1e-4 rad so noiseless runs still have a well-posed graph.
  std::optional<Vector6> graph_odometry_sigma;
  double prior_sigma = 1e-6;
  DemFactorConfig dem_factors;
  LoopClosureConfig loop_closure;
  std::vector<PerturbationSpec> perturbations;  // seeds derived from `seed` unless given
  MetricsConfig metrics;
  OptimizeConfig optimizer;
  OptimizationMode mode = OptimizationMode::kBatch;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  int threads = 1;
};

// ---------------------------------------------------------------------------
// JSON <-> config
// ---------------------------------------------------------------------------

namespace detail {

inline Error config_error(const std::string& what) { return Error(ErrorCode::kConfig, what); }

inline void reject_unknown(const nlohmann::json& j, const std::string& where,
                           std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw config_error(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) throw config_error("unknown key '" + key + "' in " + where);
  }
}

inline Vector6 vec6_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 6) throw config_error(where + " must be an array of 6 numbers");
  Vector6 v;
  for (int k = 0; k < 6; ++k) v[k] = j.at(static_cast<std::size_t>(k)).get<double>();
  return v;
}

inline std::vector<double> vec6_to_std(const Vector6& v) { return {v.data(), v.data() + 6}; }

inline void positive(double v, const std::string& what) {
  if (!(v > 0.0)) throw config_error(what + " must be positive");
}

}  // namespace detail

inline TerrainSpec terrain_spec_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, "terrain", {"n_rows", "n_cols", "cell_size", "origin_x", "origin_y",
                                        "amplitude", "correlation_length", "ramp_x", "ramp_y",
                                        "bowl_depth", "bowl_radius", "seed"});
  TerrainSpec s;
  s.n_rows = j.value("n_rows", s.n_rows);
  s.n_cols = j.value("n_cols", s.n_cols);
  s.cell_size = j.value("cell_size", s.cell_size);
  s.origin_x = j.value("origin_x", s.origin_x);
  s.origin_y = j.value("origin_y", s.origin_y);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.correlation_length = j.value("correlation_length", s.correlation_length);
  s.ramp_x = j.value("ramp_x", s.ramp_x);
  s.ramp_y = j.value("ramp_y", s.ramp_y);
  s.bowl_depth = j.value("bowl_depth", s.bowl_depth);
  s.bowl_radius = j.value("bowl_radius", s.bowl_radius);
  s.seed = j.value("seed", s.seed);
  detail::positive(s.bowl_radius, "terrain.bowl_radius");
  if (s.n_rows < 2 || s.n_cols < 2) throw detail::config_error("terrain needs >= 2x2 cells");
  detail::positive(s.cell_size, "terrain.cell_size");
  detail::positive(s.correlation_length, "terrain.correlation_length");
  if (!(s.amplitude >= 0.0)) throw detail::config_error("terrain.amplitude must be >= 0");
  return s;
}

inline nlohmann::ordered_json to_json(const TerrainSpec& s) {
  return {{"n_rows", s.n_rows},       {"n_cols", s.n_cols},
          {"cell_size", s.cell_size}, {"origin_x", s.origin_x},
          {"origin_y", s.origin_y},   {"amplitude", s.amplitude},
          {"correlation_length", s.correlation_length},
          {"ramp_x", s.ramp_x},       {"ramp_y", s.ramp_y},
          {"bowl_depth", s.bowl_depth}, {"bowl_radius", s.bowl_radius},
          {"seed", s.seed}};
}

inline PerturbationSpec perturbation_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  PerturbationSpec p;
  if (kind == "correlated_noise") {
    detail::reject_unknown(j, "perturbation", {"kind", "rms", "correlation_length", "seed"});
    CorrelatedNoise n;
    n.rms = j.at("rms").get<double>();
    n.correlation_length = j.value("correlation_length", 10.0);
    if (!(n.rms >= 0.0)) throw detail::config_error("perturbation rms must be >= 0");
    detail::positive(n.correlation_length, "perturbation correlation_length");
    p.kind = n;
  } else if (kind == "vertical_bias") {
    detail::reject_unknown(j, "perturbation", {"kind", "offset", "seed"});
    p.kind = VerticalBias{j.at("offset").get<double>()};
  } else if (kind == "horizontal_shift") {
    detail::reject_unknown(j, "perturbation", {"kind", "dx", "dy", "seed"});
    p.kind = HorizontalShift{j.value("dx", 0.0), j.value("dy", 0.0)};
  } else {
    throw detail::config_error("unknown perturbation kind '" + kind + "'");
  }
  p.seed = j.value("seed", p.seed);
  return p;
}

inline nlohmann::ordered_json to_json(const PerturbationSpec& p) {
  return std::visit(
      [&](const auto& v) -> nlohmann::ordered_json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CorrelatedNoise>) {
          return {{"kind", "correlated_noise"}, {"rms", v.rms},
                  {"correlation_length", v.correlation_length}, {"seed", p.seed}};
        } else if constexpr (std::is_same_v<T, VerticalBias>) {
          return {{"kind", "vertical_bias"}, {"offset", v.offset}, {"seed", p.seed}};
        } else {
          return {{"kind", "horizontal_shift"}, {"dx", v.dx}, {"dy", v.dy}, {"seed", p.seed}};
        }
      },
      p.kind);
}

/// Validates and materializes every default. Relative paths are resolved
/// against `base_dir` (the directory of the config file).
inline ExperimentConfig config_from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = {}) {
  try {
    detail::reject_unknown(j, "config",
                           {"terrain", "dem_path", "traverse", "odometry_noise",
                            "graph_odometry_sigma", "prior_sigma", "dem_factors", "loop_closure",
                            "perturbations", "metrics", "optimizer", "mode", "output_dir", "seed",
                            "threads"});
    ExperimentConfig c;
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("terrain") == j.contains("dem_path")) {
      throw detail::config_error("exactly one of 'terrain' or 'dem_path' is required");
    }
    if (j.contains("terrain")) {
      c.terrain = terrain_spec_from_json(j.at("terrain"));
      if (!j.at("terrain").contains("seed")) c.terrain->seed = derive_seed(c.seed, "terrain");
    } else {
      std::filesystem::path p = j.at("dem_path").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      if (!std::filesystem::exists(p)) {
        throw detail::config_error("dem_path '" + p.string() + "' does not exist");
      }
      c.dem_path = p.string();
    }

    const auto& jt = j.at("traverse");
    detail::reject_unknown(jt, "traverse", {"waypoints", "circle", "spacing", "clearance"});
    if (jt.contains("waypoints") == jt.contains("circle")) {
      throw detail::config_error("traverse needs exactly one of 'waypoints' or 'circle'");
    }
    if (jt.contains("circle")) {
      // closed loop, expanded to a polygon; the resolved config keeps the polygon
      const auto& jc = jt.at("circle");
      detail::reject_unknown(jc, "traverse.circle", {"center", "radius", "segments"});
      const auto& center = jc.at("center");
      if (!center.is_array() || center.size() != 2) throw detail::config_error("circle.center is [x, y]");
      const double radius = jc.at("radius").get<double>();
      const int segments = jc.value("segments", 72);
      detail::positive(radius, "traverse.circle.radius");
      if (segments < 3) throw detail::config_error("traverse.circle.segments must be >= 3");
      c.traverse.waypoints = circle_waypoints(
          Vector2(center.at(0).get<double>(), center.at(1).get<double>()), radius, segments);
    } else {
      for (const auto& w : jt.at("waypoints")) {
        if (!w.is_array() || w.size() != 2) throw detail::config_error("waypoints are [x, y] pairs");
        c.traverse.waypoints.emplace_back(w.at(0).get<double>(), w.at(1).get<double>());
      }
    }
    if (c.traverse.waypoints.size() < 2) throw detail::config_error("need >= 2 waypoints");
    c.traverse.spacing = jt.value("spacing", c.traverse.spacing);
    c.traverse.clearance = jt.value("clearance", c.traverse.clearance);
    detail::positive(c.traverse.spacing, "traverse.spacing");

    c.odometry_seed = derive_seed(c.seed, "odometry");
    c.loop_closure.seed = derive_seed(c.seed, "loop_closure");
    if (j.contains("odometry_noise")) {
      const auto& jn = j.at("odometry_noise");
      detail::reject_unknown(jn, "odometry_noise", {"sigma", "bias", "seed"});
      if (jn.contains("sigma")) c.odometry_sigma = detail::vec6_from_json(jn.at("sigma"), "odometry_noise.sigma");
      if (jn.contains("bias")) c.odometry_bias = detail::vec6_from_json(jn.at("bias"), "odometry_noise.bias");
      c.odometry_seed = jn.value("seed", c.odometry_seed);
      if ((c.odometry_sigma.array() < 0.0).any()) {
        throw detail::config_error("odometry_noise.sigma must be >= 0");
      }
    }
    if (j.contains("graph_odometry_sigma")) {
      c.graph_odometry_sigma = detail::vec6_from_json(j.at("graph_odometry_sigma"), "graph_odometry_sigma");
    } else {
      Vector6 s = c.odometry_sigma;
      for (int k = 0; k < 3; ++k) s[k] = std::max(s[k], 1e-3);
      for (int k = 3; k < 6; ++k) s[k] = std::max(s[k], 1e-4);
      c.graph_odometry_sigma = s;
    }
    if ((c.graph_odometry_sigma->array() <= 0.0).any()) {
      throw detail::config_error("graph_odometry_sigma must be positive");
    }
    c.prior_sigma = j.value("prior_sigma", c.prior_sigma);
    detail::positive(c.prior_sigma, "prior_sigma");

    if (j.contains("dem_factors")) {
      const auto& jd = j.at("dem_factors");
      detail::reject_unknown(jd, "dem_factors",
                             {"stride", "sigma_z", "sigma_normal_deg", "sigma_normal_yaw"});
      c.dem_factors.stride = jd.value("stride", c.dem_factors.stride);
      if (jd.contains("sigma_z") && !jd.at("sigma_z").is_null()) {
        c.dem_factors.sigma_z = jd.at("sigma_z").get<double>();
        detail::positive(*c.dem_factors.sigma_z, "dem_factors.sigma_z");
      }
      c.dem_factors.sigma_normal_deg = jd.value("sigma_normal_deg", c.dem_factors.sigma_normal_deg);
      c.dem_factors.sigma_normal_yaw = jd.value("sigma_normal_yaw", c.dem_factors.sigma_normal_yaw);
    }
    if (c.dem_factors.stride < 1) throw detail::config_error("dem_factors.stride must be >= 1");
    detail::positive(c.dem_factors.sigma_normal_deg, "dem_factors.sigma_normal_deg");
    detail::positive(c.dem_factors.sigma_normal_yaw, "dem_factors.sigma_normal_yaw");

    if (j.contains("loop_closure")) {
      const auto& jl = j.at("loop_closure");
      detail::reject_unknown(jl, "loop_closure", {"enabled", "radius", "min_index_gap", "sigma", "seed"});
      c.loop_closure.seed = jl.value("seed", c.loop_closure.seed);
      c.loop_closure.enabled = jl.value("enabled", c.loop_closure.enabled);
      c.loop_closure.radius = jl.value("radius", c.loop_closure.radius);
      c.loop_closure.min_index_gap = jl.value("min_index_gap", c.loop_closure.min_index_gap);
      if (jl.contains("sigma")) c.loop_closure.sigma = detail::vec6_from_json(jl.at("sigma"), "loop_closure.sigma");
    }
    detail::positive(c.loop_closure.radius, "loop_closure.radius");
    if (c.loop_closure.min_index_gap < 1) throw detail::config_error("loop_closure.min_index_gap must be >= 1");
    if ((c.loop_closure.sigma.array() <= 0.0).any()) {
      throw detail::config_error("loop_closure.sigma must be positive");
    }

    if (j.contains("perturbations")) {
      int k = 0;
      for (const auto& jp : j.at("perturbations")) {
        PerturbationSpec p = perturbation_from_json(jp);
        const std::uint64_t derived = derive_seed(c.seed, "perturbation/" + std::to_string(k++));
        if (!jp.contains("seed")) p.seed = derived;
        c.perturbations.push_back(p);
      }
    }

    if (j.contains("metrics")) {
      const auto& jm = j.at("metrics");
      detail::reject_unknown(jm, "metrics", {"delta", "align"});
      c.metrics.delta = jm.value("delta", c.metrics.delta);
      c.metrics.align = alignment_from_string(jm.value("align", std::string("none")));
    }
    if (c.metrics.delta < 1) throw detail::config_error("metrics.delta must be >= 1");

    if (j.contains("optimizer")) {
      const auto& jo = j.at("optimizer");
      detail::reject_unknown(jo, "optimizer",
                             {"max_iterations", "initial_lambda", "lambda_up", "lambda_down",
                              "relative_cost_tolerance", "gradient_tolerance", "step_tolerance",
                              "solver"});
      c.optimizer.max_iterations = jo.value("max_iterations", c.optimizer.max_iterations);
      c.optimizer.initial_lambda = jo.value("initial_lambda", c.optimizer.initial_lambda);
      c.optimizer.lambda_up = jo.value("lambda_up", c.optimizer.lambda_up);
      c.optimizer.lambda_down = jo.value("lambda_down", c.optimizer.lambda_down);
      c.optimizer.relative_cost_tolerance =
          jo.value("relative_cost_tolerance", c.optimizer.relative_cost_tolerance);
      c.optimizer.gradient_tolerance = jo.value("gradient_tolerance", c.optimizer.gradient_tolerance);
      c.optimizer.step_tolerance = jo.value("step_tolerance", c.optimizer.step_tolerance);
      const std::string solver = jo.value("solver", std::string("auto"));
      if (solver == "auto") c.optimizer.solver = LinearSolverType::kAuto;
      else if (solver == "dense") c.optimizer.solver = LinearSolverType::kDenseCholesky;
      else if (solver == "sparse") c.optimizer.solver = LinearSolverType::kSparseCholesky;
      else throw detail::config_error("optimizer.solver must be auto, dense or sparse");
    }
    if (c.optimizer.max_iterations < 1) throw detail::config_error("optimizer.max_iterations must be >= 1");
    detail::positive(c.optimizer.initial_lambda, "optimizer.initial_lambda");
    detail::positive(c.optimizer.lambda_up, "optimizer.lambda_up");
    detail::positive(c.optimizer.lambda_down, "optimizer.lambda_down");
    detail::positive(c.optimizer.relative_cost_tolerance, "optimizer.relative_cost_tolerance");
    detail::positive(c.optimizer.gradient_tolerance, "optimizer.gradient_tolerance");
    detail::positive(c.optimizer.step_tolerance, "optimizer.step_tolerance");

    const std::string mode = j.value("mode", std::string("batch"));
    if (mode == "batch") c.mode = OptimizationMode::kBatch;
    else if (mode == "incremental") c.mode = OptimizationMode::kIncremental;
    else throw detail::config_error("mode must be 'batch' or 'incremental'");

    std::filesystem::path out = j.value("output_dir", c.output_dir);
    if (out.is_relative() && !base_dir.empty()) out = base_dir / out;
    c.output_dir = out.string();
    c.threads = j.value("threads", c.threads);
    if (c.threads < 1) throw detail::config_error("threads must be >= 1");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw detail::config_error(e.what());
  }
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  if (c.terrain) j["terrain"] = to_json(*c.terrain);
  if (c.dem_path) j["dem_path"] = *c.dem_path;
  nlohmann::ordered_json wp = nlohmann::ordered_json::array();
  for (const auto& w : c.traverse.waypoints) wp.push_back({w.x(), w.y()});
  j["traverse"] = {{"waypoints", wp}, {"spacing", c.traverse.spacing},
                   {"clearance", c.traverse.clearance}};
  j["odometry_noise"] = {{"sigma", detail::vec6_to_std(c.odometry_sigma)},
                         {"bias", detail::vec6_to_std(c.odometry_bias)},
                         {"seed", c.odometry_seed}};
  j["graph_odometry_sigma"] = detail::vec6_to_std(*c.graph_odometry_sigma);
  j["prior_sigma"] = c.prior_sigma;
  j["dem_factors"] = {{"stride", c.dem_factors.stride},
                      {"sigma_z", c.dem_factors.sigma_z ? nlohmann::ordered_json(*c.dem_factors.sigma_z)
                                                        : nlohmann::ordered_json(nullptr)},
                      {"sigma_normal_deg", c.dem_factors.sigma_normal_deg},
                      {"sigma_normal_yaw", c.dem_factors.sigma_normal_yaw}};
  j["loop_closure"] = {{"enabled", c.loop_closure.enabled},
                       {"radius", c.loop_closure.radius},
                       {"min_index_gap", c.loop_closure.min_index_gap},
                       {"sigma", detail::vec6_to_std(c.loop_closure.sigma)},
                       {"seed", c.loop_closure.seed}};
  j["perturbations"] = nlohmann::ordered_json::array();
  for (const auto& p : c.perturbations) j["perturbations"].push_back(to_json(p));
  j["metrics"] = {{"delta", c.metrics.delta}, {"align", std::string(to_string(c.metrics.align))}};
  const char* solver = c.optimizer.solver == LinearSolverType::kAuto     ? "auto"
                       : c.optimizer.solver == LinearSolverType::kDenseCholesky ? "dense"
                                                                                : "sparse";
  j["optimizer"] = {{"max_iterations", c.optimizer.max_iterations},
                    {"initial_lambda", c.optimizer.initial_lambda},
                    {"lambda_up", c.optimizer.lambda_up},
                    {"lambda_down", c.optimizer.lambda_down},
                    {"relative_cost_tolerance", c.optimizer.relative_cost_tolerance},
                    {"gradient_tolerance", c.optimizer.gradient_tolerance},
                    {"step_tolerance", c.optimizer.step_tolerance},
                    {"solver", solver}};
  j["mode"] = c.mode == OptimizationMode::kBatch ? "batch" : "incremental";
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  return j;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct MethodRun {
  std::string scenario;  // perturbation label, "none" when unperturbed
  std::string method;    // VO | SLAM | DEM-SLAM
  Trajectory estimate;
  MetricReport metrics;
  int iterations = 0;
  bool converged = true;
  DemFactorStats dem_stats;
};

struct ExperimentResult {
  Trajectory ground_truth;
  std::vector<std::pair<int, int>> loop_closures;
  double sigma_z = kDefaultSigmaZ;
  std::vector<std::string> scenarios;  // "none" followed by perturbation labels
  std::vector<MethodRun> runs;         // scenario-major, methods in VO, SLAM, DEM-SLAM order

  [[nodiscard]] const MethodRun& find(const std::string& scenario, const std::string& method) const {
    for (const auto& r : runs) {
      if (r.scenario == scenario && r.method == method) return r;
    }
    throw Error(ErrorCode::kInvalidArgument, "no run " + method + "/" + scenario);
  }
};

/// Failure in a named pipeline stage.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& cause)
      : Error(cause.code(), "stage '" + stage + "': " + cause.what()), stage_(stage) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

template <typename F>
auto run_stage(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

struct GraphInputs {
  Pose origin;
  std::vector<Pose> odometry;
  std::vector<std::pair<int, int>> loop_pairs;
  std::vector<Pose> loop_measurements;
  NoiseModel odometry_noise;
  NoiseModel prior_noise;
  NoiseModel loop_noise;
};

struct GraphRun {
  std::vector<Pose> poses;
  int iterations = 0;
  bool converged = true;
  DemFactorStats dem_stats;
};

// Builds and optimizes one graph. Batch mode adds everything then optimizes
// once; incremental mode grows the graph node by node and optimizes after
// every loop-closure insertion and once at the end.
inline GraphRun solve_graph(const GraphInputs& in, const std::shared_ptr<const DemGrid>& dem,
                            const ExperimentConfig& cfg, double sigma_z, bool use_loops) {
  const NoiseModel n_noise = normal_noise(deg_to_rad(cfg.dem_factors.sigma_normal_deg),
                                          cfg.dem_factors.sigma_normal_yaw);
  const int stride = cfg.dem_factors.stride;
  PoseGraph graph(in.origin, in.prior_noise);
  GraphRun run;
  run.iterations = 0;

  auto add_dem = [&](int node) {
    if (!dem || node % stride != 0) return;
    if (graph.add_dem_factors_at(node, dem, sigma_z, n_noise)) {
      run.dem_stats.added += 2;
    } else {
      ++run.dem_stats.skipped_poses;
    }
  };
  auto optimize_now = [&]() {
    OptResult r = optimize(graph, cfg.optimizer);
    run.iterations += r.iterations;
    run.converged = r.converged;
    graph.set_poses(std::move(r.poses));
  };

  if (cfg.mode == OptimizationMode::kBatch) {
    for (const Pose& m : in.odometry) graph.add_odometry_node(m, in.odometry_noise);
    if (dem) {
      for (int i = 0; i < graph.num_nodes(); ++i) add_dem(i);
    }
    if (use_loops) {
      for (std::size_t k = 0; k < in.loop_pairs.size(); ++k) {
        graph.add_loop_closure(in.loop_pairs[k].first, in.loop_pairs[k].second,
                               in.loop_measurements[k], in.loop_noise);
      }
    }
    optimize_now();
  } else {
    add_dem(0);
    for (const Pose& m : in.odometry) {
      const int node = graph.add_odometry_node(m, in.odometry_noise);
      add_dem(node);
      bool closed = false;
      if (use_loops) {
        for (std::size_t k = 0; k < in.loop_pairs.size(); ++k) {
          if (in.loop_pairs[k].second != node) continue;
          graph.add_loop_closure(in.loop_pairs[k].first, node, in.loop_measurements[k],
                                 in.loop_noise);
          closed = true;
        }
      }
      if (closed) optimize_now();
    }
    optimize_now();
  }
  run.poses = graph.poses();
  return run;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;

  // DEM and its vertical accuracy.
  std::optional<DemMetadata> meta;
  const auto dem = detail::run_stage("dem", [&] {
    if (cfg.terrain) return std::make_shared<const DemGrid>(synthesize_terrain(*cfg.terrain));
    meta = load_sidecar(*cfg.dem_path);
    return std::make_shared<const DemGrid>(load_ascii_grid(*cfg.dem_path));
  });
  result.sigma_z = cfg.dem_factors.sigma_z.value_or(
      meta && meta->vertical_rmse_m ? *meta->vertical_rmse_m : kDefaultSigmaZ);

  result.ground_truth = detail::run_stage("traverse", [&] {
    return generate_traverse(*dem, cfg.traverse.waypoints, cfg.traverse.spacing,
                             cfg.traverse.clearance);
  });
  const Trajectory& gt = result.ground_truth;
  if (gt.size() < 2) {
    throw StageError("traverse", Error(ErrorCode::kInvalidArgument, "traverse has < 2 poses"));
  }

  detail::GraphInputs in;
  in.origin = gt.pose(0);
  in.odometry = detail::run_stage("odometry", [&] {
    OdometryNoiseSpec noise;
    noise.sigma = cfg.odometry_sigma;
    noise.bias = cfg.odometry_bias;
    noise.seed = cfg.odometry_seed;
    return corrupt_odometry(gt, noise);
  });
  in.odometry_noise = NoiseModel(*cfg.graph_odometry_sigma);
  in.prior_noise = NoiseModel::isotropic(6, cfg.prior_sigma);
  in.loop_noise = NoiseModel(cfg.loop_closure.sigma);

  // Proximity is judged on ground truth: the simulator stands in for a
  // place-recognition front end that knows when the rover revisits a spot.
  if (cfg.loop_closure.enabled) {
    detail::run_stage("loop_closure", [&] {
      const auto positions = gt.positions();
      in.loop_pairs = detect_proximity_loop_closures(positions, cfg.loop_closure.radius,
                                                     cfg.loop_closure.min_index_gap);
      Rng rng(cfg.loop_closure.seed);
      for (const auto& [i, j] : in.loop_pairs) {
        Twist eps;
        for (int c = 0; c < 6; ++c) eps[c] = standard_normal(rng);
        in.loop_measurements.push_back(between(gt.pose(static_cast<std::size_t>(i)),
                                               gt.pose(static_cast<std::size_t>(j))) *
                                       exp_se3(cfg.loop_closure.sigma.cwiseProduct(eps)));
      }
      return 0;
    });
  }
  result.loop_closures = in.loop_pairs;

  auto make_run = [&](const std::string& scenario, const std::string& method,
                      const std::vector<Pose>& poses) {
    MethodRun run;
    run.scenario = scenario;
    run.method = method;
    run.estimate = Trajectory::with_poses(gt, poses);
    run.metrics = detail::run_stage("eval", [&] {
      return evaluate_metrics(gt, run.estimate, cfg.metrics.delta, cfg.metrics.align);
    });
    return run;
  };

  MethodRun vo = make_run(kUnperturbed, kMethodVo, dead_reckon(in.origin, in.odometry));
  const detail::GraphRun slam_graph = detail::run_stage(
      "optimize/SLAM", [&] { return detail::solve_graph(in, nullptr, cfg, result.sigma_z, true); });
  MethodRun slam = make_run(kUnperturbed, kMethodSlam, slam_graph.poses);
  slam.iterations = slam_graph.iterations;
  slam.converged = slam_graph.converged;

  // DEM variants: unperturbed first, then each perturbation.
  std::vector<std::string> labels{kUnperturbed};
  std::vector<std::shared_ptr<const DemGrid>> dems{dem};
  for (const auto& p : cfg.perturbations) {
    const std::string label = perturbation_label(p);
    labels.push_back(label);
    dems.push_back(detail::run_stage("perturb/" + label, [&] {
      return std::make_shared<const DemGrid>(apply_perturbation(*dem, p));
    }));
  }
  result.scenarios = labels;

  std::vector<detail::GraphRun> dem_runs(dems.size());
  auto solve_variant = [&](std::size_t k) {
    dem_runs[k] = detail::run_stage("optimize/DEM-SLAM/" + labels[k], [&] {
      return detail::solve_graph(in, dems[k], cfg, result.sigma_z, true);
    });
  };
  if (cfg.threads <= 1) {
    for (std::size_t k = 0; k < dems.size(); ++k) solve_variant(k);
  } else {
    for (std::size_t start = 0; start < dems.size(); start += static_cast<std::size_t>(cfg.threads)) {
      std::vector<std::future<void>> batch;
      const std::size_t stop = std::min(dems.size(), start + static_cast<std::size_t>(cfg.threads));
      for (std::size_t k = start; k < stop; ++k) {
        batch.push_back(std::async(std::launch::async, solve_variant, k));
      }
      for (auto& f : batch) f.get();
    }
  }

  for (std::size_t k = 0; k < dems.size(); ++k) {
    MethodRun v = vo;
    v.scenario = labels[k];
    MethodRun s = slam;
    s.scenario = labels[k];
    MethodRun d = make_run(labels[k], kMethodDemSlam, dem_runs[k].poses);
    d.iterations = dem_runs[k].iterations;
    d.converged = dem_runs[k].converged;
    d.dem_stats = dem_runs[k].dem_stats;
    result.runs.push_back(std::move(v));
    result.runs.push_back(std::move(s));
    result.runs.push_back(std::move(d));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "scenario,method,rpe_rmse,ate_rmse,ate_normalized,drift_percent\n";
  for (const auto& run : r.runs) {
    out << run.scenario << ',' << run.method << ',' << detail::format_double(run.metrics.rpe_rmse)
        << ',' << detail::format_double(run.metrics.ate_rmse) << ','
        << detail::format_double(run.metrics.ate_normalized) << ','
        << detail::format_double(run.metrics.drift_percent) << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json metrics_json(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["ground_truth_length"] = path_length(r.ground_truth);
  j["num_poses"] = r.ground_truth.size();
  j["sigma_z"] = r.sigma_z;
  j["loop_closures"] = nlohmann::ordered_json::array();
  for (const auto& [a, b] : r.loop_closures) j["loop_closures"].push_back({a, b});
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& run : r.runs) {
    nlohmann::ordered_json jr;
    jr["scenario"] = run.scenario;
    jr["method"] = run.method;
    jr["iterations"] = run.iterations;
    jr["converged"] = run.converged;
    jr["dem_factors_added"] = run.dem_stats.added;
    jr["dem_poses_skipped"] = run.dem_stats.skipped_poses;
    jr["metrics"] = to_json(run.metrics);
    j["runs"].push_back(std::move(jr));
  }
  return j;
}

/// Overhead x-y plot: ground truth black, VO orange, SLAM green, DEM-SLAM blue.
inline std::string trajectory_svg(const ExperimentResult& r, const std::string& scenario = kUnperturbed) {
  struct Line {
    const Trajectory* traj;
    const char* color;
    const char* name;
  };
  std::vector<Line> lines{{&r.ground_truth, "black", "ground truth"}};
  for (const auto& run : r.runs) {
    if (run.scenario != scenario) continue;
    const char* color = run.method == kMethodVo ? "orange" : run.method == kMethodSlam ? "green" : "blue";
    lines.push_back({&run.estimate, color, run.method == kMethodVo     ? kMethodVo
                                           : run.method == kMethodSlam ? kMethodSlam
                                                                       : kMethodDemSlam});
  }
  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  for (const auto& l : lines) {
    for (const auto& rec : l.traj->records()) {
      min_x = std::min(min_x, rec.pose.translation.x());
      max_x = std::max(max_x, rec.pose.translation.x());
      min_y = std::min(min_y, rec.pose.translation.y());
      max_y = std::max(max_y, rec.pose.translation.y());
    }
  }
  const double size = 800.0;
  const double margin = 40.0;
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
  const double scale = (size - 2 * margin) / span;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  char buf[64];
  for (const auto& l : lines) {
    out << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& rec : l.traj->records()) {
      const double px = margin + (rec.pose.translation.x() - min_x) * scale;
      const double py = size - margin - (rec.pose.translation.y() - min_y) * scale;
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px, py);
      out << buf;
    }
    out << "\"/>\n";
  }
  double ly = 20.0;
  for (const auto& l : lines) {
    out << "<text x=\"10\" y=\"" << ly << "\" fill=\"" << l.color
        << "\" font-family=\"sans-serif\" font-size=\"14\">" << l.name << "</text>\n";
    ly += 18.0;
  }
  out << "</svg>\n";
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

/// Writes gt.tum, <method>_<scenario>.tum, metrics.csv, metrics.json,
/// trajectories.svg and config.resolved.json into cfg.output_dir.
inline void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& r) {
  detail::run_stage("output", [&] {
    const std::filesystem::path dir = cfg.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
    save_tum(r.ground_truth, dir / "gt.tum");
    for (const auto& run : r.runs) {
      save_tum(run.estimate, dir / (run.method + "_" + run.scenario + ".tum"));
    }
    write_text(dir / "metrics.csv", metrics_csv(r));
    write_text(dir / "metrics.json", metrics_json(r).dump(2) + "\n");
    write_text(dir / "trajectories.svg", trajectory_svg(r));
    write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
    return 0;
  });
}

}  // namespace demslam
