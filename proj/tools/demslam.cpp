// demslam command-line driver.
//
//   demslam synth-dem --spec terrain.json --out dem.asc
//   demslam run --config experiment.json
//   demslam eval --gt gt.tum --est est.tum [--delta N] [--align none|se3]
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "demslam/demslam.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw demslam::Error(demslam::ErrorCode::kIo, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw demslam::Error(demslam::ErrorCode::kParseError, path + ": " + e.what());
  }
}

void report(const std::string& stage, const demslam::Error& e) {
  nlohmann::ordered_json j;
  j["error"] = {{"stage", stage}, {"code", std::string(demslam::to_string(e.code()))},
                {"message", e.what()}};
  std::cerr << j.dump() << '\n';
}

int synth_dem(const std::string& spec_path, const std::string& out_path) {
  const nlohmann::json j = read_json_file(spec_path);
  std::optional<double> rmse;
  nlohmann::json terrain = j;
  if (terrain.is_object() && terrain.contains("vertical_rmse_m")) {
    rmse = terrain.at("vertical_rmse_m").get<double>();
    terrain.erase("vertical_rmse_m");
  }
  demslam::TerrainSpec spec;
  try {
    spec = demslam::terrain_spec_from_json(terrain);
  } catch (const nlohmann::json::exception& e) {
    throw demslam::Error(demslam::ErrorCode::kConfig, e.what());
  }
  const demslam::DemGrid dem = demslam::synthesize_terrain(spec);
  demslam::save_ascii_grid(dem, out_path);
  demslam::DemMetadata meta;
  meta.vertical_rmse_m = rmse;
  demslam::save_sidecar(meta, out_path);
  return kExitOk;
}

int run(const std::string& config_path) {
  const nlohmann::json j = read_json_file(config_path);
  const auto base = std::filesystem::absolute(config_path).parent_path();
  const demslam::ExperimentConfig cfg = demslam::config_from_json(j, base);
  const demslam::ExperimentResult result = demslam::run_experiment(cfg);
  demslam::write_outputs(cfg, result);
  std::cout << demslam::metrics_csv(result);
  return kExitOk;
}

int eval(const std::string& gt_path, const std::string& est_path, int delta,
         const std::string& align) {
  const demslam::Alignment a = demslam::alignment_from_string(align);
  const demslam::Trajectory gt = demslam::load_tum(gt_path);
  const demslam::Trajectory est = demslam::load_tum(est_path);
  const demslam::MetricReport m = demslam::evaluate_metrics(gt, est, delta, a);
  std::cout << demslam::to_json(m).dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DEM-anchored pose-graph SLAM experiments"};
  app.require_subcommand(1);

  std::string spec_path, out_path;
  auto* synth = app.add_subcommand("synth-dem", "Synthesize a terrain DEM (ESRI ASCII + sidecar)");
  synth->add_option("--spec", spec_path, "Terrain spec JSON")->required();
  synth->add_option("--out", out_path, "Output .asc path")->required();

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment config");
  run_cmd->add_option("--config", config_path, "Experiment config JSON")->required();

  std::string gt_path, est_path, align = "none";
  int delta = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Compare two TUM trajectories");
  eval_cmd->add_option("--gt", gt_path, "Ground-truth TUM file")->required();
  eval_cmd->add_option("--est", est_path, "Estimated TUM file")->required();
  eval_cmd->add_option("--delta", delta, "RPE index interval")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--align", align, "none or se3")->check(CLI::IsMember({"none", "se3"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  std::string stage = "main";
  try {
    if (*synth) {
      stage = "synth-dem";
      return synth_dem(spec_path, out_path);
    }
    if (*run_cmd) {
      stage = "run";
      return run(config_path);
    }
    stage = "eval";
    return eval(gt_path, est_path, delta, align);
  } catch (const demslam::StageError& e) {
    report(e.stage(), e);
  } catch (const demslam::Error& e) {
    report(stage, e);
  } catch (const std::exception& e) {
    report(stage, demslam::Error(demslam::ErrorCode::kIo, e.what()));
  }
  return kExitRuntime;
}
