#pragma once

// JSON form of a pose graph, used for debugging dumps and test fixtures.
//
//   {"nodes":   [{"id": 0, "t": [x, y, z], "q": [qx, qy, qz, qw]}, ...],
//    "factors": [{"kind": "odometry", "nodes": [0, 1],
//                 "measurement": {"t": [...], "q": [...]}, "sigmas": [...]},
//                {"kind": "dem_height", "nodes": [10], "sigmas": [0.5]}, ...]}
//
// DEM factors reference the DEM implicitly; it is supplied when reading.

#include <nlohmann/json.hpp>

#include <memory>
#include <string>

#include "demslam/error.hpp"
#include "demslam/factors.hpp"
#include "demslam/graph.hpp"

namespace demslam {

inline nlohmann::ordered_json pose_to_json(const Pose& p) {
  const auto& q = p.rotation.quaternion();
  nlohmann::ordered_json j;
  j["t"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  j["q"] = {q.x(), q.y(), q.z(), q.w()};
  return j;
}

inline Pose pose_from_json(const nlohmann::json& j) {
  const auto t = j.at("t").get<std::vector<double>>();
  const auto q = j.at("q").get<std::vector<double>>();
  if (t.size() != 3 || q.size() != 4) {
    throw Error(ErrorCode::kParseError, "pose needs t[3] and q[4]");
  }
  return {Rotation(q[3], q[0], q[1], q[2]), Vector3(t[0], t[1], t[2])};
}

inline nlohmann::ordered_json graph_to_json(const PoseGraph& graph) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (int i = 0; i < graph.num_nodes(); ++i) {
    nlohmann::ordered_json node = pose_to_json(graph.poses()[static_cast<std::size_t>(i)]);
    node["id"] = i;
    j["nodes"].push_back(std::move(node));
  }
  j["factors"] = nlohmann::ordered_json::array();
  for (const Factor& f : graph.factors()) {
    nlohmann::ordered_json jf;
    jf["kind"] = std::string(to_string(f.kind()));
    jf["nodes"] = nlohmann::ordered_json::array();
    for (int k = 0; k < f.arity(); ++k) jf["nodes"].push_back(f.node(k));
    if (f.kind() != FactorKind::kDemHeight && f.kind() != FactorKind::kDemNormal) {
      jf["measurement"] = pose_to_json(f.measurement());
    }
    const Eigen::VectorXd& s = f.noise().sigmas();
    jf["sigmas"] = std::vector<double>(s.data(), s.data() + s.size());
    j["factors"].push_back(std::move(jf));
  }
  return j;
}

inline PoseGraph graph_from_json(const nlohmann::json& j,
                                 const std::shared_ptr<const DemGrid>& dem = nullptr) {
  try {
    PoseGraph graph;
    for (const auto& node : j.at("nodes")) {
      const int id = node.at("id").get<int>();
      if (id != graph.num_nodes()) {
        throw Error(ErrorCode::kParseError, "node ids must be 0..N-1 in order");
      }
      graph.add_node(pose_from_json(node));
    }
    for (const auto& jf : j.at("factors")) {
      const FactorKind kind = factor_kind_from_string(jf.at("kind").get<std::string>());
      const auto nodes = jf.at("nodes").get<std::vector<int>>();
      const auto sig = jf.at("sigmas").get<std::vector<double>>();
      NoiseModel noise(Eigen::Map<const Eigen::VectorXd>(sig.data(),
                                                         static_cast<Eigen::Index>(sig.size())));
      const std::size_t arity =
          (kind == FactorKind::kOdometry || kind == FactorKind::kLoopClosure) ? 2 : 1;
      if (nodes.size() != arity) {
        throw Error(ErrorCode::kParseError, "wrong node count for " + std::string(to_string(kind)));
      }
      switch (kind) {
        case FactorKind::kPrior:
          graph.add_factor(Factor::prior(nodes[0], pose_from_json(jf.at("measurement")), noise));
          break;
        case FactorKind::kOdometry:
          graph.add_factor(
              Factor::odometry(nodes[0], nodes[1], pose_from_json(jf.at("measurement")), noise));
          break;
        case FactorKind::kLoopClosure:
          graph.add_factor(Factor::loop_closure(nodes[0], nodes[1],
                                                pose_from_json(jf.at("measurement")), noise));
          break;
        case FactorKind::kDemHeight:
        case FactorKind::kDemNormal:
          if (!dem) throw Error(ErrorCode::kInvalidArgument, "DEM factor but no DEM supplied");
          if (kind == FactorKind::kDemHeight) {
            graph.add_factor(Factor::dem_height(nodes[0], dem, sig.at(0)));
          } else {
            graph.add_factor(Factor::dem_normal(nodes[0], dem, noise));
          }
          break;
      }
    }
    return graph;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace demslam
