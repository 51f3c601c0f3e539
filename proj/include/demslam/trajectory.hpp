#pragma once

// Time-stamped pose sequences and TUM trajectory files
// ("timestamp tx ty tz qx qy qz qw", '#' starts a comment).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "demslam/dem_io.hpp"
#include "demslam/error.hpp"
#include "demslam/geometry.hpp"

namespace demslam {

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

class Trajectory {
 public:
  Trajectory() = default;

  /// Timestamps must be strictly increasing.
  void push_back(double timestamp, const Pose& pose) {
    if (!records_.empty() && !(timestamp > records_.back().timestamp)) {
      throw Error(ErrorCode::kInvalidArgument, "timestamps must be strictly increasing");
    }
    records_.push_back({timestamp, pose});
  }

  /// Same timestamps as `stamps`, new poses.
  static Trajectory with_poses(const Trajectory& stamps, const std::vector<Pose>& poses) {
    if (stamps.size() != poses.size()) {
      throw Error(ErrorCode::kLengthMismatch, "pose count does not match timestamps");
    }
    Trajectory out;
    out.records_.reserve(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
      out.records_.push_back({stamps.records_[i].timestamp, poses[i]});
    }
    return out;
  }

  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] const StampedPose& operator[](std::size_t i) const { return records_[i]; }
  [[nodiscard]] const Pose& pose(std::size_t i) const { return records_[i].pose; }
  [[nodiscard]] const std::vector<StampedPose>& records() const { return records_; }

  [[nodiscard]] std::vector<Pose> poses() const {
    std::vector<Pose> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.pose);
    return out;
  }

  [[nodiscard]] std::vector<Vector3> positions() const {
    std::vector<Vector3> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.pose.translation);
    return out;
  }

 private:
  std::vector<StampedPose> records_;
};

inline Trajectory parse_tum(std::istream& in) {
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 8) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected 8 fields, found " +
                                              std::to_string(tokens.size()));
    }
    double v[8];
    for (int k = 0; k < 8; ++k) {
      const auto parsed = detail::parse_double(tokens[static_cast<std::size_t>(k)]);
      if (!parsed) {
        throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": bad number '" +
                                                std::string(tokens[static_cast<std::size_t>(k)]) + "'");
      }
      v[k] = *parsed;
    }
    try {
      traj.push_back(v[0], Pose(Rotation(v[7], v[4], v[5], v[6]), Vector3(v[1], v[2], v[3])));
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return traj;
}

inline Trajectory load_tum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_tum(in);
}

inline void write_tum(const Trajectory& traj, std::ostream& out) {
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& r : traj.records()) {
    const auto& q = r.pose.rotation.quaternion();
    const auto& t = r.pose.translation;
    out << detail::format_double(r.timestamp) << ' ' << detail::format_double(t.x()) << ' '
        << detail::format_double(t.y()) << ' ' << detail::format_double(t.z()) << ' '
        << detail::format_double(q.x()) << ' ' << detail::format_double(q.y()) << ' '
        << detail::format_double(q.z()) << ' ' << detail::format_double(q.w()) << '\n';
  }
}

inline void save_tum(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_tum(traj, out);
}

}  // namespace demslam
