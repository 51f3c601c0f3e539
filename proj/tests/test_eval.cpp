#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "demslam/eval.hpp"
#include "oracles.hpp"

using namespace demslam;

namespace {

Trajectory line(const std::vector<double>& xs) {
  Trajectory t;
  for (std::size_t k = 0; k < xs.size(); ++k) t.push_back(static_cast<double>(k), Pose::from_translation(xs[k], 0, 0));
  return t;
}

Trajectory random_walk(std::mt19937_64& rng, int n, double step_angle = 0.3) {
  Trajectory t;
  Pose p = oracle::random_pose(rng);
  for (int k = 0; k < n; ++k) {
    t.push_back(k, p);
    p = p * exp_se3(oracle::random_twist(rng, step_angle, 1.0));
  }
  return t;
}

Trajectory transformed(const Pose& s, const Trajectory& t) {
  std::vector<Pose> poses;
  for (const Pose& p : t.poses()) poses.push_back(s * p);
  return Trajectory::with_poses(t, poses);
}

std::vector<oracle::Mat4> mats(const Trajectory& t) {
  std::vector<oracle::Mat4> out;
  for (const Pose& p : t.poses()) out.push_back(oracle::to_mat(p));
  return out;
}

}  // namespace

TEST(Rpe, HandComputed) {
  const ErrorSeries r = rpe(line({0, 1, 2}), line({0, 1, 2.1}));
  ASSERT_EQ(r.errors.size(), 2u);
  EXPECT_NEAR(r.errors[0], 0.0, 1e-15);
  EXPECT_NEAR(r.errors[1], 0.1, 1e-12);
  EXPECT_NEAR(r.rmse, 0.1 / std::sqrt(2.0), 1e-12);
}

TEST(Ate, HandComputed) {
  const AteResult a = ate(line({0, 1, 2}), line({0, 1, 3}));
  EXPECT_EQ(a.errors, (std::vector<double>{0, 0, 1}));
  EXPECT_NEAR(a.rmse, 1 / std::sqrt(3.0), 1e-12);
}

TEST(Metrics, IdenticalTrajectoriesGiveZero) {
  std::mt19937_64 rng(1);
  const Trajectory t = random_walk(rng, 30);
  const MetricReport m = evaluate_metrics(t, t);
  EXPECT_EQ(m.rpe_rmse, 0.0);
  EXPECT_EQ(m.ate_rmse, 0.0);
  EXPECT_EQ(m.drift_percent, 0.0);
}

TEST(Metrics, AgreeWithBruteForce) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const Trajectory gt = random_walk(rng, 10);
    const Trajectory est = random_walk(rng, 10);
    const auto g = mats(gt), e = mats(est);
    for (int delta : {1, 3}) {
      const ErrorSeries r = rpe(gt, est, delta);
      const auto expected = oracle::rpe_errors(g, e, delta);
      ASSERT_EQ(r.errors.size(), expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(r.errors[i], expected[i], 1e-12);
      EXPECT_NEAR(r.rmse, oracle::rmse(expected), 1e-12);
    }
    const AteResult a = ate(gt, est);
    EXPECT_NEAR(a.rmse, oracle::rmse(oracle::ate_errors(g, e, oracle::Mat4::Identity())), 1e-12);
    const AteResult aligned = ate(gt, est, Alignment::kSe3);
    ASSERT_EQ(aligned.mode, Alignment::kSe3);
    const auto s = oracle::rigid_alignment(g, e);
    EXPECT_NEAR(aligned.rmse, oracle::rmse(oracle::ate_errors(g, e, s)), 1e-12);
    EXPECT_NEAR(path_length(gt), oracle::path_length(g), 1e-12);
  }
}

TEST(Metrics, RpeLeftInvariant) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const Trajectory gt = random_walk(rng, 15);
    const Trajectory est = random_walk(rng, 15);
    const Pose s = oracle::random_pose(rng);
    const double base = rpe(gt, est).rmse;
    EXPECT_NEAR(rpe(transformed(s, gt), est).rmse, base, 1e-9);
    EXPECT_NEAR(rpe(gt, transformed(s, est)).rmse, base, 1e-9);
    EXPECT_LT(rpe(gt, transformed(s, gt)).rmse, 1e-9);
  }
}

TEST(Metrics, Se3AlignmentInvariantAndNoWorse) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 20; ++k) {
    const Trajectory gt = random_walk(rng, 15);
    const Trajectory est = random_walk(rng, 15);
    const Pose s = oracle::random_pose(rng);
    EXPECT_LT(ate(gt, transformed(s, gt), Alignment::kSe3).rmse, 1e-9);
    const double aligned = ate(gt, est, Alignment::kSe3).rmse;
    EXPECT_NEAR(ate(gt, transformed(s, est), Alignment::kSe3).rmse, aligned, 1e-9);
    EXPECT_LE(aligned, ate(gt, est).rmse + 1e-9);
  }
}

TEST(Metrics, DegenerateAlignmentFallsBack) {
  const AteResult a = ate(line({0, 1, 2, 3}), line({0, 1, 2, 4}), Alignment::kSe3);
  EXPECT_TRUE(a.degenerate_alignment);
  EXPECT_EQ(a.mode, Alignment::kNone);
  EXPECT_NEAR(a.rmse, 0.5, 1e-12);
}

TEST(Metrics, Errors) {
  try {
    (void)evaluate_metrics(line({0, 1, 2}), line({0, 1, 2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('4'), std::string::npos);
  }
  EXPECT_THROW((void)rpe(line({0, 1, 2}), line({0, 1, 2}), 3), Error);
  EXPECT_THROW((void)rpe(line({0, 1, 2}), line({0, 1, 2}), 0), Error);
  EXPECT_THROW((void)alignment_from_string("sim3"), Error);
}

TEST(PathLength, Examples) {
  EXPECT_DOUBLE_EQ(path_length(line({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10})), 10.0);
  Trajectory seg;
  seg.push_back(0, Pose());
  seg.push_back(1, Pose::from_translation(3, 4, 0));
  EXPECT_DOUBLE_EQ(path_length(seg), 5.0);
  Trajectory square;
  const double corners[][2] = {{0, 0}, {10, 0}, {10, 10}, {0, 10}, {0, 0}};
  for (int k = 0; k < 5; ++k) square.push_back(k, Pose::from_translation(corners[k][0], corners[k][1], 0));
  EXPECT_DOUBLE_EQ(path_length(square), 40.0);
}

TEST(MetricReport, DriftIsHundredTimesNormalized) {
  std::mt19937_64 rng(5);
  const Trajectory gt = random_walk(rng, 40);
  const Trajectory est = random_walk(rng, 40);
  const MetricReport m = evaluate_metrics(gt, est, 2, Alignment::kSe3);
  EXPECT_NEAR(m.drift_percent, 100 * m.ate_normalized, 1e-12);
  EXPECT_NEAR(m.ate_normalized, m.ate_rmse / path_length(gt), 1e-15);
  EXPECT_EQ(m.delta, 2);
  const auto j = to_json(m);
  EXPECT_EQ(j["alignment"], "se3");
  EXPECT_EQ(j["rpe_errors"].size(), 38u);
}
