#include <gtest/gtest.h>

#include <memory>
#include <numbers>
#include <random>

#include "demslam/factors.hpp"
#include "oracles.hpp"

using namespace demslam;

namespace {

constexpr double kPi = std::numbers::pi;

std::shared_ptr<const DemGrid> flat_dem(double h = 0.0) {
  return std::make_shared<const DemGrid>(
      DemGrid::sampled(-50, -50, 1, 101, 101, [h](double, double) { return h; }));
}

std::shared_ptr<const DemGrid> affine_dem(double a, double b, double c) {
  return std::make_shared<const DemGrid>(
      DemGrid::sampled(-50, -50, 1, 101, 101, [=](double x, double y) { return a * x + b * y + c; }));
}

std::shared_ptr<const DemGrid> smooth_dem() {
  return std::make_shared<const DemGrid>(DemGrid::sampled(-50, -50, 0.5, 201, 201, [](double x, double y) {
    return 2.0 * std::sin(0.1 * x) * std::cos(0.07 * y) + 0.05 * x;
  }));
}

Pose tilted(const Vector3& axis, double angle, const Vector3& t = Vector3::Zero()) {
  return {Rotation::about_axis(axis, angle), t};
}

}  // namespace

TEST(OdometryResidual, Examples) {
  EXPECT_TRUE(odometry_residual(Pose(), Pose(), Pose()).isZero());
  const Vector6 r = odometry_residual(Pose(), Pose::from_translation(0.1, 0, 0), Pose());
  Vector6 expected;
  expected << 0.1, 0, 0, 0, 0, 0;
  EXPECT_LT((r - expected).norm(), 1e-15);
}

TEST(OdometryResidual, ConsistentPosesGiveZero) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const Pose ti = oracle::random_pose(rng);
    const Pose m = oracle::random_pose(rng, 2.0);
    EXPECT_LT(odometry_residual(ti, ti * m, m).norm(), 1e-9);
  }
}

TEST(PriorResidual, ZeroAtMeasurement) {
  std::mt19937_64 rng(2);
  const Pose t = oracle::random_pose(rng);
  EXPECT_LT(prior_residual(t, t).norm(), 1e-12);
}

TEST(HeightResidual, Examples) {
  EXPECT_DOUBLE_EQ(height_residual(Pose::from_translation(3, 4, 0), *flat_dem()), 0.0);
  EXPECT_DOUBLE_EQ(height_residual(Pose::from_translation(3, 4, 2.5), *flat_dem()), 2.5);
  EXPECT_NEAR(height_residual(Pose::from_translation(1, 1, 7), *affine_dem(2, 3, 1)), 1.0, 1e-12);
}

TEST(HeightResidual, IndependentOfRotation) {
  std::mt19937_64 rng(3);
  const auto dem = smooth_dem();
  for (int k = 0; k < 50; ++k) {
    const Vector3 t(rng() % 60 - 30.0 + 0.3, rng() % 60 - 30.0 + 0.6, 1.0);
    const double base = height_residual(Pose(Rotation(), t), *dem);
    EXPECT_EQ(height_residual(Pose(oracle::random_pose(rng).rotation, t), *dem), base);
  }
}

TEST(NormalResidual, FlatIdentityIsZero) {
  EXPECT_LT(normal_residual(Pose(), *flat_dem()).norm(), 1e-15);
}

TEST(NormalResidual, PitchOnFlatGround) {
  const double ten = 10.0 * kPi / 180.0;
  const Vector3 r = normal_residual(tilted(Vector3::UnitY(), ten), *flat_dem());
  EXPECT_NEAR(r.norm(), ten, 1e-9);
  EXPECT_LT((r.normalized() - Vector3::UnitY()).norm(), 1e-9);
}

TEST(NormalResidual, AlignedWithSlope) {
  const Vector3 n = Vector3(-1, 0, 1) / std::sqrt(2.0);
  const Pose p(rot_from_normal(n), Vector3(3.3, -7.1, 3.3));
  EXPECT_LT(normal_residual(p, *affine_dem(1, 0, 0)).norm(), 1e-9);
}

TEST(NormalResidual, YawAboutBodyZLeavesTiltUnchanged) {
  const auto dem = affine_dem(0.4, -0.3, 0);
  const Vector3 n = dem->normal_at(2, 2);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-kPi + 0.01, kPi - 0.01);
  for (int k = 0; k < 50; ++k) {
    const Pose p(rot_from_normal(n) * Rotation::about_axis(Vector3::UnitZ(), u(rng)), Vector3(2, 2, 0));
    const Vector3 r = normal_residual(p, *dem);
    // body z equals the DEM normal: both minimal rotations coincide
    EXPECT_LT(r.norm(), 1e-9);
  }
}

TEST(NoiseModel, Validation) {
  EXPECT_THROW(NoiseModel(Eigen::VectorXd::Constant(3, 0.0)), Error);
  EXPECT_THROW(NoiseModel::isotropic(2, -1.0), Error);
  EXPECT_THROW(NoiseModel::isotropic(2, std::numeric_limits<double>::infinity()), Error);
  const NoiseModel n = normal_noise(deg_to_rad(2.0));
  EXPECT_DOUBLE_EQ(n.sigmas()[0], deg_to_rad(2.0));
  EXPECT_DOUBLE_EQ(n.sigmas()[2], 1e3);
}

TEST(Factor, ConstructionValidation) {
  EXPECT_THROW(Factor::odometry(0, 1, Pose(), NoiseModel::isotropic(3, 1.0)), Error);
  EXPECT_THROW(Factor::odometry(2, 2, Pose(), NoiseModel::isotropic(6, 1.0)), Error);
  EXPECT_THROW(Factor::dem_height(0, nullptr, 0.5), Error);
  EXPECT_THROW(Factor::prior(-1, Pose(), NoiseModel::isotropic(6, 1.0)), Error);
  for (FactorKind k : kAllFactorKinds) EXPECT_EQ(factor_kind_from_string(to_string(k)), k);
}

TEST(Factor, WeightedCostWhitens) {
  const auto dem = flat_dem();
  const Factor f = Factor::dem_height(0, dem, 0.5);
  const std::vector<Pose> poses{Pose::from_translation(1, 1, 2.0)};
  EXPECT_DOUBLE_EQ(weighted_cost(f, poses), 16.0);
}

TEST(Jacobian, HeightOnFlatDem) {
  const Factor f = Factor::dem_height(0, flat_dem(), 0.5);
  const Eigen::MatrixXd j = factor_jacobian(f, std::vector<Pose>{Pose::from_translation(1.3, 2.2, 0.4)});
  Eigen::RowVectorXd expected(6);
  expected << 0, 0, 1, 0, 0, 0;
  EXPECT_LT((j - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Jacobian, OdometryAtConsistentPosesIsIdentityForJ) {
  std::mt19937_64 rng(5);
  const Pose ti = oracle::random_pose(rng);
  const Pose m = oracle::random_pose(rng, 1.0);
  const Factor f = Factor::odometry(0, 1, m, NoiseModel::isotropic(6, 1.0));
  const Eigen::MatrixXd j = factor_jacobian(f, std::vector<Pose>{ti, ti * m});
  EXPECT_LT((j.rightCols<6>() - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-9);
}

class JacobianSuite : public ::testing::TestWithParam<FactorKind> {};

TEST_P(JacobianSuite, MatchesFiniteDifferences) {
  const FactorKind kind = GetParam();
  std::mt19937_64 rng(100 + static_cast<int>(kind));
  const auto dem = smooth_dem();
  std::uniform_real_distribution<double> xy(-40, 40);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    std::vector<Pose> poses;
    std::optional<Factor> f;
    switch (kind) {
      case FactorKind::kPrior:
        poses = {oracle::random_pose(rng, 2.5)};
        // error kept below pi
        f = Factor::prior(0, poses[0] * exp_se3(oracle::random_twist(rng, 2.5)), NoiseModel::isotropic(6, 1));
        break;
      case FactorKind::kOdometry:
      case FactorKind::kLoopClosure: {
        const Pose ti = oracle::random_pose(rng);
        const Pose m = oracle::random_pose(rng, 1.0);
        const Pose tj = ti * m * exp_se3(oracle::random_twist(rng, 1.5, 1.0));
        poses = {ti, tj};
        f = kind == FactorKind::kOdometry ? Factor::odometry(0, 1, m, NoiseModel::isotropic(6, 1))
                                          : Factor::loop_closure(0, 1, m, NoiseModel::isotropic(6, 1));
        break;
      }
      case FactorKind::kDemHeight:
      case FactorKind::kDemNormal: {
        // Avoid the stencil seams, where the surface is only C0.
        double x = xy(rng), y = xy(rng);
        x = std::floor(x * 2) / 2 + 0.25;
        y = std::floor(y * 2) / 2 + 0.25;
        const Vector3 t(x, y, 3.0 * (xy(rng) / 40));
        poses = {Pose(oracle::random_pose(rng, 1.2).rotation, t)};
        f = kind == FactorKind::kDemHeight ? Factor::dem_height(0, dem, 0.5)
                                           : Factor::dem_normal(0, dem, normal_noise(0.03));
        break;
      }
    }
    std::vector<int> which(static_cast<std::size_t>(f->arity()));
    for (int a = 0; a < f->arity(); ++a) which[static_cast<std::size_t>(a)] = f->node(a);
    const Eigen::MatrixXd numeric = oracle::numeric_jacobian(
        [&](const std::vector<Pose>& p) { return evaluate(*f, p); }, poses, which);
    const Eigen::MatrixXd analytic = factor_jacobian(*f, poses);
    ASSERT_EQ(analytic.rows(), numeric.rows());
    ASSERT_EQ(analytic.cols(), numeric.cols());
    worst = std::max(worst, oracle::relative_error(analytic, numeric));
  }
  EXPECT_LT(worst, 1e-5) << to_string(kind);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, JacobianSuite, ::testing::ValuesIn(kAllFactorKinds),
                         [](const auto& info) {
                           std::string s(to_string(info.param));
                           s.erase(std::remove(s.begin(), s.end(), '_'), s.end());
                           return s;
                         });
