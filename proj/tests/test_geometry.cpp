#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "demslam/error.hpp"
#include "demslam/geometry.hpp"
#include "oracles.hpp"

using namespace demslam;
using oracle::Vec6;

namespace {

constexpr double kPi = std::numbers::pi;

Twist twist(double a, double b, double c, double d, double e, double f) {
  Twist xi;
  xi << a, b, c, d, e, f;
  return xi;
}

void expect_pose_near(const Pose& a, const Pose& b, double tol) {
  EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(a), oracle::to_mat(b)), tol);
}

}  // namespace

TEST(ExpSe3, ZeroIsIdentity) {
  expect_pose_near(exp_se3(Twist::Zero()), Pose::identity(), 1e-15);
}

TEST(ExpSe3, PureTranslation) {
  const Pose p = exp_se3(twist(1, 2, 3, 0, 0, 0));
  EXPECT_NEAR(p.rotation.angle(), 0.0, 1e-15);
  EXPECT_TRUE(p.translation.isApprox(Vector3(1, 2, 3), 1e-15));
}

TEST(ExpSe3, QuarterTurnAboutZ) {
  const Pose p = exp_se3(twist(0, 0, 0, 0, 0, kPi / 2));
  const Matrix3 expected = oracle::rodrigues(Vector3::UnitZ(), kPi / 2);
  EXPECT_LT((p.rotation.matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((p.rotation * Vector3::UnitX() - Vector3::UnitY()).norm(), 1e-12);
  EXPECT_LT(p.translation.norm(), 1e-15);
}

TEST(ExpSe3, MatchesSeriesExponential) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 500; ++k) {
    const Vec6 xi = oracle::random_twist(rng, 3.0);
    EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(exp_se3(xi)), oracle::exp_twist(xi)), 1e-10)
        << "case " << k;
  }
}

TEST(ExpSe3, SmallAngleBranchMatchesSeries) {
  std::mt19937_64 rng(12);
  for (double scale : {1e-12, 1e-9, 5e-9, 2e-8, 1e-6}) {
    for (int k = 0; k < 20; ++k) {
      Vec6 xi = oracle::random_twist(rng, 1.0);
      xi.tail<3>() = xi.tail<3>().normalized() * scale;
      EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(exp_se3(xi)), oracle::exp_twist(xi)), 1e-14);
    }
  }
}

TEST(LogSe3, IdentityAndTranslation) {
  EXPECT_EQ(log_se3(Pose::identity()).norm(), 0.0);
  EXPECT_LT((log_se3(Pose::from_translation(1, 2, 3)) - twist(1, 2, 3, 0, 0, 0)).norm(), 1e-15);
}

TEST(LogSe3, RoundTripRandomTwists) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 200; ++k) {
    const Vec6 xi = oracle::random_twist(rng, 3.0);
    EXPECT_LT((log_se3(exp_se3(xi)) - xi).cwiseAbs().maxCoeff(), 1e-9) << "case " << k;
  }
}

TEST(LogSe3, ExpOfLogRecoversPose) {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 200; ++k) {
    const Pose t = oracle::random_pose(rng, 3.0);
    expect_pose_near(exp_se3(log_se3(t)), t, 1e-9);
  }
}

TEST(LogSe3, NearPiThrows) {
  const Pose half_turn(Rotation::about_axis(Vector3::UnitX(), kPi - 1e-7), Vector3::Zero());
  try {
    (void)log_se3(half_turn);
    FAIL() << "expected AngleNearPi";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAngleNearPi);
  }
  EXPECT_NO_THROW((void)log_se3(Pose(Rotation::about_axis(Vector3::UnitX(), kPi - 1e-5), Vector3::Zero())));
}

TEST(So3, ExpMatchesRodrigues) {
  std::mt19937_64 rng(15);
  for (int k = 0; k < 100; ++k) {
    const Vec6 xi = oracle::random_twist(rng, 3.0);
    const Vector3 phi = xi.tail<3>();
    const Matrix3 expected = oracle::rodrigues(phi, phi.norm());
    EXPECT_LT((so3_exp(phi).matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(So3, JacobianInversesAreInverses) {
  std::mt19937_64 rng(16);
  for (double max_angle : {1e-9, 1e-3, 0.04, 0.06, 1.0, 3.0}) {
    for (int k = 0; k < 20; ++k) {
      const Vector3 phi = oracle::random_twist(rng, max_angle).tail<3>();
      const Matrix3 prod = so3_left_jacobian(phi) * so3_left_jacobian_inverse(phi);
      EXPECT_LT((prod - Matrix3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Se3, RightJacobianInverseMatchesFiniteDifferences) {
  // log(exp(xi) exp(d)) ~= xi + Jr^-1(xi) d.
  std::mt19937_64 rng(17);
  for (double max_angle : {1e-6, 0.03, 0.07, 1.0, 2.5}) {
    for (int k = 0; k < 10; ++k) {
      const Vec6 xi = oracle::random_twist(rng, max_angle, 2.0);
      Matrix6 numeric;
      const double h = 1e-6;
      for (int c = 0; c < 6; ++c) {
        Vec6 d = Vec6::Zero();
        d[c] = h;
        const Vec6 plus = log_se3(oracle::from_mat(oracle::exp_twist(xi) * oracle::exp_twist(d)));
        const Vec6 minus = log_se3(oracle::from_mat(oracle::exp_twist(xi) * oracle::exp_twist(-d)));
        numeric.col(c) = (plus - minus) / (2 * h);
      }
      EXPECT_LT(oracle::relative_error(se3_right_jacobian_inverse(xi), numeric), 1e-6)
          << "angle scale " << max_angle;
    }
  }
}

TEST(Se3, AdjointTransportsTwists) {
  // T exp(xi) T^-1 = exp(Ad_T xi)
  std::mt19937_64 rng(18);
  for (int k = 0; k < 50; ++k) {
    const Pose t = oracle::random_pose(rng);
    const Vec6 xi = oracle::random_twist(rng, 1.0);
    const oracle::Mat4 lhs = oracle::to_mat(t) * oracle::exp_twist(xi) * oracle::inv(oracle::to_mat(t));
    const oracle::Mat4 rhs = oracle::exp_twist(adjoint(t) * xi);
    EXPECT_LT(oracle::max_abs_diff(lhs, rhs), 1e-10);
  }
}

TEST(Between, Basics) {
  std::mt19937_64 rng(19);
  const Pose t = oracle::random_pose(rng);
  expect_pose_near(between(t, t), Pose::identity(), 1e-12);
  expect_pose_near(between(Pose::identity(), t), t, 1e-15);
}

TEST(Between, CompositionRecoversTarget) {
  std::mt19937_64 rng(20);
  for (int k = 0; k < 200; ++k) {
    const Pose a = oracle::random_pose(rng);
    const Pose b = oracle::random_pose(rng);
    expect_pose_near(a * between(a, b), b, 1e-9);
  }
}

TEST(PoseInvariants, InverseComposesToIdentity) {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 200; ++k) {
    const Pose t = oracle::random_pose(rng);
    expect_pose_near(t * t.inverse(), Pose::identity(), 1e-9);
    expect_pose_near(t.inverse() * t, Pose::identity(), 1e-9);
  }
}

TEST(PoseInvariants, CompositionIsAssociative) {
  std::mt19937_64 rng(22);
  for (int k = 0; k < 100; ++k) {
    const Pose a = oracle::random_pose(rng), b = oracle::random_pose(rng), c = oracle::random_pose(rng);
    expect_pose_near((a * b) * c, a * (b * c), 1e-9);
  }
}

TEST(PoseInvariants, QuaternionNormPreservedOverLongChains) {
  std::mt19937_64 rng(23);
  Rotation r;
  for (int k = 0; k < 10000; ++k) {
    r = r * so3_exp(oracle::random_twist(rng, 3.0).tail<3>());
    ASSERT_NEAR(r.quaternion().norm(), 1.0, 1e-9);
  }
}

TEST(RotFromNormal, UpIsIdentity) {
  EXPECT_NEAR(rot_from_normal(Vector3::UnitZ()).angle(), 0.0, 1e-15);
}

TEST(RotFromNormal, HorizontalNormal) {
  const Rotation r = rot_from_normal(Vector3::UnitX());
  const Matrix3 expected = oracle::rodrigues(Vector3::UnitY(), kPi / 2);
  EXPECT_LT((r.matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RotFromNormal, FortyFiveDegrees) {
  const Vector3 n(0, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0));
  const Matrix3 expected = oracle::rodrigues(Vector3(-1, 0, 0), kPi / 4);
  EXPECT_LT((rot_from_normal(n).matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RotFromNormal, MapsZToNormalWithoutYaw) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 1000; ++k) {
    Vector3 n(u(rng), u(rng), u(rng));
    n.normalize();
    if (n.z() < -0.999) continue;
    const Rotation r = rot_from_normal(n);
    EXPECT_LT((r * Vector3::UnitZ() - n).norm(), 1e-9);
    EXPECT_LT(std::abs(so3_log(r).z()), 1e-9);
  }
}

TEST(RotFromNormal, Errors) {
  try {
    (void)rot_from_normal(-Vector3::UnitZ());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAntipodalNormal);
  }
  EXPECT_THROW((void)rot_from_normal(Vector3(0, 0, 2)), Error);
}
