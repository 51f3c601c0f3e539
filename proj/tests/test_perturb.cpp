#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "demslam/perturb.hpp"
#include "demslam/sim.hpp"

using namespace demslam;

namespace {

DemGrid affine(double a, double b, double c) {
  return DemGrid::sampled(0, 0, 1, 64, 64, [=](double x, double y) { return a * x + b * y + c; });
}

DemGrid rough(std::uint64_t seed = 5) {
  TerrainSpec spec;
  spec.n_rows = spec.n_cols = 96;
  spec.amplitude = 1.5;
  spec.correlation_length = 8;
  spec.seed = seed;
  return synthesize_terrain(spec);
}

// Mean product of values `lag` cells apart along rows, normalized by variance.
double autocorrelation(const std::vector<double>& f, int n_rows, int n_cols, int lag) {
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double var = 0;
  for (double v : f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(f.size());
  double acc = 0;
  int count = 0;
  for (int r = 0; r < n_rows; ++r) {
    for (int c = 0; c + lag < n_cols; ++c) {
      acc += (f[static_cast<std::size_t>(r * n_cols + c)] - mean) *
             (f[static_cast<std::size_t>(r * n_cols + c + lag)] - mean);
      ++count;
    }
  }
  return acc / count / var;
}

std::size_t checksum(const DemGrid& dem) {
  std::size_t h = 0;
  for (double v : dem.heights()) h = h * 1315423911u + std::hash<double>{}(v);
  return h ^ std::hash<double>{}(dem.origin_x()) ^ (std::hash<double>{}(dem.origin_y()) << 1);
}

}  // namespace

TEST(CorrelatedField, ZeroRmsIsZero) {
  for (double v : correlated_field(20, 30, 1.0, 0.0, 10.0, 1)) EXPECT_EQ(v, 0.0);
}

TEST(CorrelatedField, ExactMomentsAfterRescaling) {
  for (double rms : {0.5, 1.0, 2.0, 17.0}) {
    const auto f = correlated_field(80, 70, 1.0, rms, 10.0, 3);
    double mean = 0, ss = 0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(f.size());
    for (double v : f) ss += v * v;
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(f.size())), rms, 1e-12 * std::max(1.0, rms));
  }
}

TEST(CorrelatedField, AutocorrelationDecaysWithLag) {
  const int n = 200;
  const auto f = correlated_field(n, n, 1.0, 1.0, 10.0, 4);
  const double a10 = autocorrelation(f, n, n, 10);
  const double a50 = autocorrelation(f, n, n, 50);
  EXPECT_GT(a10, a50);
  EXPECT_GT(a10, 0.5);
}

TEST(CorrelatedField, DeterministicAndValidated) {
  EXPECT_EQ(correlated_field(30, 30, 0.5, 1.0, 4.0, 9), correlated_field(30, 30, 0.5, 1.0, 4.0, 9));
  EXPECT_NE(correlated_field(30, 30, 0.5, 1.0, 4.0, 9), correlated_field(30, 30, 0.5, 1.0, 4.0, 10));
  EXPECT_THROW(correlated_field(30, 30, 1.0, -1.0, 4.0, 9), Error);
  EXPECT_THROW(correlated_field(30, 30, 1.0, 1.0, 0.0, 9), Error);
}

TEST(ApplyPerturbation, VerticalBias) {
  const DemGrid dem = rough();
  const DemGrid up = apply_perturbation(dem, {VerticalBias{1.0}, 0});
  for (double x : {3.3, 40.1, 88.8}) {
    for (double y : {1.2, 50.5, 94.0}) {
      EXPECT_DOUBLE_EQ(up.height_at(x, y) - dem.height_at(x, y), 1.0);
      EXPECT_LT((up.normal_at(x, y) - dem.normal_at(x, y)).norm(), 1e-12);
    }
  }
}

TEST(ApplyPerturbation, HorizontalShiftOnAffine) {
  const DemGrid dem = affine(2, 0, 0);
  const DemGrid shifted = apply_perturbation(dem, {HorizontalShift{0.5, 0}, 0});
  for (double x : {1.0, 7.25, 30.5, 62.0}) {
    for (double y : {0.5, 33.0}) {
      EXPECT_NEAR(shifted.height_at(x, y) - dem.height_at(x, y), 1.0, 1e-12);
      EXPECT_NEAR(shifted.gradient_at(x, y).x(), 2.0, 1e-12);
    }
  }
}

TEST(ApplyPerturbation, CorrelatedNoiseDeterministic) {
  const DemGrid dem = rough();
  const PerturbationSpec spec{CorrelatedNoise{0.5, 10}, 77};
  const DemGrid a = apply_perturbation(dem, spec);
  EXPECT_EQ(a.heights(), apply_perturbation(dem, spec).heights());
  double ss = 0;
  for (std::size_t k = 0; k < a.heights().size(); ++k) {
    const double d = a.heights()[k] - dem.heights()[k];
    ss += d * d;
  }
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(a.heights().size())), 0.5, 1e-12);
}

TEST(ApplyPerturbation, NeverMutatesInput) {
  const DemGrid dem = rough();
  const std::size_t before = checksum(dem);
  (void)apply_perturbation(dem, {CorrelatedNoise{2.0, 10}, 1});
  (void)apply_perturbation(dem, {VerticalBias{-3}, 0});
  (void)apply_perturbation(dem, {HorizontalShift{1, 2}, 0});
  EXPECT_EQ(checksum(dem), before);
}

TEST(ApplyPerturbation, OppositeShiftsCancel) {
  const DemGrid dem = rough();
  const DemGrid back =
      apply_perturbation(apply_perturbation(dem, {HorizontalShift{1.7, -0.4}, 0}), {HorizontalShift{-1.7, 0.4}, 0});
  for (double x = 5.3; x < 90; x += 7.1) {
    for (double y = 4.9; y < 90; y += 6.3) {
      EXPECT_NEAR(back.height_at(x, y), dem.height_at(x, y), 1e-12);
    }
  }
}

TEST(PerturbationLabel, StudyLevels) {
  EXPECT_EQ(perturbation_label({CorrelatedNoise{0.5, 10}, 0}), "corr_noise_0.5");
  EXPECT_EQ(perturbation_label({CorrelatedNoise{1.0, 10}, 0}), "corr_noise_1");
  EXPECT_EQ(perturbation_label({CorrelatedNoise{2.0, 10}, 0}), "corr_noise_2");
  EXPECT_EQ(perturbation_label({VerticalBias{0.5}, 0}), "bias_+0.5");
  EXPECT_EQ(perturbation_label({VerticalBias{1.0}, 0}), "bias_+1");
  EXPECT_EQ(perturbation_label({HorizontalShift{0.5, 0}, 0}), "shift_x0.5");
  EXPECT_EQ(perturbation_label({HorizontalShift{2.0, 0}, 0}), "shift_x2");
  EXPECT_EQ(perturbation_label({HorizontalShift{1.0, 3.0}, 0}), "shift_x1_y3");
}
