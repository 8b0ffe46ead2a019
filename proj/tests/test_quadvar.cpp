#include <gtest/gtest.h>

#include <cmath>

#include "condflow/quadvar.hpp"
#include "condflow/rng.hpp"

using namespace condflow;

namespace {

SamplePath line_path(std::size_t n) {
  auto p = make_uniform_partition(1.0, n);
  Eigen::MatrixXd v(1, n + 1);
  for (std::size_t k = 0; k <= n; ++k) v(0, k) = p.time(k);
  return SamplePath(p, v);
}

SamplePath constant_path(std::size_t n, double c) {
  return SamplePath(make_uniform_partition(1.0, n), Eigen::MatrixXd::Constant(1, n + 1, c));
}

Eigen::MatrixXd scalar(double c) { return Eigen::MatrixXd::Constant(1, 1, c); }

}  // namespace

TEST(Increments, TruncatedCell) {
  auto y = line_path(2);
  auto table = increments(y, y.partition(), 0.75);
  ASSERT_EQ(table.increments.cols(), 2);
  EXPECT_DOUBLE_EQ(table.increments(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(table.partition.horizon(), 0.75);
}

TEST(Increments, BoundaryAndConstant) {
  auto y = line_path(4);
  auto table = increments(y, y.partition(), 0.5);
  ASSERT_EQ(table.increments.cols(), 2);
  EXPECT_DOUBLE_EQ(table.increments(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(table.increments(0, 1), 0.25);
  auto c = constant_path(4, 3.0);
  EXPECT_EQ(increments(c, c.partition(), 0.9).increments.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(increments(y, y.partition(), 1.5), std::invalid_argument);
}

TEST(TotalVariation, Examples) {
  EXPECT_NEAR(total_variation(line_path(16)), 1.0, 1e-15);
  Eigen::MatrixXd tri(1, 3);
  tri << 0, 1, 0;
  EXPECT_DOUBLE_EQ(total_variation(SamplePath(make_uniform_partition(1.0, 2), tri)), 2.0);
  EXPECT_EQ(total_variation(constant_path(5, 2.0)), 0.0);
}

TEST(RealizedQv, LineAndConstant) {
  EXPECT_NEAR(realized_qv(line_path(8))(0, 0), 1.0 / 8, 1e-15);
  EXPECT_EQ(realized_qv(constant_path(8, 1.0))(0, 0), 0.0);
}

TEST(RealizedQv, BrownianNearHorizon) {
  const std::size_t n = 1 << 14;
  auto w = simulate_brownian(make_uniform_partition(1.0, n), 1, RngStream(11, 0));
  EXPECT_NEAR(realized_qv(w)(0, 0), 1.0, 3 * std::sqrt(2.0 / n));
}

TEST(WeightedQv, ReductionAndLinearity) {
  auto p = make_uniform_partition(1.0, 256);
  auto w = simulate_brownian(p, 1, RngStream(1, 0));
  auto one = WeightProcess::constant(p, scalar(1.0));
  auto three = WeightProcess::constant(p, scalar(3.0));
  double qv = realized_qv(w)(0, 0);
  EXPECT_NEAR(weighted_qv_sum(one, w, p), qv, 1e-13);
  EXPECT_NEAR(weighted_qv_sum(three, w, p), 3 * qv, 1e-12);

  auto h1 = WeightProcess::sample(p, [](double t) { return scalar(t); });
  auto h2 = WeightProcess::sample(p, [](double t) { return scalar(std::cos(t)); });
  auto h12 = WeightProcess::sample(p, [](double t) { return scalar(2 * t - std::cos(t)); });
  EXPECT_NEAR(weighted_qv_sum(h12, w, p), 2 * weighted_qv_sum(h1, w, p) - weighted_qv_sum(h2, w, p), 1e-12);
}

TEST(WeightedQv, Bilinear) {
  auto p = make_uniform_partition(1.0, 64);
  auto x = simulate_brownian(p, 1, RngStream(2, 0));
  auto y = simulate_brownian(p, 1, RngStream(3, 0));
  auto z = simulate_brownian(p, 1, RngStream(4, 0));
  SamplePath sum(p, 2.0 * x.values() + z.values());
  auto h = WeightProcess::sample(p, [](double t) { return scalar(1 + t); });
  double lhs = weighted_qv_sum(h, sum, &y, p);
  double rhs = 2 * weighted_qv_sum(h, x, &y, p) + weighted_qv_sum(h, z, &y, p);
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(WeightedQv, IndependentCrossVanishes) {
  const std::size_t n = 1 << 14;
  auto p = make_uniform_partition(1.0, n);
  auto x = simulate_brownian(p, 1, RngStream(5, 0));
  auto y = simulate_brownian(p, 1, RngStream(6, 0));
  auto one = WeightProcess::constant(p, scalar(1.0));
  EXPECT_LT(std::abs(weighted_qv_sum(one, x, &y, p)), 3 * std::sqrt(1.0 / n));
}

TEST(WeightedQv, PartitionMismatchThrows) {
  auto x = simulate_brownian(make_uniform_partition(1.0, 8), 1, RngStream(1, 0));
  auto h = WeightProcess::constant(make_uniform_partition(1.0, 4), scalar(1.0));
  EXPECT_THROW(weighted_qv_sum(h, x, make_uniform_partition(1.0, 8)), std::invalid_argument);
}

TEST(MixedQv, CauchySchwarzBound) {
  auto p = make_uniform_partition(1.0, 128);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto w = simulate_brownian(p, 1, RngStream(seed, 0));
    Eigen::MatrixXd a(1, p.size());
    for (std::size_t k = 0; k < p.size(); ++k) a(0, k) = std::sin(3 * p.time(k)) + 0.5 * p.time(k);
    SamplePath x(p, a + w.values(), Decomposition{a, w.values()});
    auto h = WeightProcess::sample(p, [](double t) { return scalar(std::cos(5 * t)); });
    double mixed = mixed_qv_sum(h, x, p);
    double qa = realized_qv(SamplePath(p, a))(0, 0);
    double qm = realized_qv(w)(0, 0);
    EXPECT_LE(std::abs(mixed), h.sup_norm() * std::sqrt(qa * qm) + 1e-15);
  }
}

TEST(Lemma, PureDriftErrorIsTSquaredOverN) {
  auto study = lemma_convergence_study(lemma_pure_drift(), {4, 16, 64}, 3, 1);
  ASSERT_EQ(study.rows.size(), 3u);
  EXPECT_NEAR(study.rows[0].mean_abs_error, 1.0 / 4, 1e-14);
  EXPECT_NEAR(study.rows[2].mean_abs_error, 1.0 / 64, 1e-14);
}

TEST(Lemma, SingleRowHasNoTrendFlag) {
  auto study = lemma_convergence_study(lemma_brownian(1.0, "one"), {64}, 10, 1);
  ASSERT_EQ(study.rows.size(), 1u);
  EXPECT_FALSE(study.rows[0].ratio.has_value());
  EXPECT_TRUE(study.trend_ok());
}

TEST(Lemma, WeightTLimitOneHalf) {
  auto inst = lemma_brownian(1.0, "t");
  auto p = make_uniform_partition(1.0, 4096);
  double mean = 0, mean2 = 0;
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    auto x = inst.simulate(p, RngStream(s, 0));
    auto h = WeightProcess::sample(p, inst.weight);
    double v = weighted_qv_sum(h, x, p);
    EXPECT_NEAR(inst.limit(x), 0.5, 1e-12);
    mean += v / seeds;
    mean2 += v * v / seeds;
  }
  double se = std::sqrt((mean2 - mean * mean) / seeds);
  EXPECT_LT(std::abs(mean - 0.5), 3 * se + 1e-3);
}

TEST(Lemma, RatioBand) {
  auto [lo, hi] = ratio_band(4.0);
  EXPECT_DOUBLE_EQ(lo, 1.3);
  EXPECT_DOUBLE_EQ(hi, 3.0);
}
