#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "condflow/paths.hpp"
#include "condflow/rng.hpp"

using namespace condflow;

TEST(Partition, UniformExamples) {
  auto p = make_uniform_partition(1.0, 2);
  EXPECT_EQ(std::vector<double>(p.times().begin(), p.times().end()), (std::vector<double>{0, 0.5, 1.0}));
  EXPECT_DOUBLE_EQ(p.mesh(), 0.5);

  auto q = make_uniform_partition(1.0, 1);
  EXPECT_EQ(q.size(), 2u);
  EXPECT_DOUBLE_EQ(q.mesh(), 1.0);

  auto r = make_uniform_partition(2.0, 4);
  EXPECT_EQ(std::vector<double>(r.times().begin(), r.times().end()), (std::vector<double>{0, 0.5, 1.0, 1.5, 2.0}));
  EXPECT_DOUBLE_EQ(r.mesh(), 0.5);
}

TEST(Partition, RejectsBadInput) {
  EXPECT_THROW(make_uniform_partition(0.0, 2), std::invalid_argument);
  EXPECT_THROW(make_uniform_partition(1.0, 0), std::invalid_argument);
  EXPECT_THROW(Partition(std::vector<double>{0.0, 0.5, 0.5}), std::invalid_argument);
}

TEST(Partition, Embedding) {
  auto fine = make_uniform_partition(1.0, 8);
  auto coarse = make_uniform_partition(1.0, 2);
  EXPECT_TRUE(fine.refines(coarse));
  EXPECT_EQ(fine.embed(coarse), (std::vector<std::size_t>{0, 4, 8}));
  EXPECT_FALSE(coarse.refines(fine));
}

TEST(Brownian, TerminalMoments) {
  auto p = make_uniform_partition(1.0, 4);
  const std::size_t seeds = 100000;
  double sum = 0, sum2 = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    auto w = simulate_brownian(p, 1, RngStream(s, 0));
    double x = w.terminal()(0);
    sum += x;
    sum2 += x * x;
  }
  double mean = sum / seeds;
  double var = sum2 / seeds - mean * mean;
  EXPECT_LT(std::abs(mean), 4 * std::sqrt(1.0 / seeds));
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Brownian, Deterministic) {
  auto p = make_uniform_partition(1.0, 16);
  auto a = simulate_brownian(p, 2, RngStream(3, 1));
  auto b = simulate_brownian(p, 2, RngStream(3, 1));
  EXPECT_TRUE(a.values() == b.values());
  EXPECT_EQ(a.values().col(0).norm(), 0.0);
  EXPECT_LT(a.decomposition_defect(), 1e-15);
}

TEST(Factor, PureDriftReachesOne) {
  auto p = make_uniform_partition(1.0, 10);
  auto coeffs = SdeCoefficients::scalar(0, 0, 0).with_scalar_factor(1.0, 0.0, 0.0);
  auto w0 = simulate_brownian(p, 1, RngStream(1, 1));
  auto y = simulate_factor(coeffs, Eigen::VectorXd::Zero(1), p, w0, RngStream(1, 3));
  EXPECT_NEAR(y.terminal()(0), 1.0, 1e-14);
  EXPECT_LT(y.decomposition_defect(), 1e-14);
}

TEST(Factor, CopiesCommonPath) {
  auto p = make_uniform_partition(1.0, 32);
  auto coeffs = SdeCoefficients::scalar(0, 0, 0).with_scalar_factor(0.0, 0.0, 1.0);
  auto w0 = simulate_brownian(p, 1, RngStream(4, 1));
  Eigen::VectorXd y0 = Eigen::VectorXd::Constant(1, 0.7);
  auto y = simulate_factor(coeffs, y0, p, w0, RngStream(4, 3));
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(y.value(k)(0), 0.7 + w0.value(k)(0), 1e-14);
}

TEST(Factor, IndependentDriverVariance) {
  auto p = make_uniform_partition(1.0, 4);
  auto coeffs = SdeCoefficients::scalar(0, 0, 0).with_scalar_factor(0.0, 1.0, 0.0);
  const std::size_t seeds = 100000;
  double sum = 0, sum2 = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    auto w0 = simulate_brownian(p, 1, RngStream(s, 1));
    auto y = simulate_factor(coeffs, Eigen::VectorXd::Zero(1), p, w0, RngStream(s, 3));
    double v = y.terminal()(0);
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / seeds;
  EXPECT_NEAR(sum2 / seeds - mean * mean, 1.0, 0.05);
}

TEST(Factor, PartitionMismatchThrows) {
  auto coeffs = SdeCoefficients::scalar(0, 0, 0).with_scalar_factor(0.0, 0.0, 1.0);
  auto w0 = simulate_brownian(make_uniform_partition(1.0, 8), 1, RngStream(1, 1));
  EXPECT_THROW(simulate_factor(coeffs, Eigen::VectorXd::Zero(1), make_uniform_partition(1.0, 4), w0, RngStream(1, 3)),
               std::invalid_argument);
}

TEST(SamplePath, ValueAtInterpolates) {
  auto p = make_uniform_partition(1.0, 2);
  Eigen::MatrixXd v(1, 3);
  v << 0, 1, 0;
  SamplePath path(p, v);
  EXPECT_DOUBLE_EQ(path.value_at(0.25)(0), 0.5);
  EXPECT_DOUBLE_EQ(path.value_at(1.0)(0), 0.0);
}

TEST(SamplePath, DecompositionDefect) {
  auto p = make_uniform_partition(1.0, 2);
  Eigen::MatrixXd v(1, 3), a(1, 3), m(1, 3);
  v << 1, 2, 3.5;
  a << 0, 0.5, 1.0;
  m << 0, 0.5, 1.5;
  SamplePath path(p, v, Decomposition{a, m});
  EXPECT_EQ(path.decomposition_defect(), 0.0);
  v(0, 2) = 4;
  EXPECT_THROW(SamplePath(p, v, Decomposition{a, m}), std::invalid_argument);
  m(0, 0) = 0.1;
  EXPECT_THROW(SamplePath(p, v, Decomposition{a, m}), std::invalid_argument);
}
