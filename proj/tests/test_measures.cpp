#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "condflow/errors.hpp"
#include "condflow/measures.hpp"

using namespace condflow;

namespace {

Eigen::VectorXd pt(double x) { return Eigen::VectorXd::Constant(1, x); }

const std::vector<double> kEps{1e-1, 1e-2, 1e-3, 1e-4};

}  // namespace

TEST(Empirical, Examples) {
  EXPECT_DOUBLE_EQ(empirical({1, 2, 3}).mean()(0), 2.0);
  auto dirac = empirical({5});
  EXPECT_EQ(dirac.size(), 1u);
  EXPECT_DOUBLE_EQ(dirac.mean()(0), 5.0);
  auto doubled = empirical({0, 0});
  EXPECT_EQ(doubled.covariance()(0, 0), 0.0);
  EXPECT_THROW(empirical(std::vector<double>{}), std::invalid_argument);
}

TEST(W2, Examples) {
  EXPECT_DOUBLE_EQ(w2_squared(empirical({0}), empirical({1})), 1.0);
  EXPECT_EQ(w2_squared(empirical({0.3, -1, 2}), empirical({2, 0.3, -1})), 0.0);
  EXPECT_DOUBLE_EQ(w2_squared(empirical({0, 2}), empirical({1, 3})), 1.0);
}

TEST(W2, MatchesEnumerationInTwoDimensions) {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 0, 2, 0, 0;
  b << 3, 1, 0, 0;
  EXPECT_DOUBLE_EQ(w2_squared(empirical(a), empirical(b)), 1.0);
  Eigen::MatrixXd c(2, 3);
  c.setZero();
  EXPECT_THROW(w2_squared(empirical(a), empirical(c)), Unsupported);
}

TEST(W2, MetricProperties) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(5), y(7), w(4);
    for (auto& v : x) v = z(gen);
    for (auto& v : y) v = 2 * z(gen) + 1;
    for (auto& v : w) v = z(gen) - 1;
    auto mx = empirical(x), my = empirical(y), mw = empirical(w);
    EXPECT_EQ(w2_squared(mx, my), w2_squared(my, mx));
    double dxy = std::sqrt(w2_squared(mx, my));
    double dxw = std::sqrt(w2_squared(mx, mw));
    double dwy = std::sqrt(w2_squared(mw, my));
    EXPECT_LE(dxy, dxw + dwy + 1e-12);
    EXPECT_EQ(w2_squared(mx, mx), 0.0);
  }
}

TEST(Eval, Examples) {
  auto m = empirical({1, 2, 3});
  EXPECT_DOUBLE_EQ(eval(builtin_functional("mean"), m), 2.0);
  EXPECT_DOUBLE_EQ(eval(builtin_functional("mean-squared"), m), 4.0);
  EXPECT_DOUBLE_EQ(eval(builtin_functional("second-moment"), empirical({0, 2})), 2.0);
  EXPECT_THROW(eval(builtin_functional("second-moment"), empirical({1e200})), NumericOverflow);
}

TEST(Derivatives, Mean) {
  auto u = builtin_functional("mean");
  auto m = empirical({1, 4});
  EXPECT_DOUBLE_EQ(d_lions(u, m, pt(0.3))(0), 1.0);
  EXPECT_DOUBLE_EQ(delta_m2(u, m, pt(0.3), pt(-2)), 0.0);
  EXPECT_DOUBLE_EQ(dm2_cross(u, m, pt(0.3), pt(-2))(0, 0), 0.0);
}

TEST(Derivatives, MeanSquared) {
  auto u = builtin_functional("mean-squared");
  auto m = empirical({1, 4});
  EXPECT_DOUBLE_EQ(d_lions(u, m, pt(7))(0), 5.0);
  EXPECT_DOUBLE_EQ(dm2_cross(u, m, pt(7), pt(-1))(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(d2x_dm(u, m, pt(7))(0, 0), 0.0);
}

TEST(Derivatives, SecondMoment) {
  auto u = builtin_functional("second-moment");
  auto m = empirical({1, 4});
  EXPECT_DOUBLE_EQ(d_lions(u, m, pt(1.5))(0), 3.0);
  EXPECT_DOUBLE_EQ(d2x_dm(u, m, pt(1.5))(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(dm2_cross(u, m, pt(1.5), pt(2))(0, 0), 0.0);
}

TEST(Derivatives, SliceAgreesWithFreeFunctions) {
  auto u = builtin_functional("cosine-of-mean");
  auto m = empirical({0.2, -0.4, 1.1});
  auto s = u.slice(m);
  EXPECT_DOUBLE_EQ(s.value(), eval(u, m));
  EXPECT_DOUBLE_EQ(s.d_lions(pt(0.5))(0), d_lions(u, m, pt(0.5))(0));
  EXPECT_DOUBLE_EQ(s.dm2(pt(0.5), pt(0.1)), delta_m2(u, m, pt(0.5), pt(0.1)));
}

TEST(FdCheck, MeanIsExact) {
  auto t = fd_check_dm(builtin_functional("mean"), empirical({0, 1}), empirical({2, 5}), kEps);
  for (const auto& r : t.rows) EXPECT_LT(r.error, 1e-12);
}

TEST(FdCheck, MeanSquaredOrderOne) {
  auto t = fd_check_dm(builtin_functional("mean-squared"), empirical({0}), empirical({1}), kEps);
  ASSERT_EQ(t.rows.size(), kEps.size());
  for (const auto& r : t.rows) EXPECT_NEAR(r.error, r.eps, 1e-10);
  EXPECT_NEAR(*t.rows[1].order, 1.0, 1e-4);
  EXPECT_TRUE(t.passes());
}

TEST(FdCheck, IdenticalPairIsZero) {
  auto m = empirical({0.5, -1});
  for (const auto& name : builtin_functional_names()) {
    auto t = fd_check_dm(builtin_functional(name), m, m, kEps);
    for (const auto& r : t.rows) EXPECT_EQ(r.error, 0.0) << name;
  }
}

TEST(FdCheck, SecondOrder) {
  auto exact = fd_check_dm2(builtin_functional("mean-squared"), empirical({0, 1}), empirical({3}), kEps);
  for (const auto& r : exact.rows) EXPECT_LT(r.error, 1e-9);
  auto sq = fd_check_dm2(builtin_functional("second-moment-squared"), empirical({0, 1}), empirical({2, -1}), kEps);
  EXPECT_TRUE(sq.passes());
  EXPECT_GT(sq.rows.front().error, 0.0);
}

TEST(Mixture, EndpointsExact) {
  auto m = empirical({0.1, 0.7, -2});
  auto mp = empirical({3, 1});
  for (const auto& name : builtin_functional_names()) {
    auto u = builtin_functional(name);
    EXPECT_EQ(eval(u, mixture(m, mp, 0.0)), eval(u, m)) << name;
    EXPECT_EQ(eval(u, mixture(m, mp, 1.0)), eval(u, mp)) << name;
  }
}

TEST(Identities, IntegralForm) {
  auto m = empirical({0.1, 0.7, -2});
  auto mp = empirical({3, 1});
  for (const auto& name : builtin_functional_names()) {
    auto u = builtin_functional(name);
    EXPECT_LT(integral_identity_gap(u, m, mp), 1e-10) << name;
    EXPECT_LT(integral_identity_gap2(u, m, mp, pt(0.4)), 1e-10) << name;
  }
}

TEST(Identities, SecondDerivativeSymmetric) {
  auto m = empirical({0.1, 0.7, -2});
  for (const auto& name : builtin_functional_names()) {
    auto u = builtin_functional(name);
    EXPECT_NEAR(delta_m2(u, m, pt(0.3), pt(-1.2)), delta_m2(u, m, pt(-1.2), pt(0.3)), 1e-14) << name;
  }
}

TEST(Identities, LinearCombination) {
  auto u = builtin_functional("mean-squared");
  auto w = builtin_functional("variance");
  auto c = linear_combination(2.0, u, -0.5, w);
  auto m = empirical({0.1, 0.7, -2});
  EXPECT_NEAR(eval(c, m), 2 * eval(u, m) - 0.5 * eval(w, m), 1e-14);
  EXPECT_NEAR(d_lions(c, m, pt(0.2))(0), 2 * d_lions(u, m, pt(0.2))(0) - 0.5 * d_lions(w, m, pt(0.2))(0), 1e-14);
}

TEST(Surrogate, GaussHermiteMoments) {
  auto g = gaussian_surrogate(0.3, 2.0);
  EXPECT_NEAR(g.mean()(0), 0.3, 1e-13);
  EXPECT_NEAR(g.covariance()(0, 0), 2.0, 1e-12);
  auto [x, w] = gauss_hermite_normal(8);
  EXPECT_NEAR(w.sum(), 1.0, 1e-14);
  EXPECT_NEAR((w.array() * x.array().pow(4)).sum(), 3.0, 1e-12);
}
