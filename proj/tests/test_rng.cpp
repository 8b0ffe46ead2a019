#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "condflow/rng.hpp"

using namespace condflow;

TEST(Philox, KnownAnswerZero) {
  auto out = Philox4x32::apply({0, 0, 0, 0}, {0, 0});
  Philox4x32::Counter want{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u};
  EXPECT_EQ(out, want);
}

TEST(Philox, KnownAnswerOnes) {
  auto out = Philox4x32::apply({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  Philox4x32::Counter want{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu};
  EXPECT_EQ(out, want);
}

TEST(Philox, KnownAnswerPi) {
  auto out = Philox4x32::apply({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  Philox4x32::Counter want{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u};
  EXPECT_EQ(out, want);
}

TEST(RngStream, Deterministic) {
  RngStream a(42, 7), b(42, 7);
  for (std::uint32_t i = 0; i < 50; ++i) EXPECT_EQ(a.normal(i, 3), b.normal(i, 3));
}

TEST(RngStream, RolesDiffer) {
  auto c = RngStream::for_role(1, 0, StreamRole::kCommonNoise);
  auto d = RngStream::for_role(1, 0, StreamRole::kIdiosyncratic);
  auto e = RngStream::for_role(1, 1, StreamRole::kCommonNoise);
  int same_cd = 0, same_ce = 0;
  for (std::uint32_t i = 0; i < 100; ++i) {
    same_cd += c.normal(i, 0) == d.normal(i, 0);
    same_ce += c.normal(i, 0) == e.normal(i, 0);
  }
  EXPECT_EQ(same_cd, 0);
  EXPECT_EQ(same_ce, 0);
}

TEST(RngStream, NormalMoments) {
  RngStream s(2024, 0);
  const std::size_t n = 200000;
  double sum = 0, sum2 = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    double z = s.normal(i, 0);
    sum += z;
    sum2 += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(double(n)));
  EXPECT_NEAR(sum2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(RngStream, UniformsInUnitInterval) {
  RngStream s(5, 1);
  std::vector<double> u(1000);
  s.uniforms(3, 9, u);
  double mean = 0;
  for (double x : u) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
    mean += x / u.size();
  }
  EXPECT_NEAR(mean, 0.5, 4 * std::sqrt(1.0 / 12 / u.size()));
}

TEST(RngStream, BatchMatchesScalarAddress) {
  RngStream s(9, 2);
  std::vector<double> z(8);
  s.normals(4, 5, z);
  std::vector<double> again(8);
  s.normals(4, 5, again);
  EXPECT_EQ(z, again);
}
