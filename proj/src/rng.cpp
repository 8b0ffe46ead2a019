#include "condflow/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace condflow {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform strictly inside (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi >> 5) << 26) | (lo >> 6);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

Philox4x32::Counter Philox4x32::apply(Counter c, Key k) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

RngStream RngStream::for_role(std::uint64_t seed, std::uint32_t outer, StreamRole role) {
  if (outer >= (1u << 24)) {
    throw std::invalid_argument("RngStream: outer repetition index exceeds 2^24");
  }
  return RngStream(seed, (outer << 8) | static_cast<std::uint32_t>(role));
}

Philox4x32::Counter RngStream::block(std::uint32_t index, std::uint32_t step,
                                     std::uint32_t block) const {
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed_),
                            static_cast<std::uint32_t>(seed_ >> 32)};
  return Philox4x32::apply({stream_, index, step, block}, key);
}

void RngStream::uniforms(std::uint32_t index, std::uint32_t step, std::span<double> out) const {
  for (std::size_t j = 0; j < out.size(); j += 2) {
    const auto r = block(index, step, static_cast<std::uint32_t>(j / 2));
    out[j] = to_open_unit(r[0], r[1]);
    if (j + 1 < out.size()) out[j + 1] = to_open_unit(r[2], r[3]);
  }
}

void RngStream::normals(std::uint32_t index, std::uint32_t step, std::span<double> out) const {
  // Box-Muller on each Philox block: one block yields two normals.
  for (std::size_t j = 0; j < out.size(); j += 2) {
    const auto r = block(index, step, static_cast<std::uint32_t>(j / 2));
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[j] = radius * std::cos(angle);
    if (j + 1 < out.size()) out[j + 1] = radius * std::sin(angle);
  }
}

double RngStream::normal(std::uint32_t index, std::uint32_t step) const {
  double z;
  normals(index, step, std::span<double>(&z, 1));
  return z;
}

}  // namespace condflow
