#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace condflow {

/// Philox4x32-10 block cipher used as a counter-based generator.
/// Output is a pure function of (key, counter).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter apply(Counter counter, Key key);
};

/// Stream roles. A role together with an outer-path index selects a stream id,
/// so two different (outer, role) pairs never share draws.
enum class StreamRole : std::uint32_t {
  kUser = 0,
  kCommonNoise = 1,
  kIdiosyncratic = 2,
  kFactorNoise = 3,
  kInitialLaw = 4,
  kFieldDriver = 5,
};

/// Reproducible source of standard normals keyed by (seed, stream id).
///
/// Draws are addressed by (index, step, component): `index` is a particle or
/// path number and `step` a grid cell. Identical addresses give identical
/// draws; distinct stream ids give disjoint counter ranges.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint32_t stream) : seed_(seed), stream_(stream) {}

  /// Stream for `role` of outer repetition `outer` (at most 2^24 repetitions).
  static RngStream for_role(std::uint64_t seed, std::uint32_t outer, StreamRole role);

  std::uint64_t seed() const { return seed_; }
  std::uint32_t stream() const { return stream_; }

  /// Writes out.size() independent standard normals for (index, step).
  void normals(std::uint32_t index, std::uint32_t step, std::span<double> out) const;
  double normal(std::uint32_t index, std::uint32_t step) const;

  /// Uniform draws in (0, 1), same addressing as normals.
  void uniforms(std::uint32_t index, std::uint32_t step, std::span<double> out) const;

  bool operator==(const RngStream&) const = default;

 private:
  Philox4x32::Counter block(std::uint32_t index, std::uint32_t step, std::uint32_t block) const;

  std::uint64_t seed_;
  std::uint32_t stream_;
};

}  // namespace condflow
