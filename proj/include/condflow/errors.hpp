#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace condflow {

/// A functional or simulator produced a non-finite number.
class NumericOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Particle simulation produced a non-finite state at `step`.
class BlowUp : public std::runtime_error {
 public:
  BlowUp(std::size_t step, const std::string& what)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Requested computation is outside the supported class (e.g. W2 in d>1 with unequal sizes).
class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace condflow
