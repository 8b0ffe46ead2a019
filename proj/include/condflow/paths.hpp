#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "condflow/rng.hpp"

namespace condflow {

/// Ordered time grid 0 = t_0 < t_1 < ... < t_n = T.
class Partition {
 public:
  explicit Partition(std::vector<double> times);

  static Partition uniform(double horizon, std::size_t cells);

  std::span<const double> times() const { return times_; }
  double time(std::size_t i) const { return times_[i]; }
  std::size_t size() const { return times_.size(); }
  std::size_t cells() const { return times_.size() - 1; }
  double horizon() const { return times_.back(); }
  double mesh() const { return mesh_; }
  /// Length of cell i, i.e. t_{i+1} - t_i.
  double step(std::size_t i) const { return times_[i + 1] - times_[i]; }

  /// Index of each point of `coarse` inside this grid; throws if `coarse` is
  /// not a sub-grid of this one.
  std::vector<std::size_t> embed(const Partition& coarse) const;
  bool refines(const Partition& coarse) const;

  bool operator==(const Partition& other) const { return times_ == other.times_; }

 private:
  std::vector<double> times_;
  double mesh_ = 0.0;
};

Partition make_uniform_partition(double horizon, std::size_t cells);

/// Finite-variation plus martingale split of a path, both started at zero.
struct Decomposition {
  Eigen::MatrixXd finite_variation;
  Eigen::MatrixXd martingale;
};

/// One realization of a vector process on a partition; column k is the value at t_k.
class SamplePath {
 public:
  SamplePath(Partition partition, Eigen::MatrixXd values);
  SamplePath(Partition partition, Eigen::MatrixXd values, Decomposition decomposition);

  const Partition& partition() const { return partition_; }
  std::size_t dim() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(values_.cols()); }
  const Eigen::MatrixXd& values() const { return values_; }
  auto value(std::size_t k) const { return values_.col(static_cast<Eigen::Index>(k)); }
  Eigen::VectorXd terminal() const { return values_.col(values_.cols() - 1); }

  /// Value at an arbitrary time in [0, T], linear between grid points.
  Eigen::VectorXd value_at(double s) const;

  bool has_decomposition() const { return decomposition_.has_value(); }
  const Decomposition& decomposition() const;

  /// max_k |A_k + M_k + X_0 - X_k|, or 0 without a decomposition.
  double decomposition_defect() const;

 private:
  Partition partition_;
  Eigen::MatrixXd values_;
  std::optional<Decomposition> decomposition_;
};

/// First two moments of the measure argument seen by the coefficients.
/// Coefficients couple to the law only through these moments.
struct MeasureMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

using ConstVecRef = Eigen::Ref<const Eigen::VectorXd>;

/// b(t, x, y, m, a) written into `out` (size d).
using DriftFn = std::function<void(double t, const ConstVecRef& x, const ConstVecRef& y,
                                   const MeasureMoments& m, double a, Eigen::Ref<Eigen::VectorXd> out)>;
/// sigma(t, x, y, m, a) or sigma0(...) written into `out` (d x d or d x d0).
using DiffusionFn = std::function<void(double t, const ConstVecRef& x, const ConstVecRef& y,
                                       const MeasureMoments& m, double a, Eigen::Ref<Eigen::MatrixXd> out)>;
/// k(t, y) written into `out` (size dy).
using FactorDriftFn = std::function<void(double t, const ConstVecRef& y, Eigen::Ref<Eigen::VectorXd> out)>;
/// gamma(t, y) (dy x dy) or gamma0(t, y) (dy x d0).
using FactorDiffusionFn = std::function<void(double t, const ConstVecRef& y, Eigen::Ref<Eigen::MatrixXd> out)>;

struct CoefficientBounds {
  double drift = 0.0;
  double sigma = 0.0;
  double sigma0 = 0.0;
  double factor_drift = 0.0;
  double factor_sigma = 0.0;
  double factor_sigma0 = 0.0;
};

/// State coefficients (b, sigma, sigma0) and factor coefficients (k, gamma, gamma0).
struct SdeCoefficients {
  std::size_t state_dim = 1;
  std::size_t common_dim = 1;
  std::size_t factor_dim = 0;

  DriftFn drift;
  DiffusionFn sigma;
  DiffusionFn sigma0;

  FactorDriftFn factor_drift;
  FactorDiffusionFn factor_sigma;
  FactorDiffusionFn factor_sigma0;

  CoefficientBounds bounds;

  bool has_factor() const { return factor_dim > 0; }
  /// Throws std::invalid_argument on missing callables or negative bounds.
  void validate() const;

  /// d = d0 = 1: b(x, m, a) = drift + control_gain * a - mean_reversion * (x - mean(m)),
  /// constant sigma and sigma0. Bounds assume |x - mean| stays finite so the
  /// drift bound is only recorded when mean_reversion == 0.
  static SdeCoefficients scalar(double drift, double sigma, double sigma0,
                                double mean_reversion = 0.0, double control_gain = 0.0);

  /// Adds a scalar factor dY = k dt + gamma dB + gamma0 dW0 with constant coefficients.
  SdeCoefficients with_scalar_factor(double k, double gamma, double gamma0) const;
};

/// Brownian motion on `partition`: values[0] = 0, increments N(0, dt I).
/// Draws use `rng` at address (index, step).
SamplePath simulate_brownian(const Partition& partition, std::size_t dim, const RngStream& rng,
                             std::uint32_t index = 0);

/// Euler scheme for the factor Y on the grid of `common_path` (the W0 realization);
/// the independent driver B is drawn from `rng`.
SamplePath simulate_factor(const SdeCoefficients& coeffs, const Eigen::VectorXd& y0,
                           const Partition& partition, const SamplePath& common_path,
                           const RngStream& rng);

}  // namespace condflow
