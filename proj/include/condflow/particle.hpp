#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "condflow/measures.hpp"
#include "condflow/paths.hpp"
#include "condflow/rng.hpp"

namespace condflow {

/// Law of X_0: a Dirac mass, explicit atoms (one per particle) or a Gaussian sampled per particle.
class InitialLaw {
 public:
  static InitialLaw dirac(Eigen::VectorXd x0);
  static InitialLaw atoms(Eigen::MatrixXd atoms);
  static InitialLaw gaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  std::size_t dim() const { return static_cast<std::size_t>(point_.rows()); }
  /// d x N initial states; `rng` is only used by the Gaussian law.
  Eigen::MatrixXd draw(std::size_t particles, const RngStream& rng) const;

 private:
  enum class Kind { kDirac, kAtoms, kGaussian } kind_ = Kind::kDirac;
  Eigen::MatrixXd point_;  ///< Dirac location (d x 1), atom table (d x N) or Gaussian mean
  Eigen::MatrixXd chol_;   ///< lower Cholesky factor of the Gaussian covariance
};

/// Feedback a(t, x, m) seen by the drift; scalar control slot.
using FeedbackFn = std::function<double(double t, const ConstVecRef& x, const MeasureMoments& m)>;

struct EnsembleConfig {
  SdeCoefficients coeffs;
  InitialLaw initial = InitialLaw::dirac(Eigen::VectorXd::Zero(1));
  std::size_t particles = 2;
  Partition partition = Partition::uniform(1.0, 1);
  FeedbackFn control;                 ///< optional
  Eigen::VectorXd factor_initial;     ///< Y_0, required when coeffs has a factor
};

/// Read-only view on one particle's trajectory.
class ParticleView {
 public:
  ParticleView(const std::vector<Eigen::MatrixXd>& states, std::size_t index) : states_(&states), index_(index) {}
  std::size_t index() const { return index_; }
  std::size_t size() const { return states_->size(); }
  auto value(std::size_t k) const { return (*states_)[k].col(static_cast<Eigen::Index>(index_)); }
  auto terminal() const { return states_->back().col(static_cast<Eigen::Index>(index_)); }

 private:
  const std::vector<Eigen::MatrixXd>* states_;
  std::size_t index_;
};

/// N particles sharing one common-noise path; the empirical measure at t_k
/// stands in for the conditional law mu_{t_k}.
class ParticleEnsemble {
 public:
  const Partition& partition() const { return common_.partition(); }
  const SamplePath& common_path() const { return common_; }
  const std::optional<SamplePath>& factor_path() const { return factor_; }
  const SdeCoefficients& coeffs() const { return coeffs_; }
  std::size_t particles() const { return static_cast<std::size_t>(states_.front().cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(states_.front().rows()); }
  std::size_t steps() const { return states_.size() - 1; }

  /// d x N states at grid point k.
  const Eigen::MatrixXd& state(std::size_t k) const { return states_[k]; }
  const std::vector<Eigen::MatrixXd>& states() const { return states_; }
  EmpiricalMeasure measure(std::size_t k) const { return EmpiricalMeasure(states_[k]); }
  MeasureMoments moments(std::size_t k) const;
  ParticleView particle(std::size_t i) const { return ParticleView(states_, i); }
  SamplePath particle_path(std::size_t i) const;

  /// Idiosyncratic Brownian increments dW^i over cell k (d x N), regenerated from the stream.
  Eigen::MatrixXd idiosyncratic_increments(std::size_t k) const;
  /// Same for particle i only.
  Eigen::VectorXd idiosyncratic_increment(std::size_t k, std::size_t i) const;
  Eigen::VectorXd common_increment(std::size_t k) const;
  /// Control applied on cell k (empty when uncontrolled).
  Eigen::VectorXd controls(std::size_t k) const;

  /// sigma and sigma0 of every particle at the left end of cell k,
  /// as (d*d) x N and (d*d0) x N column-major blocks.
  void diffusions(std::size_t k, Eigen::MatrixXd& sigma, Eigen::MatrixXd& sigma0) const;
  /// Drift of every particle at the left end of cell k (d x N).
  Eigen::MatrixXd drifts(std::size_t k) const;

 private:
  friend ParticleEnsemble simulate_ensemble(const EnsembleConfig&, std::uint64_t, std::uint32_t);

  ParticleEnsemble(SamplePath common, SdeCoefficients coeffs, RngStream idio)
      : common_(std::move(common)), coeffs_(std::move(coeffs)), idio_(idio) {}

  Eigen::VectorXd factor_at(std::size_t k) const;

  SamplePath common_;
  std::optional<SamplePath> factor_;
  SdeCoefficients coeffs_;
  RngStream idio_;
  std::vector<Eigen::MatrixXd> states_;
  std::vector<Eigen::VectorXd> controls_;
};

/// Euler scheme for the interacting system of `config.particles` particles,
/// driven by the streams of outer repetition `outer` (common noise,
/// idiosyncratic noise, factor noise and initial law each on their own role).
/// Throws invalid_argument when N < 2 and BlowUp on a non-finite state.
ParticleEnsemble simulate_ensemble(const EnsembleConfig& config, std::uint64_t seed, std::uint32_t outer);

struct ConditionalEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t particles = 0;
};

/// Mean and standard error of per-particle values. The sum is taken in sorted
/// order so the result does not depend on particle labels.
ConditionalEstimate cond_expect(std::span<const double> per_particle);

using ParticleStatistic = std::function<double(const ParticleView&)>;
using PairStatistic = std::function<double(const ParticleView&, const ParticleView&)>;

ConditionalEstimate cond_expect(const ParticleEnsemble& ensemble, const ParticleStatistic& statistic);

/// U-statistic over ordered pairs i != j; standard error from the Hoeffding
/// projection, 2 sd(h_1) / sqrt(N).
ConditionalEstimate cond_expect_pair(const ParticleEnsemble& ensemble, const PairStatistic& statistic);

/// Same estimator for product statistics f(X) g(Xhat) in O(N):
/// (sum f sum g - sum f g) / (N (N - 1)).
ConditionalEstimate cond_expect_pair_product(std::span<const double> f, std::span<const double> g);

struct ModulusEstimate {
  double s = 0.0;
  double t = 0.0;
  double modulus = 0.0;       ///< mean over ensembles of sqrt(avg_i |X^i_t - X^i_s|^2)
  double std_error = 0.0;
  double exact_w2 = 0.0;      ///< mean of sqrt(w2_squared) of the two empirical laws (d = 1), else NaN
  double bound = 0.0;         ///< |b|(t - s) + sqrt(|sigma|^2 + |sigma0|^2) sqrt(t - s)
  bool pass = false;          ///< modulus <= bound + 3 SE
};

/// sqrt of the synchronous-coupling transport cost between grid points ks < kt.
double synchronous_distance(const ParticleEnsemble& ensemble, std::size_t ks, std::size_t kt);

ModulusEstimate measure_flow_modulus(const std::vector<ParticleEnsemble>& ensembles, std::size_t ks, std::size_t kt);

}  // namespace condflow
