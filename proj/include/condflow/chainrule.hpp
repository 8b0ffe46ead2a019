#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "condflow/measures.hpp"
#include "condflow/particle.hpp"
#include "condflow/stats.hpp"

namespace condflow {

/// How d<X> is discretized: coefficients (sigma sigma^T + sigma0 sigma0^T) dt,
/// or realized increments dX dX^T.
enum class BracketMode { kAnalytic, kRealized };
/// How d<X, Xhat> is discretized for distinct particles: sigma0 sigma0hat^T dt,
/// or pairwise increment products dX dXhat^T.
enum class CrossMode { kAnalytic, kPairwise };

/// Pass rule: statistic <= 3 SE + C * scale, where the statistic is the mean
/// absolute residual or the absolute signed mean residual, and the scale is
/// n^{-1/2} + N^{-1/2} or the mesh.
struct ToleranceRule {
  enum class Statistic { kMeanAbs, kSignedMean };
  enum class Scale { kRootSizes, kMesh };
  Statistic statistic = Statistic::kMeanAbs;
  Scale scale = Scale::kRootSizes;
  double c = 0.05;
  /// Also require the 0.9 quantile of per-path |residual| to be within the bound.
  bool check_quantile = false;

  void validate() const;
};

struct VerifyOptions {
  std::size_t outer_paths = 16;
  std::uint64_t seed = 0;
  BracketMode bracket = BracketMode::kAnalytic;
  CrossMode cross = CrossMode::kAnalytic;
  ToleranceRule tolerance;
  std::size_t threads = 1;
};

struct PathRow {
  std::uint32_t path = 0;
  double lhs = 0.0;
  std::vector<double> terms;
  double residual = 0.0;  ///< lhs minus the terms, summed in order
  std::vector<double> diagnostics;
};

struct ReportAggregate {
  double mean_abs = 0.0;
  double se_abs = 0.0;
  double mean_signed = 0.0;
  double se_signed = 0.0;
  double q90_abs = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct VerificationReport {
  std::string experiment;
  std::string functional;
  std::size_t n = 0;
  std::size_t particles = 0;
  std::size_t outer_paths = 0;
  double horizon = 0.0;
  double mesh = 0.0;
  std::vector<std::string> term_names;
  std::vector<std::string> diagnostic_names;
  std::vector<PathRow> rows;
  ToleranceRule tolerance;
  ReportAggregate aggregate;

  MeanSe term_stats(const std::string& name) const;
  MeanSe diagnostic_stats(const std::string& name) const;
  /// Recomputes the aggregate from the rows and the tolerance rule.
  void finalize();
};

VerificationReport verify_ito(const CylindricalFunctional& u, const EnsembleConfig& config, const VerifyOptions& options);

// ---- random fields ----

enum class DriverKind { kFiniteVariation, kMartingale };
/// Finite-variation drivers: dB = dt or dB = cos(W0_c(t)) dt.
/// Martingale drivers: dN = dW0_c (common), dW^0_c of particle 0 (idiosyncratic) or an independent Brownian motion.
enum class DriverSource { kTime, kCommonDensity, kCommon, kIdiosyncratic, kIndependent };

struct FieldDriver {
  std::string name;
  CylindricalFunctional field;  ///< phi_r or psi_r
  DriverKind kind = DriverKind::kFiniteVariation;
  DriverSource source = DriverSource::kTime;
  std::size_t component = 0;
  double scale = 1.0;
  std::function<double(double)> integrand;  ///< bounded theta(t); empty means 1
};

/// U_t(m) = U_0(m) + sum_j int_0^t f_j(m) theta_j(r) dD_j(r).
struct RandomFieldSpec {
  CylindricalFunctional initial;
  std::vector<FieldDriver> drivers;
};

/// Grid realization of a random field along one ensemble's noises.
class RandomField {
 public:
  RandomField(const RandomFieldSpec& spec, const ParticleEnsemble& ensemble, const RngStream& independent);

  const RandomFieldSpec& spec() const { return spec_; }
  std::size_t drivers() const { return spec_.drivers.size(); }
  /// theta_j(t_k) (D_j(t_{k+1}) - D_j(t_k)).
  double increment(std::size_t j, std::size_t k) const { return increments_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)); }
  /// Raw driver increment without theta (used by realized brackets).
  double raw_increment(std::size_t j, std::size_t k) const { return raw_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)); }
  /// w_j(t_k) = sum_{l < k} increment(j, l).
  double weight(std::size_t j, std::size_t k) const { return weights_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)); }
  double integrand(std::size_t j, std::size_t k) const;

  /// U_{t_k} as a cylindrical functional over the concatenated test functions.
  CylindricalFunctional at(std::size_t k) const;
  double value(std::size_t k, const EmpiricalMeasure& m) const;
  /// d_x delta_m U_{t_k}(m, x) accumulated increment by increment.
  Eigen::VectorXd d_lions_by_increments(std::size_t k, const EmpiricalMeasure& m, const ConstVecRef& x) const;

  /// Combination sum_j c_j f_j (c_0 for U_0) over the shared test list.
  CylindricalFunctional combination(const std::vector<double>& coeffs) const;
  const std::vector<std::shared_ptr<const TestFunction>>& tests() const { return tests_; }
  /// Offset of part p (0 = U_0, j + 1 = driver j) inside the concatenated tests.
  std::size_t offset(std::size_t part) const { return offsets_[part]; }

 private:
  RandomFieldSpec spec_;
  Eigen::MatrixXd raw_, theta_, increments_, weights_;
  std::vector<std::shared_ptr<const TestFunction>> tests_;
  std::vector<std::shared_ptr<const OuterFunction>> parts_;
  std::vector<std::size_t> offsets_;
};

/// Throws invalid_argument when a driver refers to a noise component absent from the ensemble.
RandomField build_random_field(const RandomFieldSpec& spec, const ParticleEnsemble& ensemble, const RngStream& independent);

VerificationReport verify_ito_wentzell(const RandomFieldSpec& spec, const EnsembleConfig& config,
                                       const VerifyOptions& options);

/// Brownian setting: drivers restricted to dt (phi), dW of particle 0 (psi)
/// and dW0 (psi0); the RHS is reported term by term.
VerificationReport verify_brownian_corollary(const RandomFieldSpec& spec, const EnsembleConfig& config,
                                             const VerifyOptions& options);

// ---- factor model ----

/// u(t, m, y) = sum_l g_l(t, y) u_l(m) with scalar y.
struct FactorTerm {
  std::function<double(double, double)> g, g_t, g_y, g_yy;
  CylindricalFunctional u;
};

struct FactorFunctional {
  std::string name;
  std::vector<FactorTerm> terms;

  double value(double t, const EmpiricalMeasure& m, double y) const;
  /// y * u(m).
  static FactorFunctional y_times(const CylindricalFunctional& u);
  /// u(m), independent of (t, y).
  static FactorFunctional plain(const CylindricalFunctional& u);
  /// t.
  static FactorFunctional time();
};

VerificationReport verify_factor_model(const FactorFunctional& u, const EnsembleConfig& config,
                                       const VerifyOptions& options);

// ---- sweeps ----

struct SweepCell {
  std::size_t n = 0;
  std::size_t particles = 0;
  std::size_t outer_paths = 0;
};

struct SweepRow {
  SweepCell cell;
  ReportAggregate aggregate;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::optional<bool> n_trend;  ///< error ratios between cells differing only in n lie in the band
  std::optional<bool> particle_trend;
};

using Verifier = std::function<VerificationReport(const SweepCell&)>;

/// Runs the verifier on every cell; ratios use the quadvar band (factor 4 gives [1.3, 3.0]).
/// Pairs whose errors are both below `floor` count as converged.
SweepTable convergence_sweep(const Verifier& verifier, const std::vector<SweepCell>& grid, double floor = 1e-12);

}  // namespace condflow
