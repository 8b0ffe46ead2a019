#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "condflow/measures.hpp"
#include "condflow/paths.hpp"

namespace condflow {

// Mean-field control with common noise, scalar state (d = d0 = 1), scalar
// control in A = [-a_max, a_max] and an optional scalar factor y.

/// Running reward f(t, y, m, x, a) per unit time.
using RunningReward = std::function<double(double t, double y, const MeasureMoments& m, double x, double a)>;
/// Terminal reward g(y, m).
using TerminalReward = std::function<double(double y, const EmpiricalMeasure& m)>;

/// q, r: running penalties on x - mean(m) and mean(m); c_g, c_m: terminal
/// penalties on Var(m) and mean(m)^2.
struct LqParams {
  double q = 1.0;
  double r = 0.5;
  double c_g = 2.0;
  double c_m = 0.2;
  double sigma = 0.5;
  double sigma0 = 0.5;
  double horizon = 1.0;
};

struct ControlProblem {
  std::string name;
  SdeCoefficients coeffs;
  RunningReward running;
  TerminalReward terminal;
  double horizon = 1.0;
  double a_max = 1.0;
  std::optional<LqParams> lq;  ///< set for the closed-form instance

  /// Throws invalid_argument unless d = d0 = 1, factor_dim <= 1, a_max > 0 and T > 0.
  void validate() const;
  double clamp(double a) const;

  /// dX = a dt + sigma dW + sigma0 dW0, f = -a^2/2 - q/2 (x - mean)^2 - r/2 mean^2,
  /// g = -c_g/2 Var - c_m/2 mean^2, no factor.
  static ControlProblem linear_quadratic(const LqParams& p, double a_max);
};

/// Feedback x -> a(t, x, m), clamped into A by the caller.
class FeedbackControl {
 public:
  using Fn = std::function<double(double t, double x, const MeasureMoments& m)>;

  explicit FeedbackControl(Fn fn, std::string label = "feedback") : fn_(std::move(fn)), label_(std::move(label)) {}
  /// c0 + c1 (x - mean(m)) with constant coefficients.
  static FeedbackControl affine(double c0, double c1);
  /// c0(t) + c1(t) (x - mean(m)).
  static FeedbackControl affine(std::function<double(double)> c0, std::function<double(double)> c1);
  static FeedbackControl constant(double a);

  double operator()(double t, double x, const MeasureMoments& m) const { return fn_(t, x, m); }
  const std::string& label() const { return label_; }

 private:
  Fn fn_;
  std::string label_;
};

/// Derivative fields of a value candidate, frozen at (t, y, m).
class ValueSlice {
 public:
  virtual ~ValueSlice() = default;
  virtual double value() const = 0;
  virtual double dt() const = 0;
  virtual double dy() const = 0;
  virtual double dyy() const = 0;
  virtual double dx_dm(double x) const = 0;
  virtual double dxx_dm(double x) const = 0;
  virtual double dx_dm_dy(double x) const = 0;
  virtual double dx_dxh_dm2(double x, double xh) const = 0;
  /// Set when the mixed kernel does not depend on (x, xh).
  virtual std::optional<double> constant_cross_kernel() const { return std::nullopt; }
};

class ValueCandidate {
 public:
  virtual ~ValueCandidate() = default;
  virtual std::unique_ptr<ValueSlice> bind(double t, double y, const EmpiricalMeasure& m) const = 0;
  double value(double t, double y, const EmpiricalMeasure& m) const { return bind(t, y, m)->value(); }
};

/// Backward RK4 solution with step halving and cubic Hermite dense output.
class OdeSolution {
 public:
  using Rhs = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& z)>;

  OdeSolution(Rhs rhs, std::vector<double> times, std::vector<Eigen::VectorXd> states);

  Eigen::VectorXd state(double t) const;
  /// rhs evaluated at the interpolated state.
  Eigen::VectorXd derivative(double t) const;
  std::size_t steps() const { return times_.size() - 1; }
  double start() const { return times_.front(); }
  double end() const { return times_.back(); }
  /// Max node difference between the last two halvings.
  double refinement_gap = 0.0;
  std::size_t halvings = 0;

 private:
  Rhs rhs_;
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> states_;
  std::vector<Eigen::VectorXd> slopes_;
};

/// Integrates z' = rhs(t, z) backward from z(t_end) = terminal to t_begin,
/// doubling the step count until nodal values of successive runs agree to `tol`.
OdeSolution rk4_backward(const OdeSolution::Rhs& rhs, const Eigen::VectorXd& terminal, double t_begin, double t_end,
                         double tol = 1e-8, std::size_t initial_steps = 16, std::size_t max_halvings = 20);

/// Riccati system P' = q/2 - 2P^2, R' = r/2 - 2R^2, c' = -(sigma^2 P + sigma0^2 R)
/// with P(T) = -c_g/2, R(T) = -c_m/2, c(T) = 0; state order (P, R, c).
OdeSolution solve_lq_riccati(const LqParams& p, double tol = 1e-8);

/// V = P(t) Var(m) + R(t) mean(m)^2 + c(t), optionally with eps Var(m) added.
class QuadraticMomentValue : public ValueCandidate {
 public:
  /// Riccati-backed candidate; `eps` perturbs the Var coefficient.
  QuadraticMomentValue(std::shared_ptr<const OdeSolution> riccati, double eps = 0.0);
  /// Fixed coefficient functions with their time derivatives.
  QuadraticMomentValue(std::function<Eigen::Vector3d(double)> coeffs, std::function<Eigen::Vector3d(double)> rates,
                       double eps = 0.0);
  static QuadraticMomentValue zero();

  std::unique_ptr<ValueSlice> bind(double t, double y, const EmpiricalMeasure& m) const override;
  /// (P, R, c) at t, perturbation included.
  Eigen::Vector3d coefficients(double t) const;
  Eigen::Vector3d rates(double t) const;

 private:
  std::function<Eigen::Vector3d(double)> coeffs_, rates_;
  double eps_ = 0.0;
};

/// int f^a dm + L^a V(t, y, m) for the feedback a.
double generator(const ControlProblem& problem, const ValueCandidate& v, double t, double y, const EmpiricalMeasure& m,
                 const FeedbackControl& a);
/// Same with a pre-bound slice.
double generator(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                 const FeedbackControl& a);

/// Closed form of the LQ generator on a law with the given mean and variance,
/// for the affine feedback c0 + c1 (x - mean) without clamping.
double lq_generator_closed_form(const LqParams& p, double P, double R, double mean, double var, double c0, double c1);

struct AffineSup {
  double value = 0.0;
  double c0 = 0.0;
  double c1 = 0.0;
};

/// Max of the generator over the explicit product grid c0s x c1s.
AffineSup sup_over_grid(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                        const std::vector<double>& c0s, const std::vector<double>& c1s);

struct AffineFamily {
  double c0_max = 0.0;  ///< 0 means a_max
  double c1_max = 0.0;  ///< 0 means a_max
  std::size_t points = 21;
  std::size_t zoom_levels = 6;
};

/// Grid search followed by `zoom_levels` rounds on a grid shrunk around the incumbent.
AffineSup affine_sup(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                     const AffineFamily& family);

/// Coordinate ascent over controls constant on `bins` equal-mass bins of m,
/// each taking values on a uniform grid of `levels` points of A.
double piecewise_sup(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                     std::size_t bins = 8, std::size_t levels = 201, std::size_t sweeps = 4);

struct HjbGrid {
  std::vector<double> times;
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<double> factors{0.0};
  std::size_t quadrature_nodes = 32;
  AffineFamily family;
};

/// 5 x 5 x 9 lattice: means in [-1, 1], variances in [0.25, 1.25], times in [0, T].
HjbGrid default_hjb_grid(double horizon);

struct HjbRow {
  double t = 0.0;
  double y = 0.0;
  double mean = 0.0;
  double var = 0.0;
  double residual = 0.0;
  double c0 = 0.0;
  double c1 = 0.0;
};

struct HjbTable {
  std::vector<HjbRow> rows;
  double max_abs_residual = 0.0;
  double terminal_gap = 0.0;  ///< max |V(T, y, m) - g(y, m)| over the (y, m) lattice
};

/// Residual -dV/dt - k dV/dy - 1/2 (gamma^2 + gamma0^2) d2V/dy2 - sup_a (...) per lattice node,
/// on Gauss-Hermite surrogate laws. Throws invalid_argument on an empty grid.
HjbTable hjb_residual(const ControlProblem& problem, const ValueCandidate& v, const HjbGrid& grid, std::size_t threads = 1);

/// 2 x the largest |optimal feedback| over the lattice surrogates.
double lq_control_bound(const OdeSolution& riccati, const HjbGrid& grid);

/// Monte Carlo setup: Gaussian initial law at time t, N particles, M outer paths, n Euler cells.
struct McSetup {
  double mean = 0.0;
  double var = 1.0;
  double y = 0.0;
  std::size_t particles = 1024;
  std::size_t outer_paths = 32;
  std::size_t steps = 64;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct DppResult {
  double estimate = 0.0;
  double std_error = 0.0;
  double mesh = 0.0;
  std::vector<double> per_path;
};

/// Per-path gap int_t^theta f ds + V(theta, mu_theta) - V(t, mu_t) under `control`,
/// with mu_t the empirical initial law. Throws invalid_argument when theta <= t.
DppResult dpp_check(const ControlProblem& problem, const ValueCandidate& v, const FeedbackControl& control, double t,
                    double theta, const McSetup& setup);

/// Policy value int_t^T f ds + g(y, mu_T) under `control`, per outer path.
DppResult policy_value(const ControlProblem& problem, const FeedbackControl& control, double t, const McSetup& setup);

/// Exact expected DPP gap of a constant control in the LQ instance, from the
/// Gaussian moment dynamics and the Riccati value.
double lq_constant_control_gap(const LqParams& p, const OdeSolution& riccati, double a, double t, double theta,
                               double mean, double var);

/// Riccati-optimal feedback 2 R(t) mean + 2 P(t) (x - mean).
FeedbackControl lq_optimal_feedback(std::shared_ptr<const OdeSolution> riccati);

struct LipschitzRow {
  std::string kind;  ///< "translation" or "scaling"
  double mean = 0.0, sd = 0.0, mean2 = 0.0, sd2 = 0.0;
  double ratio = 0.0;
  double oracle = 0.0;
};

struct LipschitzAudit {
  std::vector<LipschitzRow> rows;
  double max_ratio = 0.0;
  double max_ratio_coarse = 0.0;  ///< same pairs on 16-node surrogates
  double max_oracle_gap = 0.0;    ///< max |ratio - oracle| / oracle
  bool pass = false;
};

/// Ratios |Phi(m') - Phi(m)| / W2(m, m') for Phi(m) = f^a + L^a V(t, y, m) under the fixed
/// affine feedback (c0, c1), over random translation and scaling pairs of Gaussian
/// surrogates with means in [-1, 1] and sds in [0.5, 1.1]. Requires the LQ instance.
LipschitzAudit lipschitz_audit(const ControlProblem& problem, const OdeSolution& riccati, double t, double c0, double c1,
                               std::size_t pairs, std::uint64_t seed);

}  // namespace condflow
