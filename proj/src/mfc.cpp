#include "condflow/mfc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "condflow/errors.hpp"
#include "condflow/parallel.hpp"
#include "condflow/particle.hpp"
#include "condflow/stats.hpp"

namespace condflow {

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = 0.5 * (lo + hi);
    return v;
  }
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace

// ---- problem ----

void ControlProblem::validate() const {
  coeffs.validate();
  if (coeffs.state_dim != 1 || coeffs.common_dim != 1) throw std::invalid_argument("ControlProblem: scalar state and common noise only");
  if (coeffs.factor_dim > 1) throw std::invalid_argument("ControlProblem: at most one factor");
  if (!running || !terminal) throw std::invalid_argument("ControlProblem: missing rewards");
  if (!(a_max > 0.0) || !std::isfinite(a_max)) throw std::invalid_argument("ControlProblem: A = [-a_max, a_max] needs 0 < a_max < inf");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("ControlProblem: horizon must be positive");
}

double ControlProblem::clamp(double a) const { return std::clamp(a, -a_max, a_max); }

ControlProblem ControlProblem::linear_quadratic(const LqParams& p, double a_max) {
  ControlProblem pr;
  pr.name = "lq-common-noise";
  pr.coeffs = SdeCoefficients::scalar(0.0, p.sigma, p.sigma0, 0.0, 1.0);
  pr.coeffs.bounds.drift = a_max;
  const double q = p.q, r = p.r, cg = p.c_g, cm = p.c_m;
  pr.running = [q, r](double, double, const MeasureMoments& m, double x, double a) {
    const double mu = m.mean(0);
    const double dx = x - mu;
    return -0.5 * a * a - 0.5 * q * dx * dx - 0.5 * r * mu * mu;
  };
  pr.terminal = [cg, cm](double, const EmpiricalMeasure& m) {
    const double mu = m.mean()(0);
    const double var = m.covariance()(0, 0);
    return -cg / 2 * var + -cm / 2 * (mu * mu);
  };
  pr.horizon = p.horizon;
  pr.a_max = a_max;
  pr.lq = p;
  pr.validate();
  return pr;
}

FeedbackControl FeedbackControl::affine(double c0, double c1) {
  return FeedbackControl([c0, c1](double, double x, const MeasureMoments& m) { return c0 + c1 * (x - m.mean(0)); },
                         "affine");
}

FeedbackControl FeedbackControl::affine(std::function<double(double)> c0, std::function<double(double)> c1) {
  return FeedbackControl(
      [c0 = std::move(c0), c1 = std::move(c1)](double t, double x, const MeasureMoments& m) { return c0(t) + c1(t) * (x - m.mean(0)); },
      "affine");
}

FeedbackControl FeedbackControl::constant(double a) {
  return FeedbackControl([a](double, double, const MeasureMoments&) { return a; }, "constant");
}

// ---- ODE ----

OdeSolution::OdeSolution(Rhs rhs, std::vector<double> times, std::vector<Eigen::VectorXd> states)
    : rhs_(std::move(rhs)), times_(std::move(times)), states_(std::move(states)) {
  if (times_.size() < 2 || times_.size() != states_.size()) throw std::invalid_argument("OdeSolution: bad node table");
  slopes_.reserve(times_.size());
  for (std::size_t k = 0; k < times_.size(); ++k) slopes_.push_back(rhs_(times_[k], states_[k]));
}

Eigen::VectorXd OdeSolution::state(double t) const {
  if (t < times_.front() || t > times_.back()) throw std::out_of_range("OdeSolution: time outside the solved interval");
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::size_t k = static_cast<std::size_t>(it - times_.begin());
  if (k > 0 && times_[k - 1] == t) return states_[k - 1];
  if (k == times_.size()) return states_.back();
  --k;
  const double h = times_[k + 1] - times_[k];
  const double s = (t - times_[k]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  return h00 * states_[k] + h10 * h * slopes_[k] + h01 * states_[k + 1] + h11 * h * slopes_[k + 1];
}

Eigen::VectorXd OdeSolution::derivative(double t) const { return rhs_(t, state(t)); }

OdeSolution rk4_backward(const OdeSolution::Rhs& rhs, const Eigen::VectorXd& terminal, double t_begin, double t_end,
                         double tol, std::size_t initial_steps, std::size_t max_halvings) {
  if (!(t_end > t_begin)) throw std::invalid_argument("rk4_backward: need t_begin < t_end");
  if (initial_steps == 0) throw std::invalid_argument("rk4_backward: need at least one step");
  auto run = [&](std::size_t n) {
    std::vector<Eigen::VectorXd> z(n + 1);
    z[n] = terminal;
    const double h = (t_end - t_begin) / static_cast<double>(n);
    for (std::size_t k = n; k > 0; --k) {
      const double t = t_begin + h * static_cast<double>(k);
      const Eigen::VectorXd& y = z[k];
      const Eigen::VectorXd k1 = rhs(t, y);
      const Eigen::VectorXd k2 = rhs(t - h / 2, y - h / 2 * k1);
      const Eigen::VectorXd k3 = rhs(t - h / 2, y - h / 2 * k2);
      const Eigen::VectorXd k4 = rhs(t - h, y - h * k3);
      z[k - 1] = y - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      if (!z[k - 1].allFinite()) throw NumericOverflow("rk4_backward: solution left the finite range");
    }
    return z;
  };
  std::size_t n = initial_steps;
  std::vector<Eigen::VectorXd> prev = run(n);
  double gap = std::numeric_limits<double>::infinity();
  std::size_t halvings = 0;
  while (halvings < max_halvings) {
    std::vector<Eigen::VectorXd> next = run(2 * n);
    gap = 0.0;
    for (std::size_t k = 0; k <= n; ++k) gap = std::max(gap, (next[2 * k] - prev[k]).cwiseAbs().maxCoeff());
    n *= 2;
    ++halvings;
    prev = std::move(next);
    if (gap < tol) break;
  }
  if (!(gap < tol)) throw NumericOverflow("rk4_backward: step halving did not converge");
  std::vector<double> times(n + 1);
  for (std::size_t k = 0; k <= n; ++k) times[k] = t_begin + (t_end - t_begin) * static_cast<double>(k) / static_cast<double>(n);
  times[n] = t_end;
  OdeSolution sol(rhs, std::move(times), std::move(prev));
  sol.refinement_gap = gap;
  sol.halvings = halvings;
  return sol;
}

OdeSolution solve_lq_riccati(const LqParams& p, double tol) {
  if (!(p.horizon > 0.0)) throw std::invalid_argument("solve_lq_riccati: horizon must be positive");
  const double q = p.q, r = p.r, s2 = p.sigma * p.sigma, s02 = p.sigma0 * p.sigma0;
  OdeSolution::Rhs rhs = [=](double, const Eigen::VectorXd& z) {
    Eigen::VectorXd d(3);
    d(0) = q / 2 - 2 * z(0) * z(0);
    d(1) = r / 2 - 2 * z(1) * z(1);
    d(2) = -(s2 * z(0) + s02 * z(1));
    return d;
  };
  Eigen::VectorXd term(3);
  term << -p.c_g / 2, -p.c_m / 2, 0.0;
  return rk4_backward(rhs, term, 0.0, p.horizon, tol);
}

// ---- value candidates ----

namespace {

class QuadraticSlice : public ValueSlice {
 public:
  QuadraticSlice(const Eigen::Vector3d& c, const Eigen::Vector3d& r, double mean, double var)
      : c_(c), r_(r), mu_(mean), var_(var) {}
  double value() const override { return c_(0) * var_ + c_(1) * (mu_ * mu_) + c_(2); }
  double dt() const override { return r_(0) * var_ + r_(1) * (mu_ * mu_) + r_(2); }
  double dy() const override { return 0.0; }
  double dyy() const override { return 0.0; }
  double dx_dm(double x) const override { return 2 * c_(0) * (x - mu_) + 2 * c_(1) * mu_; }
  double dxx_dm(double) const override { return 2 * c_(0); }
  double dx_dm_dy(double) const override { return 0.0; }
  double dx_dxh_dm2(double, double) const override { return 2 * (c_(1) - c_(0)); }
  std::optional<double> constant_cross_kernel() const override { return 2 * (c_(1) - c_(0)); }

 private:
  Eigen::Vector3d c_, r_;
  double mu_, var_;
};

}  // namespace

QuadraticMomentValue::QuadraticMomentValue(std::shared_ptr<const OdeSolution> riccati, double eps) : eps_(eps) {
  if (!riccati) throw std::invalid_argument("QuadraticMomentValue: null Riccati solution");
  coeffs_ = [riccati](double t) { return Eigen::Vector3d(riccati->state(t)); };
  rates_ = [riccati](double t) { return Eigen::Vector3d(riccati->derivative(t)); };
}

QuadraticMomentValue::QuadraticMomentValue(std::function<Eigen::Vector3d(double)> coeffs,
                                           std::function<Eigen::Vector3d(double)> rates, double eps)
    : coeffs_(std::move(coeffs)), rates_(std::move(rates)), eps_(eps) {}

QuadraticMomentValue QuadraticMomentValue::zero() {
  auto z = [](double) { return Eigen::Vector3d::Zero().eval(); };
  return QuadraticMomentValue(z, z);
}

Eigen::Vector3d QuadraticMomentValue::coefficients(double t) const {
  Eigen::Vector3d c = coeffs_(t);
  if (eps_ != 0.0) c(0) += eps_;
  return c;
}

Eigen::Vector3d QuadraticMomentValue::rates(double t) const { return rates_(t); }

std::unique_ptr<ValueSlice> QuadraticMomentValue::bind(double t, double, const EmpiricalMeasure& m) const {
  if (m.dim() != 1) throw std::invalid_argument("QuadraticMomentValue: scalar measures only");
  return std::make_unique<QuadraticSlice>(coefficients(t), rates(t), m.mean()(0), m.covariance()(0, 0));
}

// ---- generator ----

double generator(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                 const FeedbackControl& a) {
  if (m.dim() != 1) throw std::invalid_argument("generator: scalar measures only");
  const MeasureMoments mm = m.moments();
  const auto& c = problem.coeffs;
  Eigen::VectorXd yv = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(c.factor_dim), y);
  double gamma0 = 0.0;
  if (c.has_factor()) {
    Eigen::MatrixXd g0(1, 1);
    c.factor_sigma0(t, yv, g0);
    gamma0 = g0(0, 0);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(m.size());
  const auto& atoms = m.atoms();
  const auto& w = m.weights();
  Eigen::VectorXd xi(1), bi(1);
  Eigen::MatrixXd si(1, 1), s0i(1, 1);
  std::vector<double> s0(static_cast<std::size_t>(n));
  double single = 0.0;
  double s0_mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = atoms(0, i);
    xi(0) = x;
    const double ai = problem.clamp(a(t, x, mm));
    c.drift(t, xi, yv, mm, ai, bi);
    c.sigma(t, xi, yv, mm, ai, si);
    c.sigma0(t, xi, yv, mm, ai, s0i);
    const double sg = si(0, 0), sg0 = s0i(0, 0);
    double term = problem.running(t, y, mm, x, ai) + bi(0) * v.dx_dm(x) + 0.5 * (sg * sg + sg0 * sg0) * v.dxx_dm(x);
    if (gamma0 != 0.0) term += sg0 * gamma0 * v.dx_dm_dy(x);
    single += w(i) * term;
    s0[static_cast<std::size_t>(i)] = sg0;
    s0_mean += w(i) * sg0;
  }
  double cross = 0.0;
  if (const auto k = v.constant_cross_kernel()) {
    cross = *k * s0_mean * s0_mean;
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) row += w(j) * s0[static_cast<std::size_t>(j)] * v.dx_dxh_dm2(atoms(0, i), atoms(0, j));
      cross += w(i) * s0[static_cast<std::size_t>(i)] * row;
    }
  }
  const double out = single + 0.5 * cross;
  if (!std::isfinite(out)) throw NumericOverflow("generator: non-finite value");
  return out;
}

double generator(const ControlProblem& problem, const ValueCandidate& v, double t, double y, const EmpiricalMeasure& m,
                 const FeedbackControl& a) {
  return generator(problem, *v.bind(t, y, m), t, y, m, a);
}

double lq_generator_closed_form(const LqParams& p, double P, double R, double mean, double var, double c0, double c1) {
  return -0.5 * c0 * c0 + 2 * R * mean * c0 - 0.5 * c1 * c1 * var + 2 * P * c1 * var - 0.5 * p.q * var -
         0.5 * p.r * mean * mean + P * p.sigma * p.sigma + R * p.sigma0 * p.sigma0;
}

// ---- sup over controls ----

AffineSup sup_over_grid(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                        const std::vector<double>& c0s, const std::vector<double>& c1s) {
  if (c0s.empty() || c1s.empty()) throw std::invalid_argument("sup_over_grid: empty control grid");
  AffineSup best{-std::numeric_limits<double>::infinity(), 0.0, 0.0};
  for (double c0 : c0s) {
    for (double c1 : c1s) {
      const double g = generator(problem, v, t, y, m, FeedbackControl::affine(c0, c1));
      if (g > best.value) best = {g, c0, c1};
    }
  }
  return best;
}

AffineSup affine_sup(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                     const AffineFamily& family) {
  if (family.points < 2) throw std::invalid_argument("affine_sup: need at least two points per axis");
  double h0 = family.c0_max > 0.0 ? family.c0_max : problem.a_max;
  double h1 = family.c1_max > 0.0 ? family.c1_max : problem.a_max;
  AffineSup best = sup_over_grid(problem, v, t, y, m, linspace(-h0, h0, family.points), linspace(-h1, h1, family.points));
  for (std::size_t level = 0; level < family.zoom_levels; ++level) {
    h0 = 2 * h0 / static_cast<double>(family.points - 1);
    h1 = 2 * h1 / static_cast<double>(family.points - 1);
    const AffineSup z = sup_over_grid(problem, v, t, y, m, linspace(best.c0 - h0, best.c0 + h0, family.points),
                                      linspace(best.c1 - h1, best.c1 + h1, family.points));
    if (z.value > best.value) best = z;
  }
  return best;
}

double piecewise_sup(const ControlProblem& problem, const ValueSlice& v, double t, double y, const EmpiricalMeasure& m,
                     std::size_t bins, std::size_t levels, std::size_t sweeps) {
  if (bins == 0 || levels < 2) throw std::invalid_argument("piecewise_sup: need bins >= 1 and levels >= 2");
  const auto& sorted = m.sorted();
  // Bin edges at equal cumulative mass.
  std::vector<double> edges;
  double mass = 0.0;
  std::size_t next = 1;
  for (const auto& [x, w] : sorted) {
    mass += w;
    while (next < bins && mass >= static_cast<double>(next) / static_cast<double>(bins) - 1e-12) {
      edges.push_back(x);
      ++next;
    }
  }
  auto bin_of = [&](double x) {
    return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
  };
  const std::vector<double> grid = linspace(-problem.a_max, problem.a_max, levels);
  std::vector<double> choice(bins, 0.0);
  auto control = FeedbackControl([&](double, double x, const MeasureMoments&) { return choice[bin_of(x)]; });
  double best = generator(problem, v, t, y, m, control);
  for (std::size_t s = 0; s < sweeps; ++s) {
    for (std::size_t b = 0; b < bins; ++b) {
      double keep = choice[b];
      for (double a : grid) {
        choice[b] = a;
        const double g = generator(problem, v, t, y, m, control);
        if (g > best) {
          best = g;
          keep = a;
        }
      }
      choice[b] = keep;
    }
  }
  return best;
}

// ---- HJB ----

HjbGrid default_hjb_grid(double horizon) {
  HjbGrid g;
  g.means = linspace(-1.0, 1.0, 5);
  g.variances = linspace(0.25, 1.25, 5);
  g.times = linspace(0.0, horizon, 9);
  return g;
}

HjbTable hjb_residual(const ControlProblem& problem, const ValueCandidate& v, const HjbGrid& grid, std::size_t threads) {
  problem.validate();
  if (grid.times.empty() || grid.means.empty() || grid.variances.empty() || grid.factors.empty()) {
    throw std::invalid_argument("hjb_residual: empty grid");
  }
  const auto& c = problem.coeffs;
  HjbTable table;
  for (double t : grid.times)
    for (double y : grid.factors)
      for (double mu : grid.means)
        for (double var : grid.variances) table.rows.push_back({t, y, mu, var, 0.0, 0.0, 0.0});
  parallel_for(table.rows.size(), threads, [&](std::size_t i) {
    HjbRow& row = table.rows[i];
    const EmpiricalMeasure m = gaussian_surrogate(row.mean, row.var, grid.quadrature_nodes);
    const auto slice = v.bind(row.t, row.y, m);
    double factor = 0.0;
    if (c.has_factor()) {
      Eigen::VectorXd yv = Eigen::VectorXd::Constant(1, row.y), k(1);
      Eigen::MatrixXd g(1, 1), g0(1, 1);
      c.factor_drift(row.t, yv, k);
      c.factor_sigma(row.t, yv, g);
      c.factor_sigma0(row.t, yv, g0);
      factor = k(0) * slice->dy() + 0.5 * (g(0, 0) * g(0, 0) + g0(0, 0) * g0(0, 0)) * slice->dyy();
    }
    const AffineSup s = affine_sup(problem, *slice, row.t, row.y, m, grid.family);
    row.residual = -slice->dt() - factor - s.value;
    row.c0 = s.c0;
    row.c1 = s.c1;
  });
  for (const auto& row : table.rows) table.max_abs_residual = std::max(table.max_abs_residual, std::abs(row.residual));
  for (double y : grid.factors) {
    for (double mu : grid.means) {
      for (double var : grid.variances) {
        const EmpiricalMeasure m = gaussian_surrogate(mu, var, grid.quadrature_nodes);
        table.terminal_gap = std::max(table.terminal_gap, std::abs(v.value(problem.horizon, y, m) - problem.terminal(y, m)));
      }
    }
  }
  return table;
}

double lq_control_bound(const OdeSolution& riccati, const HjbGrid& grid) {
  const auto [z, w] = gauss_hermite_normal(grid.quadrature_nodes);
  double sup = 0.0;
  for (double t : grid.times) {
    const Eigen::VectorXd c = riccati.state(t);
    for (double mu : grid.means) {
      for (double var : grid.variances) {
        for (Eigen::Index k = 0; k < z.size(); ++k) {
          sup = std::max(sup, std::abs(2 * c(1) * mu + 2 * c(0) * std::sqrt(var) * z(k)));
        }
      }
    }
  }
  return 2 * sup;
}

// ---- Monte Carlo ----

namespace {

DppResult controlled_paths(const ControlProblem& problem, const FeedbackControl& control, double t, double theta,
                           const McSetup& setup,
                           const std::function<double(const ParticleEnsemble&, double y_end)>& closing) {
  problem.validate();
  if (!(theta > t)) throw std::invalid_argument("dpp_check: need theta > t");
  if (theta > problem.horizon + 1e-12) throw std::invalid_argument("dpp_check: theta beyond the horizon");
  if (setup.outer_paths < 2 || setup.steps == 0) throw std::invalid_argument("dpp_check: need M >= 2 and n >= 1");
  if (!(setup.var >= 0.0)) throw std::invalid_argument("dpp_check: negative initial variance");
  EnsembleConfig config;
  config.coeffs = problem.coeffs;
  config.initial = InitialLaw::gaussian(Eigen::VectorXd::Constant(1, setup.mean), Eigen::MatrixXd::Constant(1, 1, setup.var));
  config.particles = setup.particles;
  config.partition = Partition::uniform(theta - t, setup.steps);
  config.control = [&problem, &control, t](double s, const ConstVecRef& x, const MeasureMoments& m) {
    return problem.clamp(control(t + s, x(0), m));
  };
  if (problem.coeffs.has_factor()) config.factor_initial = Eigen::VectorXd::Constant(1, setup.y);

  DppResult res;
  res.mesh = config.partition.mesh();
  res.per_path.resize(setup.outer_paths);
  parallel_for(setup.outer_paths, setup.threads, [&](std::size_t r) {
    const ParticleEnsemble ens = simulate_ensemble(config, setup.seed, static_cast<std::uint32_t>(r));
    const Partition& p = ens.partition();
    double running = 0.0;
    const double n = static_cast<double>(ens.particles());
    for (std::size_t k = 0; k < ens.steps(); ++k) {
      const MeasureMoments mm = ens.moments(k);
      const double y = ens.factor_path() ? ens.factor_path()->value(k)(0) : setup.y;
      const Eigen::VectorXd a = ens.controls(k);
      const Eigen::MatrixXd& x = ens.state(k);
      double acc = 0.0;
      for (Eigen::Index i = 0; i < x.cols(); ++i) acc += problem.running(t + p.time(k), y, mm, x(0, i), a(i));
      running += acc / n * p.step(k);
    }
    const double y_end = ens.factor_path() ? ens.factor_path()->terminal()(0) : setup.y;
    res.per_path[r] = running + closing(ens, y_end);
  });
  const MeanSe s = mean_se(res.per_path);
  res.estimate = s.mean;
  res.std_error = s.se;
  return res;
}

}  // namespace

DppResult dpp_check(const ControlProblem& problem, const ValueCandidate& v, const FeedbackControl& control, double t,
                    double theta, const McSetup& setup) {
  return controlled_paths(problem, control, t, theta, setup, [&](const ParticleEnsemble& ens, double y_end) {
    return v.value(theta, y_end, ens.measure(ens.steps())) - v.value(t, setup.y, ens.measure(0));
  });
}

DppResult policy_value(const ControlProblem& problem, const FeedbackControl& control, double t, const McSetup& setup) {
  return controlled_paths(problem, control, t, problem.horizon, setup, [&](const ParticleEnsemble& ens, double y_end) {
    return problem.terminal(y_end, ens.measure(ens.steps()));
  });
}

double lq_constant_control_gap(const LqParams& p, const OdeSolution& riccati, double a, double t, double theta,
                               double mean, double var) {
  if (!(theta > t)) throw std::invalid_argument("lq_constant_control_gap: need theta > t");
  const double tau = theta - t;
  auto var_at = [&](double s) { return var + p.sigma * p.sigma * s; };
  auto mean_sq_at = [&](double s) { return (mean + a * s) * (mean + a * s) + p.sigma0 * p.sigma0 * s; };
  const auto [nodes, weights] = gauss_legendre_unit(8);
  double running = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    const double s = tau * nodes(k);
    running += weights(k) * (-0.5 * a * a - 0.5 * p.q * var_at(s) - 0.5 * p.r * mean_sq_at(s));
  }
  running *= tau;
  const Eigen::VectorXd c1 = riccati.state(theta), c0 = riccati.state(t);
  const double v_end = c1(0) * var_at(tau) + c1(1) * mean_sq_at(tau) + c1(2);
  const double v_start = c0(0) * var + c0(1) * mean * mean + c0(2);
  return running + v_end - v_start;
}

FeedbackControl lq_optimal_feedback(std::shared_ptr<const OdeSolution> riccati) {
  return FeedbackControl(
      [riccati](double t, double x, const MeasureMoments& m) {
        const Eigen::VectorXd c = riccati->state(t);
        const double mu = m.mean(0);
        return 2 * c(1) * mu + 2 * c(0) * (x - mu);
      },
      "riccati-optimal");
}

// ---- Lipschitz audit ----

LipschitzAudit lipschitz_audit(const ControlProblem& problem, const OdeSolution& riccati, double t, double c0, double c1,
                               std::size_t pairs, std::uint64_t seed) {
  if (!problem.lq) throw std::invalid_argument("lipschitz_audit: needs the LQ instance");
  if (pairs == 0) throw std::invalid_argument("lipschitz_audit: need at least one pair");
  const LqParams& p = *problem.lq;
  const Eigen::VectorXd pr = riccati.state(t);
  const double P = pr(0), R = pr(1);
  const FeedbackControl a = FeedbackControl::affine(c0, c1);
  const QuadraticMomentValue v(
      [&riccati](double s) { return Eigen::Vector3d(riccati.state(s)); },
      [&riccati](double s) { return Eigen::Vector3d(riccati.derivative(s)); });
  auto phi = [&](double mu, double sd, std::size_t nodes) {
    const EmpiricalMeasure m = gaussian_surrogate(mu, sd * sd, nodes);
    return generator(problem, v, t, 0.0, m, a);
  };
  auto ratio = [&](double mu, double sd, double mu2, double sd2, std::size_t nodes) {
    const EmpiricalMeasure m = gaussian_surrogate(mu, sd * sd, nodes), m2 = gaussian_surrogate(mu2, sd2 * sd2, nodes);
    const double w = std::sqrt(w2_squared(m, m2));
    return std::abs(phi(mu2, sd2, nodes) - phi(mu, sd, nodes)) / w;
  };
  const RngStream rng(seed, 0);
  const double k_scale = -0.5 * c1 * c1 + 2 * P * c1 - 0.5 * p.q;
  LipschitzAudit audit;
  audit.pass = true;
  double scaling_max = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    double u[4];
    rng.uniforms(static_cast<std::uint32_t>(i), 0, u);
    const double mu = -1.0 + 2.0 * u[0];
    const double sd = 0.5 + 0.6 * u[1];
    LipschitzRow row;
    row.mean = mu;
    row.sd = sd;
    if (i % 2 == 0) {
      double delta = -0.5 + u[2];
      if (std::abs(delta) < 1e-3) delta = 1e-3;
      row.kind = "translation";
      row.mean2 = mu + delta;
      row.sd2 = sd;
      row.oracle = std::abs(2 * R * c0 - p.r * (mu + delta / 2));
    } else {
      double sd2 = 0.5 + 0.6 * u[3];
      if (std::abs(sd2 - sd) < 1e-3) sd2 = sd + 1e-3;
      row.kind = "scaling";
      row.mean2 = mu;
      row.sd2 = sd2;
      row.oracle = std::abs(k_scale) * (sd + sd2);
    }
    row.ratio = ratio(row.mean, row.sd, row.mean2, row.sd2, 32);
    const double coarse = ratio(row.mean, row.sd, row.mean2, row.sd2, 16);
    if (!std::isfinite(row.ratio) || !std::isfinite(coarse)) audit.pass = false;
    audit.max_ratio = std::max(audit.max_ratio, row.ratio);
    audit.max_ratio_coarse = std::max(audit.max_ratio_coarse, coarse);
    if (row.kind == "scaling") scaling_max = std::max(scaling_max, row.ratio);
    const double gap = std::abs(row.ratio - row.oracle) / std::max(row.oracle, 1e-12);
    audit.max_oracle_gap = std::max(audit.max_oracle_gap, gap);
    audit.rows.push_back(row);
  }
  // Scaling ratios stay below |k| (2 sd_max), up to 10%.
  const double scaling_bound = std::abs(k_scale) * 2 * 1.1;
  audit.pass = audit.pass && std::isfinite(audit.max_ratio) &&
               std::abs(audit.max_ratio - audit.max_ratio_coarse) <= 1e-6 * std::max(1.0, audit.max_ratio) &&
               scaling_max <= 1.1 * scaling_bound;
  return audit;
}

}  // namespace condflow
