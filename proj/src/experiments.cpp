#include "condflow/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "condflow/particle.hpp"
#include "condflow/quadvar.hpp"
#include "condflow/stats.hpp"

namespace condflow {

namespace {

using json = nlohmann::json;

CylindricalFunctional zero_functional() {
  const auto c = builtin_functional("constant");
  auto z = linear_combination(0.0, c, 0.0, c);
  return CylindricalFunctional("zero", z.outer_ptr(), z.tests());
}

/// A designed check: the mean of a term (or diagnostic) should equal `multiple` * T.
struct ExpectedColumn {
  std::string column;
  bool diagnostic = false;
  double multiple = 1.0;
};

std::vector<ExpectedColumn> expected_columns(const std::string& instance) {
  if (instance == "ablation-common") return {{"ablation_residual", true, 1.0}};
  if (instance == "brownian-designed") return {{"psi0_bracket", false, 1.0}};
  if (instance == "factor-y-mean") return {{"xy_bracket", false, 1.0}};
  return {};
}

std::uint64_t require_seed(const ExperimentConfig& c) {
  if (!c.seed) throw ConfigError("config: a seed is required (set 'seed' or pass --seed)");
  return *c.seed;
}

bool uses_root_sizes(const std::string& experiment) { return experiment == "verify-ito" || experiment == "sweep"; }

json mean_se_json(const MeanSe& s) { return {{"mean", s.mean}, {"se", s.se}}; }

/// Adds designed-instance checks to a report; returns false when one fails.
bool designed_checks(const VerificationReport& rep, const std::string& instance, double c, json& out) {
  bool ok = true;
  out = json::array();
  for (const auto& e : expected_columns(instance)) {
    const MeanSe s = e.diagnostic ? rep.diagnostic_stats(e.column) : rep.term_stats(e.column);
    const double expected = e.multiple * rep.horizon;
    const double bound = 3.0 * s.se + c * rep.mesh;
    const bool pass = std::abs(s.mean - expected) <= bound;
    ok = ok && pass;
    out.push_back({{"column", e.column}, {"expected", expected}, {"mean", s.mean}, {"se", s.se}, {"bound", bound}, {"pass", pass}});
  }
  return ok;
}

RunResult verification_result(const std::string& name, const VerificationReport& rep, const std::string& instance,
                              const ExperimentConfig& config) {
  RunResult r;
  r.experiment = name;
  r.report = report_json(rep);
  r.report["instance"] = instance;
  json checks;
  const bool designed = designed_checks(rep, instance, config.tolerance.c, checks);
  r.report["designed_checks"] = checks;
  r.pass = rep.aggregate.pass && designed;
  r.report["pass"] = r.pass;
  r.tables.push_back(terms_table(rep));
  return r;
}

// ---- chain-rule experiments ----

RunResult run_verify_ito(const ExperimentConfig& c) {
  const auto u = builtin_functional(c.functional, 1);
  const auto rep = verify_ito(u, make_ensemble_config(c), make_verify_options(c));
  return verification_result("verify-ito", rep, "", c);
}

RunResult run_verify_wentzell(const ExperimentConfig& c) {
  const std::string inst = c.instance.empty() ? "ablation-common" : c.instance;
  const auto rep = verify_ito_wentzell(registry_field(inst), make_ensemble_config(c), make_verify_options(c));
  return verification_result("verify-wentzell", rep, inst, c);
}

RunResult run_verify_brownian(const ExperimentConfig& c) {
  const std::string inst = c.instance.empty() ? "brownian-designed" : c.instance;
  const auto rep = verify_brownian_corollary(registry_field(inst), make_ensemble_config(c), make_verify_options(c));
  return verification_result("verify-brownian", rep, inst, c);
}

RunResult run_verify_factor(const ExperimentConfig& c) {
  if (!c.factor.enabled) throw ConfigError("config: verify-factor needs a 'factor' section");
  const std::string inst = c.instance.empty() ? "factor-y-mean" : c.instance;
  const auto rep = verify_factor_model(registry_factor(inst), make_ensemble_config(c), make_verify_options(c));
  return verification_result("verify-factor", rep, inst, c);
}

RunResult run_sweep(const ExperimentConfig& c) {
  if (c.sweep.empty()) throw ConfigError("config: sweep needs 'sweep.cells'");
  const auto u = builtin_functional(c.functional, 1);
  const Verifier verifier = [&](const SweepCell& cell) {
    ExperimentConfig cc = c;
    cc.sizes = {cell.n, cell.particles, cell.outer_paths};
    return verify_ito(u, make_ensemble_config(cc), make_verify_options(cc));
  };
  const SweepTable table = convergence_sweep(verifier, c.sweep);
  RunResult r;
  r.experiment = "sweep";
  CsvTable csv{"sweep.csv", {"n", "N", "M", "mean_abs", "se_abs", "mean_signed", "se_signed", "q90_abs", "bound", "pass"}, {}};
  json rows = json::array();
  for (const auto& row : table.rows) {
    const auto& a = row.aggregate;
    csv.rows.push_back({std::to_string(row.cell.n), std::to_string(row.cell.particles), std::to_string(row.cell.outer_paths),
                        csv_number(a.mean_abs), csv_number(a.se_abs), csv_number(a.mean_signed), csv_number(a.se_signed),
                        csv_number(a.q90_abs), csv_number(a.bound), a.pass ? "1" : "0"});
    rows.push_back({{"n", row.cell.n}, {"particles", row.cell.particles}, {"outer_paths", row.cell.outer_paths},
                    {"mean_abs", a.mean_abs}, {"se_abs", a.se_abs}, {"bound", a.bound}, {"pass", a.pass}});
  }
  auto flag = [](const std::optional<bool>& f) { return f ? json(*f) : json(nullptr); };
  r.pass = table.n_trend.value_or(true) && table.particle_trend.value_or(true);
  r.report = {{"experiment", "sweep"}, {"functional", c.functional}, {"rows", rows}, {"n_trend", flag(table.n_trend)},
              {"particle_trend", flag(table.particle_trend)}, {"pass", r.pass}};
  r.tables.push_back(std::move(csv));
  return r;
}

// ---- quadratic variation and derivatives ----

RunResult run_lemma(const ExperimentConfig& c) {
  const auto inst = lemma_brownian(c.lemma.sigma, c.lemma.weight);
  const LemmaStudy study = lemma_convergence_study(inst, c.lemma.n_list, c.lemma.seeds, require_seed(c));
  RunResult r;
  r.experiment = "lemma-qv";
  CsvTable csv{"lemma_qv.csv", {"n", "mean_abs_error", "stderr", "ratio", "ratio_flag"}, {}};
  json rows = json::array();
  for (const auto& row : study.rows) {
    csv.rows.push_back({std::to_string(row.n), csv_number(row.mean_abs_error), csv_number(row.std_error),
                        row.ratio ? csv_number(*row.ratio) : "", row.ratio_ok ? (*row.ratio_ok ? "1" : "0") : ""});
    rows.push_back({{"n", row.n}, {"mean_abs_error", row.mean_abs_error}, {"stderr", row.std_error},
                    {"ratio", row.ratio ? json(*row.ratio) : json(nullptr)},
                    {"ratio_ok", row.ratio_ok ? json(*row.ratio_ok) : json(nullptr)}});
  }
  const double last = study.rows.back().mean_abs_error;
  const bool small = last < c.lemma.max_error;
  r.pass = study.trend_ok() && small;
  r.report = {{"experiment", "lemma-qv"}, {"instance", study.instance}, {"seeds", study.seeds}, {"rows", rows},
              {"trend_ok", study.trend_ok()}, {"final_error", last}, {"max_error", c.lemma.max_error},
              {"pass", r.pass}};
  r.tables.push_back(std::move(csv));
  return r;
}

RunResult run_deriv(const ExperimentConfig& c) {
  std::vector<std::string> names = c.deriv.functionals.empty() ? builtin_functional_names() : c.deriv.functionals;
  Eigen::MatrixXd a(1, 5), b(1, 4);
  a << -0.8, -0.1, 0.35, 0.9, 1.4;
  b << -0.5, 0.2, 0.6, 1.1;
  const EmpiricalMeasure m(a), mp(b);
  RunResult r;
  r.experiment = "deriv-check";
  r.pass = true;
  CsvTable csv{"deriv_check.csv", {"functional", "kind", "eps", "error", "order"}, {}};
  json items = json::array();
  for (const auto& name : names) {
    const auto u = builtin_functional(name, 1);
    const FdTable t1 = fd_check_dm(u, m, mp, c.deriv.eps);
    const FdTable t2 = fd_check_dm2(u, m, mp, c.deriv.eps);
    for (const auto* t : {&t1, &t2}) {
      for (const auto& row : t->rows) {
        csv.rows.push_back({name, t == &t1 ? "dm" : "dm2", csv_number(row.eps), csv_number(row.error),
                            row.order ? csv_number(*row.order) : ""});
      }
    }
    const bool poly = u.outer().polynomial();
    double gap = integral_identity_gap(u, m, mp);
    double gap2 = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) gap2 = std::max(gap2, integral_identity_gap2(u, m, mp, a.col(i)));
    const bool identity_ok = !poly || (gap < c.deriv.identity_tol && gap2 < c.deriv.identity_tol);
    const bool ok = t1.passes() && t2.passes() && identity_ok;
    r.pass = r.pass && ok;
    items.push_back({{"functional", name}, {"dm_pass", t1.passes()}, {"dm2_pass", t2.passes()}, {"polynomial", poly},
                     {"identity_gap", gap}, {"identity_gap2", gap2}, {"pass", ok}});
  }
  r.report = {{"experiment", "deriv-check"}, {"functionals", items}, {"identity_tol", c.deriv.identity_tol}, {"pass", r.pass}};
  r.tables.push_back(std::move(csv));
  return r;
}

// ---- control ----

struct LqSetup {
  std::shared_ptr<const OdeSolution> riccati;
  HjbGrid grid;
  ControlProblem problem;
};

LqSetup lq_setup(const ExperimentConfig& c) {
  auto ric = std::make_shared<const OdeSolution>(solve_lq_riccati(c.lq.params));
  HjbGrid grid = default_hjb_grid(c.lq.params.horizon);
  const double a_max = lq_control_bound(*ric, grid);
  return {ric, grid, ControlProblem::linear_quadratic(c.lq.params, a_max)};
}

CsvTable hjb_table(const HjbTable& t, const std::string& name) {
  CsvTable csv{name, {"t", "y", "mean", "var", "residual", "c0", "c1"}, {}};
  for (const auto& row : t.rows) {
    csv.rows.push_back({csv_number(row.t), csv_number(row.y), csv_number(row.mean), csv_number(row.var),
                        csv_number(row.residual), csv_number(row.c0), csv_number(row.c1)});
  }
  return csv;
}

RunResult run_hjb(const ExperimentConfig& c) {
  const std::uint64_t seed = require_seed(c);
  const LqSetup s = lq_setup(c);
  const QuadraticMomentValue v(s.riccati);
  const QuadraticMomentValue perturbed(s.riccati, c.lq.perturbation);
  const HjbTable table = hjb_residual(s.problem, v, s.grid, c.threads);
  const HjbTable ptable = hjb_residual(s.problem, perturbed, s.grid, c.threads);
  const bool hjb_ok = table.max_abs_residual <= c.tolerance.tol_hjb;
  const bool terminal_ok = table.terminal_gap == 0.0;
  const bool perturbed_ok = ptable.max_abs_residual >= c.lq.perturbation_floor;

  RunResult r;
  r.experiment = "hjb-lq";
  json nodes = json::array();
  bool mc_ok = true;
  double family_gap = 0.0;
  const auto feedback = lq_optimal_feedback(s.riccati);
  for (std::size_t i = 0; i < c.lq.mc_nodes.size(); ++i) {
    const auto [t, mean, var] = c.lq.mc_nodes[i];
    McSetup mc;
    mc.mean = mean;
    mc.var = var;
    mc.particles = c.lq.mc_particles;
    mc.outer_paths = c.lq.mc_paths;
    mc.steps = c.lq.mc_steps;
    mc.seed = seed + i + 1;
    mc.threads = c.threads;
    const DppResult pv = policy_value(s.problem, feedback, t, mc);
    const EmpiricalMeasure m = gaussian_surrogate(mean, var, s.grid.quadrature_nodes);
    const double value = v.value(t, 0.0, m);
    const bool ok = std::abs(pv.estimate - value) <= 3.0 * pv.std_error;
    mc_ok = mc_ok && ok;
    // Restriction to the affine family, measured against piecewise-constant feedbacks.
    const auto slice = v.bind(t, 0.0, m);
    const double affine = affine_sup(s.problem, *slice, t, 0.0, m, s.grid.family).value;
    const double piecewise = piecewise_sup(s.problem, *slice, t, 0.0, m);
    family_gap = std::max(family_gap, piecewise - affine);
    nodes.push_back({{"t", t}, {"mean", mean}, {"var", var}, {"value", value}, {"estimate", pv.estimate},
                     {"se", pv.std_error}, {"mesh", pv.mesh}, {"pass", ok}, {"affine_sup", affine},
                     {"piecewise_sup", piecewise}});
  }
  const bool family_ok = family_gap <= c.tolerance.tol_hjb;
  const LipschitzAudit audit = lipschitz_audit(s.problem, *s.riccati, 0.5 * c.lq.params.horizon, 0.3, -1.0, 40, seed);
  CsvTable lip{"lipschitz.csv", {"kind", "mean", "sd", "mean2", "sd2", "ratio", "oracle"}, {}};
  for (const auto& row : audit.rows) {
    lip.rows.push_back({row.kind, csv_number(row.mean), csv_number(row.sd), csv_number(row.mean2), csv_number(row.sd2),
                        csv_number(row.ratio), csv_number(row.oracle)});
  }
  const Eigen::VectorXd z0 = s.riccati->state(0.0);
  r.pass = hjb_ok && terminal_ok && perturbed_ok && mc_ok && family_ok && audit.pass;
  r.report = {
      {"experiment", "hjb-lq"},
      {"instance", s.problem.name},
      {"riccati", {{"halvings", s.riccati->halvings}, {"steps", s.riccati->steps()}, {"refinement_gap", s.riccati->refinement_gap},
                   {"P0", z0(0)}, {"R0", z0(1)}, {"c0", z0(2)}}},
      {"a_max", s.problem.a_max},
      {"hjb", {{"max_abs_residual", table.max_abs_residual}, {"tol_hjb", c.tolerance.tol_hjb}, {"pass", hjb_ok}}},
      {"terminal", {{"gap", table.terminal_gap}, {"pass", terminal_ok}}},
      {"perturbed", {{"eps", c.lq.perturbation}, {"max_abs_residual", ptable.max_abs_residual},
                     {"floor", c.lq.perturbation_floor}, {"pass", perturbed_ok}}},
      {"monte_carlo", nodes},
      {"family_gap", {{"value", family_gap}, {"pass", family_ok}}},
      {"lipschitz", {{"max_ratio", audit.max_ratio}, {"max_ratio_coarse", audit.max_ratio_coarse},
                     {"max_oracle_gap", audit.max_oracle_gap}, {"pass", audit.pass}}},
      {"pass", r.pass}};
  r.tables.push_back(hjb_table(table, "hjb_residual.csv"));
  r.tables.push_back(hjb_table(ptable, "hjb_perturbed.csv"));
  r.tables.push_back(std::move(lip));
  return r;
}

RunResult run_dpp(const ExperimentConfig& c) {
  const std::uint64_t seed = require_seed(c);
  const LqSetup s = lq_setup(c);
  const QuadraticMomentValue v(s.riccati);
  McSetup mc;
  mc.mean = c.dpp.mean;
  mc.var = c.dpp.var;
  mc.particles = c.sizes.particles;
  mc.outer_paths = c.sizes.outer_paths;
  mc.steps = c.sizes.n;
  mc.seed = seed;
  mc.threads = c.threads;
  RunResult r;
  r.experiment = "dpp-check";
  r.pass = true;
  r.report = {{"experiment", "dpp-check"}, {"instance", s.problem.name}, {"t", c.dpp.t}, {"theta", c.dpp.theta},
              {"a_max", s.problem.a_max}};
  std::optional<DppResult> opt, con;
  if (c.dpp.control != "constant") {
    opt = dpp_check(s.problem, v, lq_optimal_feedback(s.riccati), c.dpp.t, c.dpp.theta, mc);
    const double bound = 3.0 * opt->std_error + c.tolerance.c_dpp * opt->mesh;
    const bool ok = std::abs(opt->estimate) <= bound;
    r.pass = r.pass && ok;
    r.report["optimal"] = {{"estimate", opt->estimate}, {"se", opt->std_error}, {"mesh", opt->mesh}, {"bound", bound},
                           {"verdict", ok ? "gap = 0 within 3 SE + C dt" : "gap != 0"}, {"pass", ok}};
  }
  if (c.dpp.control != "optimal") {
    const double a = s.problem.a_max;
    con = dpp_check(s.problem, v, FeedbackControl::constant(a), c.dpp.t, c.dpp.theta, mc);
    const double oracle = lq_constant_control_gap(c.lq.params, *s.riccati, a, c.dpp.t, c.dpp.theta, c.dpp.mean, c.dpp.var);
    const double rel = std::abs(con->estimate - oracle) / std::abs(oracle);
    const bool negative = con->estimate < -3.0 * con->std_error;
    const bool ok = negative && rel <= c.dpp.band;
    r.pass = r.pass && ok;
    r.report["constant"] = {{"a", a}, {"estimate", con->estimate}, {"se", con->std_error}, {"oracle", oracle},
                            {"relative_gap", rel}, {"band", c.dpp.band},
                            {"verdict", negative ? "gap < 0 beyond 3 SE" : "gap not below -3 SE"}, {"pass", ok}};
  }
  CsvTable csv{"dpp_paths.csv", {"path", "optimal", "constant"}, {}};
  const std::size_t m = opt ? opt->per_path.size() : con->per_path.size();
  bool ordered = true;
  for (std::size_t i = 0; i < m; ++i) {
    csv.rows.push_back({std::to_string(i), opt ? csv_number(opt->per_path[i]) : "", con ? csv_number(con->per_path[i]) : ""});
    if (opt && con && opt->per_path[i] < con->per_path[i]) ordered = false;
  }
  if (opt && con) {
    r.report["pathwise_ordering"] = ordered;
    r.pass = r.pass && ordered;
  }
  r.report["pass"] = r.pass;
  r.tables.push_back(std::move(csv));
  return r;
}

// ---- measure flow ----

RunResult run_modulus(const ExperimentConfig& c) {
  const std::uint64_t seed = require_seed(c);
  const EnsembleConfig ec = make_ensemble_config(c);
  std::vector<ParticleEnsemble> ensembles;
  ensembles.reserve(c.sizes.outer_paths);
  for (std::size_t r = 0; r < c.sizes.outer_paths; ++r) ensembles.push_back(simulate_ensemble(ec, seed, static_cast<std::uint32_t>(r)));
  const RngStream pick = RngStream::for_role(seed, 0, StreamRole::kUser);
  const std::size_t n = c.sizes.n;
  RunResult res;
  res.experiment = "flow-modulus";
  res.pass = true;
  CsvTable csv{"flow_modulus.csv", {"s", "t", "modulus", "stderr", "exact_w2", "bound", "pass"}, {}};
  for (std::size_t i = 0; i < c.modulus.pairs; ++i) {
    double u[2];
    pick.uniforms(static_cast<std::uint32_t>(i), 0, u);
    std::size_t ks = std::min(n - 1, static_cast<std::size_t>(u[0] * static_cast<double>(n)));
    std::size_t kt = ks + 1 + std::min(n - ks - 1, static_cast<std::size_t>(u[1] * static_cast<double>(n - ks)));
    const ModulusEstimate e = measure_flow_modulus(ensembles, ks, kt);
    res.pass = res.pass && e.pass;
    csv.rows.push_back({csv_number(e.s), csv_number(e.t), csv_number(e.modulus), csv_number(e.std_error),
                        csv_number(e.exact_w2), csv_number(e.bound), e.pass ? "1" : "0"});
  }
  res.report = {{"experiment", "flow-modulus"}, {"pairs", c.modulus.pairs}, {"pass", res.pass}};
  res.tables.push_back(std::move(csv));
  return res;
}

}  // namespace

// ---- registry ----

std::vector<std::string> list_registry() {
  std::vector<std::string> names = builtin_functional_names();
  for (const char* s : {"ablation-common", "brownian-designed", "wentzell-mixed", "factor-y-mean", "factor-time",
                        "lq-common-noise"}) {
    names.emplace_back(s);
  }
  std::sort(names.begin(), names.end());
  return names;
}

RandomFieldSpec registry_field(const std::string& name) {
  auto driver = [](std::string n, const std::string& f, DriverKind k, DriverSource s) {
    FieldDriver d{std::move(n), builtin_functional(f), k, s, 0, 1.0, {}};
    return d;
  };
  if (name == "ablation-common") {
    return {zero_functional(), {driver("psi0", "mean", DriverKind::kMartingale, DriverSource::kCommon)}};
  }
  if (name == "brownian-designed") {
    return {builtin_functional("second-moment"),
            {driver("phi", "cosine-of-mean", DriverKind::kFiniteVariation, DriverSource::kTime),
             driver("psi", "mean", DriverKind::kMartingale, DriverSource::kIdiosyncratic),
             driver("psi0", "mean", DriverKind::kMartingale, DriverSource::kCommon)}};
  }
  if (name == "wentzell-mixed") {
    RandomFieldSpec s{builtin_functional("mean-squared"),
                      {driver("b", "variance", DriverKind::kFiniteVariation, DriverSource::kCommonDensity),
                       driver("n_common", "mean-squared", DriverKind::kMartingale, DriverSource::kCommon),
                       driver("n_indep", "second-moment", DriverKind::kMartingale, DriverSource::kIndependent)}};
    s.drivers[1].integrand = [](double t) { return std::cos(t); };
    return s;
  }
  throw ConfigError("registry: unknown random-field instance '" + name + "'");
}

FactorFunctional registry_factor(const std::string& name) {
  if (name == "factor-y-mean") return FactorFunctional::y_times(builtin_functional("mean"));
  if (name == "factor-time") return FactorFunctional::time();
  throw ConfigError("registry: unknown factor instance '" + name + "'");
}

EnsembleConfig make_ensemble_config(const ExperimentConfig& c) {
  const auto& k = c.coefficients;
  EnsembleConfig e;
  e.coeffs = SdeCoefficients::scalar(k.drift, k.sigma, k.sigma0, k.mean_reversion, 0.0);
  if (c.factor.enabled) {
    e.coeffs = e.coeffs.with_scalar_factor(c.factor.k, c.factor.gamma, c.factor.gamma0);
    e.factor_initial = Eigen::VectorXd::Constant(1, c.factor.y0);
  }
  e.initial = k.x0_var > 0.0 ? InitialLaw::gaussian(Eigen::VectorXd::Constant(1, k.x0), Eigen::MatrixXd::Constant(1, 1, k.x0_var))
                             : InitialLaw::dirac(Eigen::VectorXd::Constant(1, k.x0));
  e.particles = c.sizes.particles;
  e.partition = Partition::uniform(k.horizon, c.sizes.n);
  return e;
}

VerifyOptions make_verify_options(const ExperimentConfig& c) {
  VerifyOptions o;
  o.outer_paths = c.sizes.outer_paths;
  o.seed = require_seed(c);
  o.bracket = c.bracket;
  o.cross = c.cross;
  o.threads = c.threads;
  const bool root = uses_root_sizes(c.experiment);
  const std::string stat = c.tolerance.statistic.value_or(root ? "mean-abs" : "signed-mean");
  const std::string scale = c.tolerance.scale.value_or(root ? "root-sizes" : "mesh");
  o.tolerance.statistic = stat == "mean-abs" ? ToleranceRule::Statistic::kMeanAbs : ToleranceRule::Statistic::kSignedMean;
  o.tolerance.scale = scale == "mesh" ? ToleranceRule::Scale::kMesh : ToleranceRule::Scale::kRootSizes;
  o.tolerance.c = c.tolerance.c;
  o.tolerance.check_quantile = c.tolerance.check_quantile;
  return o;
}

// ---- output ----

std::string csv_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string CsvTable::render() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

std::string RunResult::payload() const {
  std::string out = report.dump(2) + "\n";
  for (const auto& t : tables) out += "# " + t.name + "\n" + t.render();
  return out;
}

json report_json(const VerificationReport& rep) {
  json terms = json::object(), diags = json::object();
  for (const auto& n : rep.term_names) terms[n] = mean_se_json(rep.term_stats(n));
  for (const auto& n : rep.diagnostic_names) diags[n] = mean_se_json(rep.diagnostic_stats(n));
  const auto& a = rep.aggregate;
  const auto& t = rep.tolerance;
  return {{"experiment", rep.experiment},
          {"functional", rep.functional},
          {"n", rep.n},
          {"particles", rep.particles},
          {"outer_paths", rep.outer_paths},
          {"horizon", rep.horizon},
          {"mesh", rep.mesh},
          {"tolerance",
           {{"statistic", t.statistic == ToleranceRule::Statistic::kMeanAbs ? "mean-abs" : "signed-mean"},
            {"scale", t.scale == ToleranceRule::Scale::kMesh ? "mesh" : "root-sizes"},
            {"c", t.c},
            {"check_quantile", t.check_quantile}}},
          {"aggregate",
           {{"mean_abs", a.mean_abs}, {"se_abs", a.se_abs}, {"mean_signed", a.mean_signed}, {"se_signed", a.se_signed},
            {"q90_abs", a.q90_abs}, {"bound", a.bound}, {"pass", a.pass}}},
          {"terms", terms},
          {"diagnostics", diags}};
}

CsvTable terms_table(const VerificationReport& rep) {
  CsvTable csv{"terms.csv", {"path", "lhs"}, {}};
  for (const auto& n : rep.term_names) csv.header.push_back(n);
  csv.header.push_back("residual");
  for (const auto& n : rep.diagnostic_names) csv.header.push_back(n);
  for (const auto& row : rep.rows) {
    std::vector<std::string> cells{std::to_string(row.path), csv_number(row.lhs)};
    for (double v : row.terms) cells.push_back(csv_number(v));
    cells.push_back(csv_number(row.residual));
    for (double v : row.diagnostics) cells.push_back(csv_number(v));
    csv.rows.push_back(std::move(cells));
  }
  return csv;
}

RunResult run_experiment(const ExperimentConfig& config) {
  const std::string& e = config.experiment;
  const auto& names = experiment_names();
  if (!std::binary_search(names.begin(), names.end(), e)) throw ConfigError("unknown experiment '" + e + "'");
  require_seed(config);
  if (e == "verify-ito") return run_verify_ito(config);
  if (e == "verify-wentzell") return run_verify_wentzell(config);
  if (e == "verify-brownian") return run_verify_brownian(config);
  if (e == "verify-factor") return run_verify_factor(config);
  if (e == "sweep") return run_sweep(config);
  if (e == "lemma-qv") return run_lemma(config);
  if (e == "deriv-check") return run_deriv(config);
  if (e == "hjb-lq") return run_hjb(config);
  if (e == "dpp-check") return run_dpp(config);
  if (e == "flow-modulus") return run_modulus(config);
  throw ConfigError("unknown experiment '" + e + "'");
}

std::vector<std::string> write_run(const RunResult& result, const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
    files.push_back(name);
  };
  write("report.json", result.report.dump(2) + "\n");
  for (const auto& t : result.tables) write(t.name, t.render());
  json manifest;
  manifest["version"] = kVersion;
  manifest["experiment"] = result.experiment;
  manifest["config"] = config_to_json(config);
  manifest["rng"] = {{"generator", "philox4x32-10"},
                     {"key", config.seed ? json(*config.seed) : json(nullptr)},
                     {"stream_id", "(outer << 8) | role"},
                     {"roles", {{"user", 0}, {"common_noise", 1}, {"idiosyncratic", 2}, {"factor_noise", 3},
                                {"initial_law", 4}, {"field_driver", 5}}},
                     {"outer_range", {0, config.sizes.outer_paths}}};
  std::vector<std::string> listed = files;
  listed.push_back("manifest.json");
  manifest["files"] = listed;
  manifest["pass"] = result.pass;
  write("manifest.json", manifest.dump(2) + "\n");
  return files;
}

}  // namespace condflow
