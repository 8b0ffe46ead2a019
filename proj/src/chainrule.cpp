#include "condflow/chainrule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "condflow/parallel.hpp"
#include "condflow/quadvar.hpp"

namespace condflow {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

/// Left-endpoint data of one Euler cell.
struct StepData {
  double t = 0.0;
  double dt = 0.0;
  Eigen::MatrixXd dx;      // d x N
  Eigen::MatrixXd sigma;   // (d*d) x N
  Eigen::MatrixXd sigma0;  // (d*d0) x N
  Eigen::MatrixXd drift;   // d x N
  Eigen::MatrixXd dw;      // d x N
  Eigen::VectorXd dw0;     // d0
};

StepData load_step(const ParticleEnsemble& ens, std::size_t k, bool diffusions, bool drift_and_noise) {
  StepData s;
  s.t = ens.partition().time(k);
  s.dt = ens.partition().step(k);
  s.dx = ens.state(k + 1) - ens.state(k);
  if (diffusions || drift_and_noise) ens.diffusions(k, s.sigma, s.sigma0);
  if (drift_and_noise) {
    s.drift = ens.drifts(k);
    s.dw = ens.idiosyncratic_increments(k);
    s.dw0 = ens.common_increment(k);
  }
  return s;
}

Eigen::VectorXd test_means(const TestEvaluation& ev) { return ev.value.rowwise().sum() / static_cast<double>(ev.value.cols()); }

double avg_dot(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.cwiseProduct(b).sum() / static_cast<double>(a.cols());
}

/// avg_i D_i . (S_i v_i) with S_i a (d x r) block stored column-major in `blocks`.
double avg_block_dot(const Eigen::MatrixXd& d_field, const Eigen::MatrixXd& blocks, const Eigen::MatrixXd& v) {
  const Index d = d_field.rows();
  const Index r = v.rows();
  double acc = 0.0;
  for (Index i = 0; i < d_field.cols(); ++i) {
    const Eigen::Map<const Eigen::MatrixXd> s(blocks.col(i).data(), d, r);
    acc += d_field.col(i).dot(s * v.col(i));
  }
  return acc / static_cast<double>(d_field.cols());
}

/// 1/2 avg_i H_i : S_i with S_i the bracket increment of particle i.
double second_order(const Eigen::MatrixXd& hx, const StepData& s, BracketMode mode, Index d, Index d0) {
  const Index n = hx.cols();
  double acc = 0.0;
  if (mode == BracketMode::kRealized) {
    for (Index i = 0; i < n; ++i) {
      const Eigen::Map<const Eigen::MatrixXd> h(hx.col(i).data(), d, d);
      acc += s.dx.col(i).dot(h * s.dx.col(i));
    }
  } else if (d == 1 && d0 == 1) {
    acc = (hx.row(0).array() * (s.sigma.row(0).array().square() + s.sigma0.row(0).array().square())).sum() * s.dt;
  } else {
    for (Index i = 0; i < n; ++i) {
      const Eigen::Map<const Eigen::MatrixXd> h(hx.col(i).data(), d, d);
      const Eigen::Map<const Eigen::MatrixXd> sg(s.sigma.col(i).data(), d, d);
      const Eigen::Map<const Eigen::MatrixXd> sg0(s.sigma0.col(i).data(), d, d0);
      const Eigen::MatrixXd cov = sg * sg.transpose() + sg0 * sg0.transpose();
      acc += h.cwiseProduct(cov).sum() * s.dt;
    }
  }
  return 0.5 * acc / static_cast<double>(n);
}

/// 1/2 E0 Ehat0 d_x d_xhat delta_m^2 u : d<X, Xhat> over distinct particles,
/// using the product structure sum_ab H_ab grad phi_a(x) grad phi_b(xhat)^T.
double cross_term(const FunctionalSlice& sl, const TestEvaluation& ev, const StepData& s, CrossMode mode, Index d, Index d0) {
  const Eigen::MatrixXd& h = sl.outer_hessian();
  if (h.isZero(0.0)) return 0.0;
  const Index k = h.rows();
  const Index n = ev.value.cols();
  const Index r = mode == CrossMode::kAnalytic ? d0 : 1;
  std::vector<Eigen::MatrixXd> g(static_cast<std::size_t>(k));
  std::vector<Eigen::VectorXd> gsum(static_cast<std::size_t>(k));
  const double sq = std::sqrt(s.dt);
  for (Index a = 0; a < k; ++a) {
    if (h.row(a).isZero(0.0)) continue;
    const Eigen::MatrixXd& grad = ev.gradient[static_cast<std::size_t>(a)];
    Eigen::MatrixXd ga(r, n);
    for (Index i = 0; i < n; ++i) {
      if (mode == CrossMode::kAnalytic) {
        const Eigen::Map<const Eigen::MatrixXd> sg0(s.sigma0.col(i).data(), d, d0);
        ga.col(i) = sq * (sg0.transpose() * grad.col(i));
      } else {
        ga(0, i) = grad.col(i).dot(s.dx.col(i));
      }
    }
    gsum[static_cast<std::size_t>(a)] = ga.rowwise().sum();
    g[static_cast<std::size_t>(a)] = std::move(ga);
  }
  double acc = 0.0;
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) {
      if (h(a, b) == 0.0) continue;
      const auto& ga = g[static_cast<std::size_t>(a)];
      const auto& gb = g[static_cast<std::size_t>(b)];
      const double off = gsum[static_cast<std::size_t>(a)].dot(gsum[static_cast<std::size_t>(b)]) - ga.cwiseProduct(gb).sum();
      acc += h(a, b) * off;
    }
  }
  const double nn = static_cast<double>(n);
  return 0.5 * acc / (nn * (nn - 1.0));
}

void close_row(PathRow& row) {
  double r = row.lhs;
  for (double t : row.terms) r -= t;
  row.residual = r;
}

/// Cylindrical functional sum_p c_p F_p over concatenated tests.
CylindricalFunctional combine(const std::string& name, const std::vector<double>& coeffs,
                              const std::vector<std::shared_ptr<const OuterFunction>>& parts,
                              const std::vector<std::shared_ptr<const TestFunction>>& tests) {
  return CylindricalFunctional(name, std::make_shared<SumOuter>(coeffs, parts), tests);
}

double part_value(const OuterFunction& f, const Eigen::VectorXd& v, std::size_t offset) {
  return f.value(v.segment(idx(offset), idx(f.arity())));
}

bool any_curvature(const std::vector<std::shared_ptr<const TestFunction>>& tests) {
  return std::any_of(tests.begin(), tests.end(), [](const auto& t) { return t->hessian_bound() != 0.0; });
}

VerificationReport make_report(const std::string& experiment, const std::string& functional, const EnsembleConfig& config,
                               const VerifyOptions& options, std::vector<std::string> terms, std::vector<std::string> diagnostics) {
  options.tolerance.validate();
  if (options.outer_paths == 0) throw std::invalid_argument("verify: need at least one outer path");
  if (config.particles < 2) throw std::invalid_argument("verify: need N >= 2 particles");
  VerificationReport rep;
  rep.experiment = experiment;
  rep.functional = functional;
  rep.n = config.partition.cells();
  rep.particles = config.particles;
  rep.outer_paths = options.outer_paths;
  rep.horizon = config.partition.horizon();
  rep.mesh = config.partition.mesh();
  rep.term_names = std::move(terms);
  rep.diagnostic_names = std::move(diagnostics);
  rep.tolerance = options.tolerance;
  rep.rows.resize(options.outer_paths);
  return rep;
}

template <class PathFn>
void run_paths(VerificationReport& rep, const EnsembleConfig& config, const VerifyOptions& options, PathFn&& fn) {
  parallel_for(options.outer_paths, options.threads, [&](std::size_t r) {
    const auto outer = static_cast<std::uint32_t>(r);
    const ParticleEnsemble ens = simulate_ensemble(config, options.seed, outer);
    PathRow row = fn(ens, outer);
    row.path = outer;
    close_row(row);
    rep.rows[r] = std::move(row);
  });
  rep.finalize();
}

MeanSe column_stats(const VerificationReport& rep, const std::vector<std::string>& names, const std::string& name, bool diagnostic) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument("VerificationReport: unknown column '" + name + "'");
  const auto c = static_cast<std::size_t>(it - names.begin());
  std::vector<double> v;
  v.reserve(rep.rows.size());
  for (const auto& row : rep.rows) v.push_back(diagnostic ? row.diagnostics[c] : row.terms[c]);
  return mean_se(v);
}

}  // namespace

void ToleranceRule::validate() const {
  if (!(c >= 0.0) || !std::isfinite(c)) throw std::invalid_argument("ToleranceRule: C must be finite and nonnegative");
}

MeanSe VerificationReport::term_stats(const std::string& name) const { return column_stats(*this, term_names, name, false); }

MeanSe VerificationReport::diagnostic_stats(const std::string& name) const {
  return column_stats(*this, diagnostic_names, name, true);
}

void VerificationReport::finalize() {
  if (rows.empty()) throw std::logic_error("VerificationReport: no rows");
  std::vector<double> abs_res, res;
  for (const auto& row : rows) {
    res.push_back(row.residual);
    abs_res.push_back(std::abs(row.residual));
  }
  const MeanSe a = mean_se(abs_res);
  const MeanSe s = mean_se(res);
  aggregate.mean_abs = a.mean;
  aggregate.se_abs = a.se;
  aggregate.mean_signed = s.mean;
  aggregate.se_signed = s.se;
  aggregate.q90_abs = quantile(abs_res, 0.9);
  const double scale = tolerance.scale == ToleranceRule::Scale::kMesh
                           ? mesh
                           : 1.0 / std::sqrt(static_cast<double>(n)) + 1.0 / std::sqrt(static_cast<double>(particles));
  const bool signed_stat = tolerance.statistic == ToleranceRule::Statistic::kSignedMean;
  const double stat = signed_stat ? std::abs(s.mean) : a.mean;
  aggregate.bound = 3.0 * (signed_stat ? s.se : a.se) + tolerance.c * scale;
  aggregate.pass = std::isfinite(stat) && stat <= aggregate.bound &&
                   (!tolerance.check_quantile || aggregate.q90_abs <= aggregate.bound);
}

// ---- Ito formula ----

VerificationReport verify_ito(const CylindricalFunctional& u, const EnsembleConfig& config, const VerifyOptions& options) {
  if (u.dim() != config.coeffs.state_dim) throw std::invalid_argument("verify_ito: functional dimension mismatch");
  VerificationReport rep = make_report("verify-ito", u.name(), config, options, {"stochastic", "second_order", "cross"}, {});
  const Index d = idx(config.coeffs.state_dim);
  const Index d0 = idx(config.coeffs.common_dim);
  const bool curved = any_curvature(u.tests());
  run_paths(rep, config, options, [&](const ParticleEnsemble& ens, std::uint32_t) {
    double stoch = 0.0, second = 0.0, cross = 0.0, u0 = 0.0;
    for (std::size_t k = 0; k < ens.steps(); ++k) {
      const TestEvaluation ev = u.evaluate_tests(ens.state(k), true, curved);
      const FunctionalSlice sl(u, test_means(ev));
      if (k == 0) u0 = sl.value();
      const bool need_sigma = (curved && options.bracket == BracketMode::kAnalytic) ||
                              (options.cross == CrossMode::kAnalytic && !sl.outer_hessian().isZero(0.0));
      const StepData s = load_step(ens, k, need_sigma, false);
      stoch += avg_dot(sl.d_lions(ev), s.dx);
      if (curved) second += second_order(sl.d2x_dm(ev), s, options.bracket, d, d0);
      cross += cross_term(sl, ev, s, options.cross, d, d0);
    }
    const double ut = FunctionalSlice(u, test_means(u.evaluate_tests(ens.state(ens.steps()), false, false))).value();
    PathRow row;
    row.lhs = ut - u0;
    row.terms = {stoch, second, cross};
    return row;
  });
  return rep;
}

// ---- random fields ----

RandomField::RandomField(const RandomFieldSpec& spec, const ParticleEnsemble& ensemble, const RngStream& independent)
    : spec_(spec) {
  const Partition& p = ensemble.partition();
  const std::size_t nd = spec_.drivers.size();
  const std::size_t n = p.cells();
  raw_.resize(idx(nd), idx(n));
  theta_.resize(idx(nd), idx(n));
  if (spec_.initial.dim() != ensemble.dim()) throw std::invalid_argument("RandomField: U_0 dimension mismatch");
  for (std::size_t j = 0; j < nd; ++j) {
    const auto& dr = spec_.drivers[j];
    if (dr.field.dim() != ensemble.dim()) throw std::invalid_argument("RandomField: field dimension mismatch");
    const bool fv = dr.source == DriverSource::kTime || dr.source == DriverSource::kCommonDensity;
    if (fv != (dr.kind == DriverKind::kFiniteVariation)) {
      throw std::invalid_argument("RandomField: driver '" + dr.name + "' source does not match its kind");
    }
    if ((dr.source == DriverSource::kCommon || dr.source == DriverSource::kCommonDensity) &&
        dr.component >= ensemble.coeffs().common_dim) {
      throw std::invalid_argument("RandomField: driver '" + dr.name + "' refers to a missing common-noise component");
    }
    if (dr.source == DriverSource::kIdiosyncratic && dr.component >= ensemble.dim()) {
      throw std::invalid_argument("RandomField: driver '" + dr.name + "' refers to a missing idiosyncratic component");
    }
    const auto c = idx(dr.component);
    for (std::size_t k = 0; k < n; ++k) {
      const double dt = p.step(k);
      double inc = 0.0;
      switch (dr.source) {
        case DriverSource::kTime: inc = dt; break;
        case DriverSource::kCommonDensity: inc = std::cos(ensemble.common_path().value(k)(c)) * dt; break;
        case DriverSource::kCommon: inc = ensemble.common_increment(k)(c); break;
        case DriverSource::kIdiosyncratic: inc = ensemble.idiosyncratic_increment(k, 0)(c); break;
        case DriverSource::kIndependent:
          inc = std::sqrt(dt) * independent.normal(static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k));
          break;
      }
      const double th = dr.scale * (dr.integrand ? dr.integrand(p.time(k)) : 1.0);
      if (!std::isfinite(th)) throw std::invalid_argument("RandomField: non-finite integrand for driver '" + dr.name + "'");
      raw_(idx(j), idx(k)) = inc;
      theta_(idx(j), idx(k)) = th;
    }
  }
  increments_ = theta_.cwiseProduct(raw_);
  weights_ = Eigen::MatrixXd::Zero(idx(nd), idx(n + 1));
  for (std::size_t k = 0; k < n; ++k) weights_.col(idx(k + 1)) = weights_.col(idx(k)) + increments_.col(idx(k));

  auto add_part = [&](const CylindricalFunctional& f) {
    offsets_.push_back(tests_.size());
    parts_.push_back(f.outer_ptr());
    tests_.insert(tests_.end(), f.tests().begin(), f.tests().end());
  };
  add_part(spec_.initial);
  for (const auto& dr : spec_.drivers) add_part(dr.field);
}

double RandomField::integrand(std::size_t j, std::size_t k) const { return theta_(idx(j), idx(k)); }

CylindricalFunctional RandomField::combination(const std::vector<double>& coeffs) const {
  if (coeffs.size() != parts_.size()) throw std::invalid_argument("RandomField::combination: coefficient count mismatch");
  return combine("U", coeffs, parts_, tests_);
}

CylindricalFunctional RandomField::at(std::size_t k) const {
  std::vector<double> c(parts_.size(), 1.0);
  for (std::size_t j = 0; j < drivers(); ++j) c[j + 1] = weight(j, k);
  return combination(c);
}

double RandomField::value(std::size_t k, const EmpiricalMeasure& m) const { return eval(at(k), m); }

Eigen::VectorXd RandomField::d_lions_by_increments(std::size_t k, const EmpiricalMeasure& m, const ConstVecRef& x) const {
  Eigen::VectorXd g = d_lions(spec_.initial, m, x);
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t j = 0; j < drivers(); ++j) g += increment(j, l) * d_lions(spec_.drivers[j].field, m, x);
  }
  return g;
}

RandomField build_random_field(const RandomFieldSpec& spec, const ParticleEnsemble& ensemble, const RngStream& independent) {
  return RandomField(spec, ensemble, independent);
}

namespace {

enum class FieldLayout { kGeneral, kBrownian };

/// Per-path sums for a random field along one ensemble.
PathRow field_path(const RandomFieldSpec& spec, const ParticleEnsemble& ens, const VerifyOptions& options,
                   std::uint32_t outer, FieldLayout layout) {
  const RandomField field(spec, ens, RngStream::for_role(options.seed, outer, StreamRole::kFieldDriver));
  const std::size_t nd = field.drivers();
  const Index d = idx(ens.dim());
  const Index d0 = idx(ens.coeffs().common_dim);
  const bool brownian = layout == FieldLayout::kBrownian;
  const BracketMode bracket = brownian ? BracketMode::kAnalytic : options.bracket;
  const CrossMode cross_mode = brownian ? CrossMode::kAnalytic : options.cross;
  const bool curved = any_curvature(field.tests());

  // Unit combinations for the bracket terms of martingale drivers.
  std::vector<std::optional<CylindricalFunctional>> unit(nd);
  for (std::size_t j = 0; j < nd; ++j) {
    if (spec.drivers[j].kind != DriverKind::kMartingale) continue;
    std::vector<double> c(nd + 1, 0.0);
    c[j + 1] = 1.0;
    unit[j] = field.combination(c);
  }

  double u0 = 0.0, stoch = 0.0, drift = 0.0, common = 0.0, idio = 0.0, second = 0.0, cross = 0.0;
  std::vector<double> field_terms(nd, 0.0), bracket_terms(nd, 0.0);
  std::vector<double> coeffs(nd + 1, 1.0);
  for (std::size_t k = 0; k < ens.steps(); ++k) {
    for (std::size_t j = 0; j < nd; ++j) coeffs[j + 1] = field.weight(j, k);
    const CylindricalFunctional uk = field.combination(coeffs);
    const TestEvaluation ev = uk.evaluate_tests(ens.state(k), true, curved);
    const Eigen::VectorXd v = test_means(ev);
    const FunctionalSlice sl(uk, v);
    if (k == 0) u0 = sl.value();
    const StepData s = load_step(ens, k, true, brownian);
    const Eigen::MatrixXd dfield = sl.d_lions(ev);
    stoch += avg_dot(dfield, s.dx);
    if (brownian) {
      drift += avg_dot(dfield, s.drift) * s.dt;
      Eigen::MatrixXd dw0 = s.dw0.replicate(1, s.dx.cols());
      common += avg_block_dot(dfield, s.sigma0, dw0);
      idio += avg_block_dot(dfield, s.sigma, s.dw);
    }
    if (curved) second += second_order(sl.d2x_dm(ev), s, bracket, d, d0);
    cross += cross_term(sl, ev, s, cross_mode, d, d0);
    for (std::size_t j = 0; j < nd; ++j) {
      const auto& dr = spec.drivers[j];
      field_terms[j] += part_value(dr.field.outer(), v, field.offset(j + 1)) * field.increment(j, k);
      if (!unit[j]) continue;
      const Eigen::MatrixXd dj = FunctionalSlice(*unit[j], v).d_lions(ev);
      if (bracket == BracketMode::kRealized) {
        bracket_terms[j] += field.increment(j, k) * avg_dot(dj, s.dx);
        continue;
      }
      const double th = field.integrand(j, k) * s.dt;
      const auto c = idx(dr.component);
      const double n = static_cast<double>(ens.particles());
      if (dr.source == DriverSource::kCommon) {
        double acc = 0.0;
        for (Index i = 0; i < dj.cols(); ++i) {
          acc += dj.col(i).dot(Eigen::Map<const Eigen::MatrixXd>(s.sigma0.col(i).data(), d, d0).col(c));
        }
        bracket_terms[j] += th * acc / n;
      } else if (dr.source == DriverSource::kIdiosyncratic) {
        // Only particle 0 carries the driving W.
        bracket_terms[j] += th * dj.col(0).dot(Eigen::Map<const Eigen::MatrixXd>(s.sigma.col(0).data(), d, d).col(c)) / n;
      }
    }
  }
  for (std::size_t j = 0; j < nd; ++j) coeffs[j + 1] = field.weight(j, ens.steps());
  const CylindricalFunctional ut = field.combination(coeffs);
  const double u_final = FunctionalSlice(ut, test_means(ut.evaluate_tests(ens.state(ens.steps()), false, false))).value();

  PathRow row;
  row.lhs = u_final - u0;
  double all_brackets = 0.0;
  for (double b : bracket_terms) all_brackets += b;
  if (!brownian) {
    row.terms = {stoch, second, cross};
    for (std::size_t j = 0; j < nd; ++j) row.terms.push_back(field_terms[j]);
    for (std::size_t j = 0; j < nd; ++j) {
      if (unit[j]) row.terms.push_back(bracket_terms[j]);
    }
    double r = row.lhs;
    for (double t : row.terms) r -= t;
    row.diagnostics = {r + all_brackets};
    return row;
  }
  double phi = 0.0, psi = 0.0, psi0 = 0.0, psi0_bracket = 0.0, psi_bracket = 0.0;
  for (std::size_t j = 0; j < nd; ++j) {
    switch (spec.drivers[j].source) {
      case DriverSource::kTime: phi += field_terms[j]; break;
      case DriverSource::kIdiosyncratic: psi += field_terms[j]; psi_bracket += bracket_terms[j]; break;
      case DriverSource::kCommon: psi0 += field_terms[j]; psi0_bracket += bracket_terms[j]; break;
      default: break;
    }
  }
  row.terms = {phi, psi, psi0, drift, common, second, psi0_bracket, cross};
  double r = row.lhs;
  for (double t : row.terms) r -= t;
  row.diagnostics = {idio, psi_bracket, r + psi0_bracket};
  return row;
}

}  // namespace

VerificationReport verify_ito_wentzell(const RandomFieldSpec& spec, const EnsembleConfig& config, const VerifyOptions& options) {
  std::vector<std::string> terms = {"stochastic", "second_order", "cross"};
  for (const auto& dr : spec.drivers) terms.push_back("field:" + dr.name);
  for (const auto& dr : spec.drivers) {
    if (dr.kind == DriverKind::kMartingale) terms.push_back("bracket:" + dr.name);
  }
  VerificationReport rep = make_report("verify-wentzell", spec.initial.name(), config, options, terms, {"ablation_residual"});
  run_paths(rep, config, options, [&](const ParticleEnsemble& ens, std::uint32_t outer) {
    return field_path(spec, ens, options, outer, FieldLayout::kGeneral);
  });
  return rep;
}

VerificationReport verify_brownian_corollary(const RandomFieldSpec& spec, const EnsembleConfig& config,
                                             const VerifyOptions& options) {
  for (const auto& dr : spec.drivers) {
    if (dr.source != DriverSource::kTime && dr.source != DriverSource::kIdiosyncratic && dr.source != DriverSource::kCommon) {
      throw std::invalid_argument("verify_brownian_corollary: driver '" + dr.name + "' must use dt, dW or dW0");
    }
  }
  VerificationReport rep = make_report(
      "verify-brownian", spec.initial.name(), config, options,
      {"phi_dt", "psi_dW", "psi0_dW0", "drift", "common_martingale", "second_order", "psi0_bracket", "cross"},
      {"idiosyncratic_martingale", "psi_bracket", "ablation_residual"});
  run_paths(rep, config, options, [&](const ParticleEnsemble& ens, std::uint32_t outer) {
    return field_path(spec, ens, options, outer, FieldLayout::kBrownian);
  });
  return rep;
}

// ---- factor model ----

double FactorFunctional::value(double t, const EmpiricalMeasure& m, double y) const {
  double s = 0.0;
  for (const auto& term : terms) s += term.g(t, y) * eval(term.u, m);
  return s;
}

FactorFunctional FactorFunctional::y_times(const CylindricalFunctional& u) {
  FactorTerm term{[](double, double y) { return y; }, [](double, double) { return 0.0; },
                  [](double, double) { return 1.0; }, [](double, double) { return 0.0; }, u};
  return {"y*" + u.name(), {term}};
}

FactorFunctional FactorFunctional::plain(const CylindricalFunctional& u) {
  FactorTerm term{[](double, double) { return 1.0; }, [](double, double) { return 0.0; },
                  [](double, double) { return 0.0; }, [](double, double) { return 0.0; }, u};
  return {u.name(), {term}};
}

FactorFunctional FactorFunctional::time() {
  FactorTerm term{[](double t, double) { return t; }, [](double, double) { return 1.0; },
                  [](double, double) { return 0.0; }, [](double, double) { return 0.0; },
                  builtin_functional("constant")};
  return {"t", {term}};
}

VerificationReport verify_factor_model(const FactorFunctional& u, const EnsembleConfig& config, const VerifyOptions& options) {
  if (u.terms.empty()) throw std::invalid_argument("verify_factor_model: empty functional");
  if (config.coeffs.factor_dim != 1) throw std::invalid_argument("verify_factor_model: requires a scalar factor Y");
  std::vector<std::shared_ptr<const OuterFunction>> parts;
  std::vector<std::shared_ptr<const TestFunction>> tests;
  std::vector<std::size_t> offsets;
  for (const auto& term : u.terms) {
    if (term.u.dim() != config.coeffs.state_dim) throw std::invalid_argument("verify_factor_model: dimension mismatch");
    offsets.push_back(tests.size());
    parts.push_back(term.u.outer_ptr());
    tests.insert(tests.end(), term.u.tests().begin(), term.u.tests().end());
  }
  VerificationReport rep = make_report("verify-factor", u.name, config, options,
                                       {"dt", "dY", "dYY", "stochastic", "second_order", "xy_bracket", "cross"}, {});
  const Index d = idx(config.coeffs.state_dim);
  const Index d0 = idx(config.coeffs.common_dim);
  const bool curved = any_curvature(tests);
  const std::size_t nl = u.terms.size();
  run_paths(rep, config, options, [&](const ParticleEnsemble& ens, std::uint32_t) {
    const SamplePath& yp = *ens.factor_path();
    const auto& c = ens.coeffs();
    std::vector<double> gv(nl), gt(nl), gy(nl), gyy(nl), ul(nl);
    auto value_at = [&](std::size_t k, const Eigen::VectorXd& v) {
      double s = 0.0;
      for (std::size_t l = 0; l < nl; ++l) s += u.terms[l].g(ens.partition().time(k), yp.value(k)(0)) * part_value(*parts[l], v, offsets[l]);
      return s;
    };
    double time_t = 0.0, dy_t = 0.0, dyy_t = 0.0, stoch = 0.0, second = 0.0, xy = 0.0, cross = 0.0, u0 = 0.0;
    Eigen::MatrixXd gam(1, 1), gam0(1, d0);
    const CylindricalFunctional probe = combine("u", std::vector<double>(nl, 1.0), parts, tests);
    for (std::size_t k = 0; k < ens.steps(); ++k) {
      const double t = ens.partition().time(k);
      const double y = yp.value(k)(0);
      const double dy = yp.value(k + 1)(0) - y;
      for (std::size_t l = 0; l < nl; ++l) {
        gv[l] = u.terms[l].g(t, y);
        gt[l] = u.terms[l].g_t(t, y);
        gy[l] = u.terms[l].g_y(t, y);
        gyy[l] = u.terms[l].g_yy(t, y);
      }
      const TestEvaluation ev = probe.evaluate_tests(ens.state(k), true, curved);
      const Eigen::VectorXd v = test_means(ev);
      if (k == 0) u0 = value_at(0, v);
      for (std::size_t l = 0; l < nl; ++l) ul[l] = part_value(*parts[l], v, offsets[l]);
      const CylindricalFunctional uk = combine("u", gv, parts, tests);
      const CylindricalFunctional uy = combine("u_y", gy, parts, tests);
      const FunctionalSlice sl(uk, v), sly(uy, v);
      const StepData s = load_step(ens, k, true, false);

      const Eigen::VectorXd yv = yp.value(k);
      c.factor_sigma(t, yv, gam);
      c.factor_sigma0(t, yv, gam0);
      const double qy = options.bracket == BracketMode::kAnalytic ? (gam(0, 0) * gam(0, 0) + gam0.squaredNorm()) * s.dt : dy * dy;
      for (std::size_t l = 0; l < nl; ++l) {
        time_t += gt[l] * ul[l] * s.dt;
        dy_t += gy[l] * ul[l] * dy;
        dyy_t += 0.5 * gyy[l] * ul[l] * qy;
      }
      stoch += avg_dot(sl.d_lions(ev), s.dx);
      if (curved) second += second_order(sl.d2x_dm(ev), s, options.bracket, d, d0);
      cross += cross_term(sl, ev, s, options.cross, d, d0);
      const Eigen::MatrixXd dyfield = sly.d_lions(ev);
      if (options.bracket == BracketMode::kAnalytic) {
        // d<X^i, Y> = sigma0_i gamma0^T dt; B is independent of every W^i.
        Eigen::MatrixXd g0 = gam0.transpose().replicate(1, dyfield.cols());
        xy += avg_block_dot(dyfield, s.sigma0, g0) * s.dt;
      } else {
        xy += avg_dot(dyfield, s.dx) * dy;
      }
    }
    const std::size_t n = ens.steps();
    const double u_final = value_at(n, test_means(probe.evaluate_tests(ens.state(n), false, false)));
    PathRow row;
    row.lhs = u_final - u0;
    row.terms = {time_t, dy_t, dyy_t, stoch, second, xy, cross};
    return row;
  });
  return rep;
}

// ---- sweeps ----

SweepTable convergence_sweep(const Verifier& verifier, const std::vector<SweepCell>& grid, double floor) {
  if (grid.empty()) throw std::invalid_argument("convergence_sweep: empty grid");
  SweepTable table;
  for (const auto& cell : grid) table.rows.push_back({cell, verifier(cell).aggregate});

  auto check = [&](auto key_equal, auto size_of) -> std::optional<bool> {
    std::optional<bool> flag;
    for (std::size_t j = 0; j < table.rows.size(); ++j) {
      const SweepRow* prev = nullptr;
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& ri = table.rows[i];
        if (!key_equal(ri.cell, table.rows[j].cell) || size_of(ri.cell) >= size_of(table.rows[j].cell)) continue;
        if (!prev || size_of(ri.cell) > size_of(prev->cell)) prev = &ri;
      }
      if (!prev) continue;
      const double e0 = prev->aggregate.mean_abs;
      const double e1 = table.rows[j].aggregate.mean_abs;
      bool ok;
      if (e1 <= floor) {
        ok = true;
      } else if (e0 <= floor) {
        ok = false;
      } else {
        const auto [lo, hi] = ratio_band(static_cast<double>(size_of(table.rows[j].cell)) / static_cast<double>(size_of(prev->cell)));
        const double ratio = e0 / e1;
        ok = ratio >= lo && ratio <= hi;
      }
      flag = flag.value_or(true) && ok;
    }
    return flag;
  };
  table.n_trend = check([](const SweepCell& a, const SweepCell& b) { return a.particles == b.particles && a.outer_paths == b.outer_paths; },
                        [](const SweepCell& c) { return c.n; });
  table.particle_trend = check([](const SweepCell& a, const SweepCell& b) { return a.n == b.n && a.outer_paths == b.outer_paths; },
                               [](const SweepCell& c) { return c.particles; });
  return table;
}

}  // namespace condflow
