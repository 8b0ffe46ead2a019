#include <gtest/gtest.h>

#include <cmath>

#include "condflow/chainrule.hpp"

using namespace condflow;

namespace {

EnsembleConfig ensemble(double b, double sigma, double sigma0, std::size_t n, std::size_t particles, double x0 = 0.0) {
  EnsembleConfig c;
  c.coeffs = SdeCoefficients::scalar(b, sigma, sigma0);
  c.initial = InitialLaw::dirac(Eigen::VectorXd::Constant(1, x0));
  c.particles = particles;
  c.partition = make_uniform_partition(1.0, n);
  return c;
}

VerifyOptions options(std::size_t paths, std::uint64_t seed, double c = 0.5) {
  VerifyOptions o;
  o.outer_paths = paths;
  o.seed = seed;
  o.tolerance.statistic = ToleranceRule::Statistic::kSignedMean;
  o.tolerance.scale = ToleranceRule::Scale::kMesh;
  o.tolerance.c = c;
  return o;
}

FieldDriver driver(const std::string& name, const std::string& f, DriverKind k, DriverSource s) {
  return FieldDriver{name, builtin_functional(f), k, s, 0, 1.0, {}};
}

CylindricalFunctional zero() {
  auto c = builtin_functional("constant");
  return linear_combination(0.0, c, 0.0, c);
}

}  // namespace

TEST(VerifyIto, TelescopingIsExact) {
  auto o = options(8, 3);
  o.bracket = BracketMode::kRealized;
  o.cross = CrossMode::kPairwise;
  auto rep = verify_ito(builtin_functional("mean-squared"), ensemble(0.3, 0, 1, 64, 32), o);
  for (const auto& r : rep.rows) EXPECT_LT(std::abs(r.residual), 1e-12);
  EXPECT_TRUE(rep.aggregate.pass);
}

TEST(VerifyIto, ConstantFunctionalHasNoTerms) {
  auto rep = verify_ito(builtin_functional("constant"), ensemble(0.1, 1, 0.5, 16, 32), options(4, 1));
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.lhs, 0.0);
    for (double t : r.terms) EXPECT_EQ(t, 0.0);
  }
}

TEST(VerifyIto, SecondMomentUnderIdiosyncraticNoise) {
  auto rep = verify_ito(builtin_functional("second-moment"), ensemble(0, 1, 0, 64, 512, 0.5), options(16, 2));
  auto so = rep.term_stats("second_order");
  EXPECT_NEAR(so.mean, 1.0, 1e-12);
  auto st = rep.term_stats("stochastic");
  EXPECT_LT(std::abs(st.mean), 3 * st.se + 1e-3);
  EXPECT_TRUE(rep.aggregate.pass);
}

TEST(VerifyIto, TermsAreLinearInFunctional) {
  auto cfg = ensemble(0.2, 0.7, 0.4, 16, 64);
  auto u = builtin_functional("mean-squared");
  auto w = builtin_functional("second-moment");
  auto ru = verify_ito(u, cfg, options(2, 5));
  auto rw = verify_ito(w, cfg, options(2, 5));
  auto rc = verify_ito(linear_combination(2.0, u, -1.0, w), cfg, options(2, 5));
  for (std::size_t p = 0; p < 2; ++p) {
    EXPECT_NEAR(rc.rows[p].lhs, 2 * ru.rows[p].lhs - rw.rows[p].lhs, 1e-10);
    for (std::size_t j = 0; j < rc.rows[p].terms.size(); ++j) {
      EXPECT_NEAR(rc.rows[p].terms[j], 2 * ru.rows[p].terms[j] - rw.rows[p].terms[j], 1e-10);
    }
  }
}

TEST(ToleranceRule, RejectsNegativeC) {
  ToleranceRule r;
  r.c = -0.1;
  EXPECT_THROW(r.validate(), std::invalid_argument);
}

TEST(RandomField, NoDriversIsConstant) {
  auto cfg = ensemble(0, 1, 1, 8, 16);
  auto ens = simulate_ensemble(cfg, 1, 0);
  RandomFieldSpec spec{builtin_functional("mean-squared"), {}};
  auto field = build_random_field(spec, ens, RngStream(1, 9));
  auto m = empirical({0.5, 2});
  for (std::size_t k = 0; k <= 8; ++k) EXPECT_DOUBLE_EQ(field.value(k, m), eval(spec.initial, m));
}

TEST(RandomField, TimeDriverAccumulates) {
  auto cfg = ensemble(0, 1, 1, 8, 16);
  auto ens = simulate_ensemble(cfg, 1, 0);
  RandomFieldSpec spec{zero(), {driver("phi", "mean", DriverKind::kFiniteVariation, DriverSource::kTime)}};
  auto field = build_random_field(spec, ens, RngStream(1, 9));
  auto m = empirical({0.5, 2});
  for (std::size_t k = 0; k <= 8; ++k) EXPECT_NEAR(field.value(k, m), k / 8.0 * 1.25, 1e-14);
}

TEST(RandomField, IncrementalLionsDerivativeMatches) {
  auto cfg = ensemble(0, 1, 1, 16, 16);
  auto ens = simulate_ensemble(cfg, 2, 0);
  auto spec = RandomFieldSpec{builtin_functional("second-moment"),
                              {driver("phi", "cosine-of-mean", DriverKind::kFiniteVariation, DriverSource::kTime),
                               driver("psi0", "mean-squared", DriverKind::kMartingale, DriverSource::kCommon)}};
  auto field = build_random_field(spec, ens, RngStream(2, 9));
  auto m = empirical({0.1, -0.3, 0.8});
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.4);
  for (std::size_t k : {0u, 5u, 16u}) {
    EXPECT_NEAR(field.d_lions_by_increments(k, m, x)(0), d_lions(field.at(k), m, x)(0), 1e-12);
  }
}

TEST(RandomField, MissingComponentThrows) {
  auto cfg = ensemble(0, 1, 1, 8, 16);
  auto ens = simulate_ensemble(cfg, 1, 0);
  auto d = driver("psi0", "mean", DriverKind::kMartingale, DriverSource::kCommon);
  d.component = 1;
  EXPECT_THROW(build_random_field(RandomFieldSpec{zero(), {d}}, ens, RngStream(1, 9)), std::invalid_argument);
}

TEST(VerifyWentzell, IndependentDriverHasNoBracket) {
  RandomFieldSpec spec{zero(), {driver("psi", "mean", DriverKind::kMartingale, DriverSource::kIndependent)}};
  auto rep = verify_ito_wentzell(spec, ensemble(0, 1, 0.5, 64, 128), options(8, 4));
  for (const auto& r : rep.rows) {
    auto it = std::find(rep.term_names.begin(), rep.term_names.end(), "bracket:psi");
    ASSERT_NE(it, rep.term_names.end());
    EXPECT_EQ(r.terms[std::size_t(it - rep.term_names.begin())], 0.0);
  }
  EXPECT_TRUE(rep.aggregate.pass);
}

TEST(VerifyWentzell, CommonDriverBracketEqualsHorizon) {
  RandomFieldSpec spec{zero(), {driver("psi0", "mean", DriverKind::kMartingale, DriverSource::kCommon)}};
  auto rep = verify_ito_wentzell(spec, ensemble(0, 0, 1, 64, 32), options(16, 5));
  EXPECT_NEAR(rep.term_stats("bracket:psi0").mean, 1.0, 1e-12);
  auto abl = rep.diagnostic_stats("ablation_residual");
  EXPECT_NEAR(abl.mean, 1.0, 3 * abl.se + 0.5 / 64);
  EXPECT_TRUE(rep.aggregate.pass);
}

TEST(VerifyBrownian, CommonMeanDriver) {
  RandomFieldSpec spec{zero(),
                       {driver("psi0", "mean", DriverKind::kMartingale, DriverSource::kCommon)}};
  auto rep = verify_brownian_corollary(spec, ensemble(0, 0, 1, 64, 16), options(16, 6));
  EXPECT_NEAR(rep.term_stats("psi0_bracket").mean, 1.0, 1e-12);
  EXPECT_TRUE(rep.aggregate.pass);
}

TEST(VerifyBrownian, ZeroCoefficientsGiveZeroTerms) {
  RandomFieldSpec spec{builtin_functional("mean-squared"), {}};
  auto rep = verify_brownian_corollary(spec, ensemble(0, 0, 0, 16, 8), options(2, 1));
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.lhs, 0.0);
    for (double t : r.terms) EXPECT_EQ(t, 0.0);
  }
}

TEST(VerifyFactor, TimeFunctional) {
  auto cfg = ensemble(0, 0, 1, 32, 16);
  cfg.coeffs = cfg.coeffs.with_scalar_factor(0, 0, 1);
  cfg.factor_initial = Eigen::VectorXd::Zero(1);
  auto rep = verify_factor_model(FactorFunctional::time(), cfg, options(4, 1));
  for (const auto& r : rep.rows) {
    EXPECT_NEAR(r.lhs, 1.0, 1e-14);
    EXPECT_NEAR(r.residual, 0.0, 1e-14);
  }
  EXPECT_NEAR(rep.term_stats("dt").mean, 1.0, 1e-14);
}

TEST(VerifyFactor, MixedBracketEqualsHorizon) {
  auto cfg = ensemble(0, 0, 1, 64, 16);
  cfg.coeffs = cfg.coeffs.with_scalar_factor(0, 0, 1);
  cfg.factor_initial = Eigen::VectorXd::Zero(1);
  auto rep = verify_factor_model(FactorFunctional::y_times(builtin_functional("mean")), cfg, options(16, 2));
  EXPECT_NEAR(rep.term_stats("xy_bracket").mean, 1.0, 1e-12);
  EXPECT_TRUE(rep.aggregate.pass);
}

TEST(VerifyFactor, PlainReducesToIto) {
  auto cfg = ensemble(0.1, 1, 0.5, 32, 64);
  cfg.coeffs = cfg.coeffs.with_scalar_factor(0.2, 0.3, 1);
  cfg.factor_initial = Eigen::VectorXd::Zero(1);
  auto u = builtin_functional("second-moment");
  auto rf = verify_factor_model(FactorFunctional::plain(u), cfg, options(4, 3));
  auto ri = verify_ito(u, cfg, options(4, 3));
  for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(rf.rows[p].residual, ri.rows[p].residual, 1e-10);
}

TEST(Sweep, SingleCellHasNoFlags) {
  auto verifier = [](const SweepCell& c) {
    auto cfg = ensemble(0, 0, 1, c.n, c.particles);
    auto o = options(c.outer_paths, 1);
    o.bracket = BracketMode::kRealized;
    o.cross = CrossMode::kPairwise;
    return verify_ito(builtin_functional("mean-squared"), cfg, o);
  };
  auto t = convergence_sweep(verifier, {{16, 8, 2}});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_FALSE(t.n_trend.has_value());
  EXPECT_FALSE(t.particle_trend.has_value());
  auto two = convergence_sweep(verifier, {{16, 8, 2}, {64, 8, 2}});
  EXPECT_LT(two.rows[1].aggregate.mean_abs, 1e-12);
  ASSERT_TRUE(two.n_trend.has_value());
  EXPECT_TRUE(*two.n_trend);
}
