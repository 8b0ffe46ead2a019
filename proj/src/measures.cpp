#include "condflow/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "condflow/errors.hpp"

namespace condflow {

namespace {

// Sequential so that appending zero-weight atoms leaves the sum bit-identical.
double weighted_sum(const Eigen::Ref<const Eigen::RowVectorXd>& values, const Eigen::VectorXd& w) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) s += w(j) * values(j);
  return s;
}

template <class Fn>
double pair_difference(Fn&& fn, const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime) {
  double plus = 0.0, minus = 0.0;
  for (std::size_t j = 0; j < m_prime.size(); ++j) plus += m_prime.weight(j) * fn(m_prime.atom(j));
  for (std::size_t j = 0; j < m.size(); ++j) minus += m.weight(j) * fn(m.atom(j));
  return plus - minus;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> golub_welsch(const Eigen::VectorXd& offdiag, double mass) {
  const Eigen::Index n = offdiag.size() + 1;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 0; k + 1 < n; ++k) j(k, k + 1) = j(k + 1, k) = offdiag(k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  Eigen::VectorXd w = mass * es.eigenvectors().row(0).transpose().array().square();
  return {es.eigenvalues(), w};
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(Eigen::MatrixXd atoms)
    : EmpiricalMeasure(atoms, Eigen::VectorXd::Constant(atoms.cols(), atoms.cols() > 0 ? 1.0 / atoms.cols() : 0.0)) {
  uniform_ = true;
}

EmpiricalMeasure::EmpiricalMeasure(Eigen::MatrixXd atoms, Eigen::VectorXd weights)
    : atoms_(std::move(atoms)), weights_(std::move(weights)) {
  if (atoms_.cols() == 0) throw std::invalid_argument("EmpiricalMeasure: empty atom list");
  if (atoms_.rows() == 0) throw std::invalid_argument("EmpiricalMeasure: dimension must be positive");
  if (!atoms_.allFinite()) throw std::invalid_argument("EmpiricalMeasure: non-finite atom");
  if (weights_.size() != atoms_.cols()) throw std::invalid_argument("EmpiricalMeasure: weight count mismatch");
  if ((weights_.array() < 0.0).any() || !weights_.allFinite()) {
    throw std::invalid_argument("EmpiricalMeasure: weights must be finite and nonnegative");
  }
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > 1e-12 * static_cast<double>(weights_.size()) + 1e-12) {
    throw std::invalid_argument("EmpiricalMeasure: weights must sum to one");
  }
  uniform_ = (weights_.array() == weights_(0)).all();
}

Eigen::VectorXd EmpiricalMeasure::mean() const {
  Eigen::VectorXd mu(atoms_.rows());
  for (Eigen::Index r = 0; r < atoms_.rows(); ++r) mu(r) = weighted_sum(atoms_.row(r), weights_);
  return mu;
}

Eigen::MatrixXd EmpiricalMeasure::covariance() const {
  const Eigen::VectorXd mu = mean();
  const Eigen::MatrixXd c = atoms_.colwise() - mu;
  return c * weights_.asDiagonal() * c.transpose();
}

MeasureMoments EmpiricalMeasure::moments() const { return {mean(), covariance()}; }

const std::vector<std::pair<double, double>>& EmpiricalMeasure::sorted() const {
  if (dim() != 1) throw Unsupported("EmpiricalMeasure::sorted: only defined for d = 1");
  std::call_once(cache_->once, [this] {
    auto& v = cache_->values;
    v.reserve(size());
    for (std::size_t j = 0; j < size(); ++j) v.emplace_back(atoms_(0, static_cast<Eigen::Index>(j)), weight(j));
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  });
  return cache_->values;
}

EmpiricalMeasure empirical(const std::vector<double>& atoms) {
  return EmpiricalMeasure(Eigen::Map<const Eigen::RowVectorXd>(atoms.data(), static_cast<Eigen::Index>(atoms.size())));
}

EmpiricalMeasure empirical(const Eigen::MatrixXd& atoms) { return EmpiricalMeasure(atoms); }

EmpiricalMeasure mixture(const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixture: lambda outside [0, 1]");
  if (m.dim() != m_prime.dim()) throw std::invalid_argument("mixture: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(m.size());
  const auto np = static_cast<Eigen::Index>(m_prime.size());
  Eigen::MatrixXd atoms(m.atoms().rows(), n + np);
  atoms << m.atoms(), m_prime.atoms();
  Eigen::VectorXd w(n + np);
  w << (1.0 - lambda) * m.weights(), lambda * m_prime.weights();
  return EmpiricalMeasure(std::move(atoms), std::move(w));
}

EmpiricalMeasure gaussian_surrogate(double mean, double var, std::size_t nodes) {
  if (!(var >= 0.0)) throw std::invalid_argument("gaussian_surrogate: negative variance");
  const auto [z, w] = gauss_hermite_normal(nodes);
  Eigen::MatrixXd atoms = (mean + std::sqrt(var) * z.array()).matrix().transpose();
  return EmpiricalMeasure(std::move(atoms), w / w.sum());
}

double w2_squared(const EmpiricalMeasure& m, const EmpiricalMeasure& mp) {
  if (m.dim() != mp.dim()) throw std::invalid_argument("w2_squared: dimension mismatch");
  if (m.dim() == 1) {
    const auto& a = m.sorted();
    const auto& b = mp.sorted();
    std::size_t i = 0, j = 0;
    double wa = a[0].second, wb = b[0].second, cost = 0.0;
    while (i < a.size() && j < b.size()) {
      const double diff = a[i].first - b[j].first;
      if (wa < wb) {
        cost += wa * diff * diff;
        wb -= wa;
        if (++i < a.size()) wa = a[i].second;
      } else if (wb < wa) {
        cost += wb * diff * diff;
        wa -= wb;
        if (++j < b.size()) wb = b[j].second;
      } else {
        cost += wa * diff * diff;
        if (++i < a.size()) wa = a[i].second;
        if (++j < b.size()) wb = b[j].second;
      }
    }
    return cost;
  }
  if (m.size() != mp.size()) throw Unsupported("w2_squared: d > 1 requires equal atom counts");
  if (!m.uniform() || !mp.uniform()) throw Unsupported("w2_squared: d > 1 requires uniform weights");
  if (m.size() > 8) throw Unsupported("w2_squared: d > 1 assignment is limited to N <= 8");
  const std::size_t n = m.size();
  Eigen::MatrixXd cost(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (m.atom(i) - mp.atom(j)).squaredNorm();
    }
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre_unit(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_legendre_unit: need at least one node");
  if (n == 1) return {Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 1.0)};
  Eigen::VectorXd beta(static_cast<Eigen::Index>(n - 1));
  for (Eigen::Index k = 1; k < static_cast<Eigen::Index>(n); ++k) {
    const double kk = static_cast<double>(k);
    beta(k - 1) = kk / std::sqrt(4.0 * kk * kk - 1.0);
  }
  auto [x, w] = golub_welsch(beta, 2.0);
  return {(0.5 * (x.array() + 1.0)).matrix(), 0.5 * w};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite_normal(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_hermite_normal: need at least one node");
  if (n == 1) return {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  Eigen::VectorXd beta(static_cast<Eigen::Index>(n - 1));
  for (Eigen::Index k = 1; k < static_cast<Eigen::Index>(n); ++k) beta(k - 1) = std::sqrt(static_cast<double>(k));
  return golub_welsch(beta, 1.0);
}

// ---- test functions ----

void TestFunction::evaluate(const Eigen::MatrixXd& x, Eigen::VectorXd* val, Eigen::MatrixXd* grad,
                            Eigen::MatrixXd* hess) const {
  const Eigen::Index n = x.cols();
  const auto d = static_cast<Eigen::Index>(dim());
  if (val) val->resize(n);
  if (grad) grad->resize(d, n);
  if (hess) hess->resize(d * d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto xj = x.col(j);
    if (val) (*val)(j) = value(xj);
    if (grad) grad->col(j) = gradient(xj);
    if (hess) hess->col(j) = hessian(xj).reshaped();
  }
}

QuadraticTest::QuadraticTest(std::size_t dim, std::size_t coord, double c0, double c1, double c2)
    : dim_(dim), coord_(coord), c0_(c0), c1_(c1), c2_(c2) {
  if (coord >= dim) throw std::invalid_argument("QuadraticTest: coordinate out of range");
}

double QuadraticTest::value(const ConstVecRef& x) const {
  const double t = x(static_cast<Eigen::Index>(coord_));
  return c0_ + c1_ * t + c2_ * t * t;
}

Eigen::VectorXd QuadraticTest::gradient(const ConstVecRef& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  g(static_cast<Eigen::Index>(coord_)) = c1_ + 2.0 * c2_ * x(static_cast<Eigen::Index>(coord_));
  return g;
}

Eigen::MatrixXd QuadraticTest::hessian(const ConstVecRef&) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  h(static_cast<Eigen::Index>(coord_), static_cast<Eigen::Index>(coord_)) = 2.0 * c2_;
  return h;
}

std::string QuadraticTest::describe() const {
  std::ostringstream os;
  os << c0_ << " + " << c1_ << "*x" << coord_ << " + " << c2_ << "*x" << coord_ << "^2";
  return os.str();
}

void QuadraticTest::evaluate(const Eigen::MatrixXd& x, Eigen::VectorXd* val, Eigen::MatrixXd* grad,
                             Eigen::MatrixXd* hess) const {
  const auto c = static_cast<Eigen::Index>(coord_);
  const auto d = static_cast<Eigen::Index>(dim_);
  const auto t = x.row(c).array();
  if (val) *val = (c0_ + c1_ * t + c2_ * t * t).matrix().transpose();
  if (grad) {
    grad->setZero(d, x.cols());
    grad->row(c) = (c1_ + 2.0 * c2_ * t).matrix();
  }
  if (hess) {
    hess->setZero(d * d, x.cols());
    hess->row(c + c * d).setConstant(2.0 * c2_);
  }
}

CosineTest::CosineTest(std::size_t dim, std::size_t coord, double amplitude, double freq, double phase)
    : dim_(dim), coord_(coord), amp_(amplitude), freq_(freq), phase_(phase) {
  if (coord >= dim) throw std::invalid_argument("CosineTest: coordinate out of range");
}

double CosineTest::value(const ConstVecRef& x) const {
  return amp_ * std::cos(freq_ * x(static_cast<Eigen::Index>(coord_)) + phase_);
}

Eigen::VectorXd CosineTest::gradient(const ConstVecRef& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  g(static_cast<Eigen::Index>(coord_)) = -amp_ * freq_ * std::sin(freq_ * x(static_cast<Eigen::Index>(coord_)) + phase_);
  return g;
}

Eigen::MatrixXd CosineTest::hessian(const ConstVecRef& x) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  const auto c = static_cast<Eigen::Index>(coord_);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  h(c, c) = -amp_ * freq_ * freq_ * std::cos(freq_ * x(c) + phase_);
  return h;
}

std::string CosineTest::describe() const {
  std::ostringstream os;
  os << amp_ << "*cos(" << freq_ << "*x" << coord_ << " + " << phase_ << ")";
  return os.str();
}

CallableTest::CallableTest(std::size_t dim, ValueFn f, GradFn g, HessFn h, double hessian_bound, std::string name)
    : dim_(dim), f_(std::move(f)), g_(std::move(g)), h_(std::move(h)), bound_(hessian_bound), name_(std::move(name)) {
  if (!f_ || !g_ || !h_) throw std::invalid_argument("CallableTest: value, gradient and hessian are required");
}

// ---- outer functions ----

QuadraticOuter::QuadraticOuter(double c, Eigen::VectorXd b, Eigen::MatrixXd a)
    : c_(c), b_(std::move(b)), a_(std::move(a)) {
  if (a_.rows() != b_.size() || a_.cols() != b_.size()) throw std::invalid_argument("QuadraticOuter: shape mismatch");
  if (!a_.isApprox(a_.transpose(), 0.0)) throw std::invalid_argument("QuadraticOuter: A must be symmetric");
}

double QuadraticOuter::value(const Eigen::VectorXd& v) const { return c_ + b_.dot(v) + 0.5 * v.dot(a_ * v); }
Eigen::VectorXd QuadraticOuter::gradient(const Eigen::VectorXd& v) const { return b_ + a_ * v; }

double CosineOuter::value(const Eigen::VectorXd& v) const { return amp_ * std::cos(v(0)); }
Eigen::VectorXd CosineOuter::gradient(const Eigen::VectorXd& v) const {
  return Eigen::VectorXd::Constant(1, -amp_ * std::sin(v(0)));
}
Eigen::MatrixXd CosineOuter::hessian(const Eigen::VectorXd& v) const {
  return Eigen::MatrixXd::Constant(1, 1, -amp_ * std::cos(v(0)));
}

PowerOuter::PowerOuter(double c, Eigen::VectorXd b, int power) : c_(c), b_(std::move(b)), p_(power) {
  if (p_ < 1) throw std::invalid_argument("PowerOuter: power must be >= 1");
}
double PowerOuter::value(const Eigen::VectorXd& v) const { return std::pow(c_ + b_.dot(v), p_); }
Eigen::VectorXd PowerOuter::gradient(const Eigen::VectorXd& v) const {
  return p_ * std::pow(c_ + b_.dot(v), p_ - 1) * b_;
}
Eigen::MatrixXd PowerOuter::hessian(const Eigen::VectorXd& v) const {
  if (p_ == 1) return Eigen::MatrixXd::Zero(b_.size(), b_.size());
  return p_ * (p_ - 1) * std::pow(c_ + b_.dot(v), p_ - 2) * b_ * b_.transpose();
}

SumOuter::SumOuter(std::vector<double> coeffs, std::vector<std::shared_ptr<const OuterFunction>> parts)
    : coeffs_(std::move(coeffs)), parts_(std::move(parts)) {
  if (coeffs_.size() != parts_.size() || parts_.empty()) throw std::invalid_argument("SumOuter: size mismatch");
  for (const auto& p : parts_) {
    offsets_.push_back(arity_);
    arity_ += p->arity();
  }
}

double SumOuter::value(const Eigen::VectorXd& v) const {
  double s = 0.0;
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    s += coeffs_[i] * parts_[i]->value(v.segment(static_cast<Eigen::Index>(offsets_[i]),
                                                 static_cast<Eigen::Index>(parts_[i]->arity())));
  }
  return s;
}

Eigen::VectorXd SumOuter::gradient(const Eigen::VectorXd& v) const {
  Eigen::VectorXd g(static_cast<Eigen::Index>(arity_));
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    const auto o = static_cast<Eigen::Index>(offsets_[i]);
    const auto k = static_cast<Eigen::Index>(parts_[i]->arity());
    g.segment(o, k) = coeffs_[i] * parts_[i]->gradient(v.segment(o, k));
  }
  return g;
}

Eigen::MatrixXd SumOuter::hessian(const Eigen::VectorXd& v) const {
  const auto a = static_cast<Eigen::Index>(arity_);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(a, a);
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    const auto o = static_cast<Eigen::Index>(offsets_[i]);
    const auto k = static_cast<Eigen::Index>(parts_[i]->arity());
    h.block(o, o, k, k) = coeffs_[i] * parts_[i]->hessian(v.segment(o, k));
  }
  return h;
}

bool SumOuter::polynomial() const {
  return std::all_of(parts_.begin(), parts_.end(), [](const auto& p) { return p->polynomial(); });
}

// ---- cylindrical functionals ----

CylindricalFunctional::CylindricalFunctional(std::string name, std::shared_ptr<const OuterFunction> outer,
                                             std::vector<std::shared_ptr<const TestFunction>> tests)
    : name_(std::move(name)), outer_(std::move(outer)), tests_(std::move(tests)) {
  if (!outer_ || tests_.empty()) throw std::invalid_argument("CylindricalFunctional: need F and k >= 1 tests");
  if (outer_->arity() != tests_.size()) throw std::invalid_argument("CylindricalFunctional: arity mismatch");
  dim_ = tests_.front()->dim();
  for (const auto& t : tests_) {
    if (!t) throw std::invalid_argument("CylindricalFunctional: null test function");
    if (t->dim() != dim_) throw std::invalid_argument("CylindricalFunctional: test functions differ in dimension");
  }
}

double CylindricalFunctional::hessian_bound() const {
  double b = 0.0;
  for (const auto& t : tests_) b = std::max(b, t->hessian_bound());
  return b;
}

TestEvaluation CylindricalFunctional::evaluate_tests(const Eigen::MatrixXd& x, bool gradient, bool hessian) const {
  if (static_cast<std::size_t>(x.rows()) != dim_) throw std::invalid_argument("CylindricalFunctional: dimension mismatch");
  const auto k = static_cast<Eigen::Index>(tests_.size());
  TestEvaluation e;
  e.value.resize(k, x.cols());
  if (gradient) e.gradient.resize(tests_.size());
  if (hessian) e.hessian.resize(tests_.size());
  Eigen::VectorXd val;
  for (std::size_t i = 0; i < tests_.size(); ++i) {
    tests_[i]->evaluate(x, &val, gradient ? &e.gradient[i] : nullptr, hessian ? &e.hessian[i] : nullptr);
    e.value.row(static_cast<Eigen::Index>(i)) = val.transpose();
  }
  return e;
}

Eigen::VectorXd CylindricalFunctional::moments(const EmpiricalMeasure& m) const {
  const TestEvaluation e = evaluate_tests(m.atoms(), false, false);
  Eigen::VectorXd v(e.value.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = weighted_sum(e.value.row(i), m.weights());
  if (!v.allFinite()) throw NumericOverflow("CylindricalFunctional " + name_ + ": non-finite test-function integral");
  return v;
}

FunctionalSlice CylindricalFunctional::slice(const EmpiricalMeasure& m) const { return FunctionalSlice(*this, moments(m)); }

FunctionalSlice::FunctionalSlice(const CylindricalFunctional& u, Eigen::VectorXd v)
    : u_(&u), v_(std::move(v)), value_(u.outer().value(v_)), grad_(u.outer().gradient(v_)), hess_(u.outer().hessian(v_)) {
  if (!std::isfinite(value_) || !grad_.allFinite() || !hess_.allFinite()) {
    throw NumericOverflow("CylindricalFunctional " + u.name() + ": non-finite outer evaluation");
  }
}

double FunctionalSlice::dm(const ConstVecRef& x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < u_->arity(); ++i) s += grad_(static_cast<Eigen::Index>(i)) * u_->tests()[i]->value(x);
  return s;
}

Eigen::VectorXd FunctionalSlice::d_lions(const ConstVecRef& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(u_->dim()));
  for (std::size_t i = 0; i < u_->arity(); ++i) g += grad_(static_cast<Eigen::Index>(i)) * u_->tests()[i]->gradient(x);
  return g;
}

Eigen::MatrixXd FunctionalSlice::d2x_dm(const ConstVecRef& x) const {
  const auto d = static_cast<Eigen::Index>(u_->dim());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < u_->arity(); ++i) h += grad_(static_cast<Eigen::Index>(i)) * u_->tests()[i]->hessian(x);
  return h;
}

double FunctionalSlice::dm2(const ConstVecRef& x, const ConstVecRef& xhat) const {
  const auto k = static_cast<Eigen::Index>(u_->arity());
  Eigen::VectorXd a(k), b(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    a(i) = u_->tests()[static_cast<std::size_t>(i)]->value(x);
    b(i) = u_->tests()[static_cast<std::size_t>(i)]->value(xhat);
  }
  return a.dot(hess_ * b);
}

Eigen::MatrixXd FunctionalSlice::dm2_cross(const ConstVecRef& x, const ConstVecRef& xhat) const {
  const auto k = static_cast<Eigen::Index>(u_->arity());
  const auto d = static_cast<Eigen::Index>(u_->dim());
  Eigen::MatrixXd ga(d, k), gb(d, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    ga.col(i) = u_->tests()[static_cast<std::size_t>(i)]->gradient(x);
    gb.col(i) = u_->tests()[static_cast<std::size_t>(i)]->gradient(xhat);
  }
  return ga * hess_ * gb.transpose();
}

Eigen::MatrixXd FunctionalSlice::d_lions(const TestEvaluation& e) const {
  if (e.gradient.size() != u_->arity()) throw std::invalid_argument("FunctionalSlice: gradients were not evaluated");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(e.gradient[0].rows(), e.gradient[0].cols());
  for (std::size_t i = 0; i < e.gradient.size(); ++i) {
    const double g = grad_(static_cast<Eigen::Index>(i));
    if (g != 0.0) out += g * e.gradient[i];
  }
  return out;
}

Eigen::MatrixXd FunctionalSlice::d2x_dm(const TestEvaluation& e) const {
  if (e.hessian.size() != u_->arity()) throw std::invalid_argument("FunctionalSlice: hessians were not evaluated");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(e.hessian[0].rows(), e.hessian[0].cols());
  for (std::size_t i = 0; i < e.hessian.size(); ++i) {
    const double g = grad_(static_cast<Eigen::Index>(i));
    if (g != 0.0) out += g * e.hessian[i];
  }
  return out;
}

CylindricalFunctional linear_combination(double alpha, const CylindricalFunctional& u, double beta,
                                         const CylindricalFunctional& w) {
  if (u.dim() != w.dim()) throw std::invalid_argument("linear_combination: dimension mismatch");
  auto outer = std::make_shared<SumOuter>(std::vector<double>{alpha, beta},
                                          std::vector<std::shared_ptr<const OuterFunction>>{u.outer_ptr(), w.outer_ptr()});
  auto tests = u.tests();
  tests.insert(tests.end(), w.tests().begin(), w.tests().end());
  std::ostringstream name;
  name << alpha << "*" << u.name() << "+" << beta << "*" << w.name();
  return CylindricalFunctional(name.str(), std::move(outer), std::move(tests));
}

double eval(const CylindricalFunctional& u, const EmpiricalMeasure& m) { return u.slice(m).value(); }

double delta_m(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x) {
  return u.slice(m).dm(x);
}

double delta_m2(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x, const ConstVecRef& xhat) {
  return u.slice(m).dm2(x, xhat);
}

Eigen::VectorXd d_lions(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x) {
  return u.slice(m).d_lions(x);
}

Eigen::MatrixXd d2x_dm(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x) {
  return u.slice(m).d2x_dm(x);
}

Eigen::MatrixXd dm2_cross(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x,
                          const ConstVecRef& xhat) {
  return u.slice(m).dm2_cross(x, xhat);
}

std::vector<std::string> builtin_functional_names() {
  return {"constant", "cosine-of-mean", "mean", "mean-squared", "second-moment", "second-moment-squared", "variance"};
}

CylindricalFunctional builtin_functional(const std::string& name, std::size_t dim) {
  using Vec = Eigen::VectorXd;
  using Mat = Eigen::MatrixXd;
  auto x = std::make_shared<QuadraticTest>(dim, 0, 0.0, 1.0, 0.0);
  auto x2 = std::make_shared<QuadraticTest>(dim, 0, 0.0, 0.0, 1.0);
  auto one = [](double v) { return Vec::Constant(1, v); };
  auto mat1 = [](double v) { return Mat::Constant(1, 1, v); };
  if (name == "constant") return {name, std::make_shared<QuadraticOuter>(1.0, one(0.0), mat1(0.0)), {x}};
  if (name == "cosine-of-mean") return {name, std::make_shared<CosineOuter>(1.0), {x}};
  if (name == "mean") return {name, std::make_shared<QuadraticOuter>(0.0, one(1.0), mat1(0.0)), {x}};
  if (name == "mean-squared") return {name, std::make_shared<QuadraticOuter>(0.0, one(0.0), mat1(2.0)), {x}};
  if (name == "second-moment") return {name, std::make_shared<QuadraticOuter>(0.0, one(1.0), mat1(0.0)), {x2}};
  if (name == "second-moment-squared") {
    return {name, std::make_shared<QuadraticOuter>(0.0, one(0.0), mat1(2.0)), {x2}};
  }
  if (name == "variance") {
    Vec b(2);
    b << 0.0, 1.0;
    Mat a = Mat::Zero(2, 2);
    a(0, 0) = -2.0;
    return {name, std::make_shared<QuadraticOuter>(0.0, b, a), {x, x2}};
  }
  throw std::invalid_argument("builtin_functional: unknown name '" + name + "'");
}

// ---- finite-difference and integral checks ----

namespace {

void fill_orders(FdTable& t) {
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    const auto& p = t.rows[i - 1];
    auto& r = t.rows[i];
    if (p.error > 0.0 && r.error > 0.0) r.order = std::log(p.error / r.error) / std::log(p.eps / r.eps);
  }
}

void check_eps(const std::vector<double>& eps) {
  if (eps.empty()) throw std::invalid_argument("fd_check: empty epsilon list");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0 && eps[i] <= 1.0) || (i > 0 && !(eps[i] < eps[i - 1]))) {
      throw std::invalid_argument("fd_check: epsilons must be in (0, 1] and strictly decreasing");
    }
  }
}

}  // namespace

bool FdTable::passes(double min_order, double floor) const {
  double first_ratio = -1.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!std::isfinite(r.error)) return false;
    if (r.error <= floor) continue;
    const double ratio = r.error / r.eps;
    if (first_ratio < 0.0) first_ratio = ratio;
    if (ratio > 2.0 * first_ratio) return false;
    if (i > 0 && rows[i - 1].error > floor && r.order && *r.order < min_order) return false;
  }
  return true;
}

FdTable fd_check_dm(const CylindricalFunctional& u, const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime,
                    const std::vector<double>& eps) {
  check_eps(eps);
  const FunctionalSlice s = u.slice(m);
  const double pairing = pair_difference([&](const auto& x) { return s.dm(x); }, m, m_prime);
  FdTable t{u.name(), {}};
  for (double e : eps) {
    const double q = (eval(u, mixture(m, m_prime, e)) - s.value()) / e;
    t.rows.push_back({e, std::abs(q - pairing), std::nullopt});
  }
  fill_orders(t);
  return t;
}

FdTable fd_check_dm2(const CylindricalFunctional& u, const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime,
                     const std::vector<double>& eps) {
  check_eps(eps);
  const FunctionalSlice s = u.slice(m);
  Eigen::MatrixXd probes(m.atoms().rows(), m.atoms().cols() + m_prime.atoms().cols());
  probes << m.atoms(), m_prime.atoms();
  std::vector<double> pairing(static_cast<std::size_t>(probes.cols()));
  std::vector<double> base(pairing.size());
  for (Eigen::Index p = 0; p < probes.cols(); ++p) {
    const Eigen::VectorXd x = probes.col(p);
    pairing[static_cast<std::size_t>(p)] = pair_difference([&](const auto& y) { return s.dm2(x, y); }, m, m_prime);
    base[static_cast<std::size_t>(p)] = s.dm(x);
  }
  FdTable t{u.name(), {}};
  for (double e : eps) {
    const FunctionalSlice se = u.slice(mixture(m, m_prime, e));
    double err = 0.0;
    for (Eigen::Index p = 0; p < probes.cols(); ++p) {
      const double q = (se.dm(probes.col(p)) - base[static_cast<std::size_t>(p)]) / e;
      err = std::max(err, std::abs(q - pairing[static_cast<std::size_t>(p)]));
    }
    t.rows.push_back({e, err, std::nullopt});
  }
  fill_orders(t);
  return t;
}

double integral_identity_gap(const CylindricalFunctional& u, const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime) {
  const auto [nodes, weights] = gauss_legendre_unit(16);
  double integral = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    const FunctionalSlice s = u.slice(mixture(m, m_prime, nodes(k)));
    integral += weights(k) * pair_difference([&](const auto& x) { return s.dm(x); }, m, m_prime);
  }
  return std::abs(eval(u, m_prime) - eval(u, m) - integral);
}

double integral_identity_gap2(const CylindricalFunctional& u, const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime,
                              const ConstVecRef& x) {
  const auto [nodes, weights] = gauss_legendre_unit(16);
  const Eigen::VectorXd xv = x;
  double integral = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    const FunctionalSlice s = u.slice(mixture(m, m_prime, nodes(k)));
    integral += weights(k) * pair_difference([&](const auto& y) { return s.dm2(xv, y); }, m, m_prime);
  }
  return std::abs(u.slice(m_prime).dm(xv) - u.slice(m).dm(xv) - integral);
}

}  // namespace condflow
