#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "condflow/paths.hpp"

namespace condflow {

/// Finitely supported probability measure: atoms (d x N) with weights summing to one.
class EmpiricalMeasure {
 public:
  /// Uniform weights 1/N.
  explicit EmpiricalMeasure(Eigen::MatrixXd atoms);
  EmpiricalMeasure(Eigen::MatrixXd atoms, Eigen::VectorXd weights);

  std::size_t dim() const { return static_cast<std::size_t>(atoms_.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(atoms_.cols()); }
  const Eigen::MatrixXd& atoms() const { return atoms_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  auto atom(std::size_t i) const { return atoms_.col(static_cast<Eigen::Index>(i)); }
  double weight(std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }
  bool uniform() const { return uniform_; }

  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  MeasureMoments moments() const;

  /// d = 1 only: atoms sorted ascending with their weights (computed once, shared by copies).
  const std::vector<std::pair<double, double>>& sorted() const;

 private:
  struct SortedCache {
    std::once_flag once;
    std::vector<std::pair<double, double>> values;
  };

  Eigen::MatrixXd atoms_;
  Eigen::VectorXd weights_;
  bool uniform_ = true;
  std::shared_ptr<SortedCache> cache_ = std::make_shared<SortedCache>();
};

/// Uniform measure on scalar atoms.
EmpiricalMeasure empirical(const std::vector<double>& atoms);
EmpiricalMeasure empirical(const Eigen::MatrixXd& atoms);
inline EmpiricalMeasure empirical(std::initializer_list<double> atoms) { return empirical(std::vector<double>(atoms)); }

/// lambda m' + (1 - lambda) m as a weighted union of atoms (m's atoms first).
EmpiricalMeasure mixture(const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime, double lambda);

/// Scalar Gaussian N(mean, var) represented by Gauss-Hermite nodes.
EmpiricalMeasure gaussian_surrogate(double mean, double var, std::size_t nodes = 32);

/// Squared quadratic transport cost inf over couplings of the integral of |x - x'|^2.
/// d = 1: quantile coupling, any sizes and weights. d > 1: uniform weights,
/// equal sizes N <= 8 (exact by enumeration); otherwise throws Unsupported.
double w2_squared(const EmpiricalMeasure& m, const EmpiricalMeasure& m_prime);

/// Nodes and weights of the n-point Gauss-Legendre rule on [0, 1].
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre_unit(std::size_t n);
/// Nodes and weights of the n-point Gauss-Hermite rule for the standard normal law.
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite_normal(std::size_t n);

/// Scalar test function phi: R^d -> R with exact gradient and Hessian.
class TestFunction {
 public:
  virtual ~TestFunction() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(const ConstVecRef& x) const = 0;
  virtual Eigen::VectorXd gradient(const ConstVecRef& x) const = 0;
  virtual Eigen::MatrixXd hessian(const ConstVecRef& x) const = 0;
  /// sup_x |Hessian|, or +inf when unbounded.
  virtual double hessian_bound() const = 0;
  virtual std::string describe() const = 0;

  /// Column-wise evaluation over d x N points. `grad` is d x N; `hess` is
  /// (d*d) x N with column-major d x d blocks. Null outputs are skipped.
  virtual void evaluate(const Eigen::MatrixXd& x, Eigen::VectorXd* val, Eigen::MatrixXd* grad,
                        Eigen::MatrixXd* hess) const;
};

/// phi(x) = c0 + c1 x_j + c2 x_j^2.
class QuadraticTest final : public TestFunction {
 public:
  QuadraticTest(std::size_t dim, std::size_t coord, double c0, double c1, double c2);
  std::size_t dim() const override { return dim_; }
  double value(const ConstVecRef& x) const override;
  Eigen::VectorXd gradient(const ConstVecRef& x) const override;
  Eigen::MatrixXd hessian(const ConstVecRef& x) const override;
  double hessian_bound() const override { return 2.0 * std::abs(c2_); }
  std::string describe() const override;
  void evaluate(const Eigen::MatrixXd& x, Eigen::VectorXd* val, Eigen::MatrixXd* grad,
                Eigen::MatrixXd* hess) const override;

 private:
  std::size_t dim_, coord_;
  double c0_, c1_, c2_;
};

/// phi(x) = amplitude * cos(freq * x_j + phase).
class CosineTest final : public TestFunction {
 public:
  CosineTest(std::size_t dim, std::size_t coord, double amplitude, double freq, double phase);
  std::size_t dim() const override { return dim_; }
  double value(const ConstVecRef& x) const override;
  Eigen::VectorXd gradient(const ConstVecRef& x) const override;
  Eigen::MatrixXd hessian(const ConstVecRef& x) const override;
  double hessian_bound() const override { return std::abs(amp_) * freq_ * freq_; }
  std::string describe() const override;

 private:
  std::size_t dim_, coord_;
  double amp_, freq_, phase_;
};

/// Test function from callables (used by the Python bindings).
class CallableTest final : public TestFunction {
 public:
  using ValueFn = std::function<double(const Eigen::VectorXd&)>;
  using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using HessFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;
  CallableTest(std::size_t dim, ValueFn f, GradFn g, HessFn h, double hessian_bound, std::string name);
  std::size_t dim() const override { return dim_; }
  double value(const ConstVecRef& x) const override { return f_(x); }
  Eigen::VectorXd gradient(const ConstVecRef& x) const override { return g_(x); }
  Eigen::MatrixXd hessian(const ConstVecRef& x) const override { return h_(x); }
  double hessian_bound() const override { return bound_; }
  std::string describe() const override { return name_; }

 private:
  std::size_t dim_;
  ValueFn f_;
  GradFn g_;
  HessFn h_;
  double bound_;
  std::string name_;
};

/// Outer function F: R^k -> R with exact gradient and Hessian.
class OuterFunction {
 public:
  virtual ~OuterFunction() = default;
  virtual std::size_t arity() const = 0;
  virtual double value(const Eigen::VectorXd& v) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& v) const = 0;
  virtual Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const = 0;
  /// True when F is a polynomial (the lambda-quadrature identity is then exact).
  virtual bool polynomial() const { return false; }
};

/// F(v) = c + b.v + 1/2 v^T A v with symmetric A.
class QuadraticOuter final : public OuterFunction {
 public:
  QuadraticOuter(double c, Eigen::VectorXd b, Eigen::MatrixXd a);
  std::size_t arity() const override { return static_cast<std::size_t>(b_.size()); }
  double value(const Eigen::VectorXd& v) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& v) const override;
  Eigen::MatrixXd hessian(const Eigen::VectorXd&) const override { return a_; }
  bool polynomial() const override { return true; }

 private:
  double c_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd a_;
};

/// F(v) = amplitude * cos(v_0).
class CosineOuter final : public OuterFunction {
 public:
  explicit CosineOuter(double amplitude = 1.0) : amp_(amplitude) {}
  std::size_t arity() const override { return 1; }
  double value(const Eigen::VectorXd& v) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& v) const override;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const override;

 private:
  double amp_;
};

/// F(v) = (c + b.v)^p for integer p >= 1.
class PowerOuter final : public OuterFunction {
 public:
  PowerOuter(double c, Eigen::VectorXd b, int power);
  std::size_t arity() const override { return static_cast<std::size_t>(b_.size()); }
  double value(const Eigen::VectorXd& v) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& v) const override;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const override;
  bool polynomial() const override { return true; }

 private:
  double c_;
  Eigen::VectorXd b_;
  int p_;
};

/// Block-sum alpha_1 F_1(v^(1)) + alpha_2 F_2(v^(2)) + ... over concatenated arguments.
class SumOuter final : public OuterFunction {
 public:
  SumOuter(std::vector<double> coeffs, std::vector<std::shared_ptr<const OuterFunction>> parts);
  std::size_t arity() const override { return arity_; }
  double value(const Eigen::VectorXd& v) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& v) const override;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& v) const override;
  bool polynomial() const override;

 private:
  std::vector<double> coeffs_;
  std::vector<std::shared_ptr<const OuterFunction>> parts_;
  std::vector<std::size_t> offsets_;
  std::size_t arity_ = 0;
};

class CylindricalFunctional;

/// Per-point values of every test function of a functional.
struct TestEvaluation {
  Eigen::MatrixXd value;                   ///< k x N
  std::vector<Eigen::MatrixXd> gradient;   ///< k entries of d x N
  std::vector<Eigen::MatrixXd> hessian;    ///< k entries of (d*d) x N
};

/// A functional with F, grad F and Hess F frozen at v(m) for one measure m,
/// so that every derivative field costs O(k) per point.
class FunctionalSlice {
 public:
  FunctionalSlice(const CylindricalFunctional& u, Eigen::VectorXd v);

  double value() const { return value_; }
  const Eigen::VectorXd& moments() const { return v_; }
  const Eigen::VectorXd& outer_gradient() const { return grad_; }
  const Eigen::MatrixXd& outer_hessian() const { return hess_; }

  double dm(const ConstVecRef& x) const;
  Eigen::VectorXd d_lions(const ConstVecRef& x) const;
  Eigen::MatrixXd d2x_dm(const ConstVecRef& x) const;
  double dm2(const ConstVecRef& x, const ConstVecRef& xhat) const;
  Eigen::MatrixXd dm2_cross(const ConstVecRef& x, const ConstVecRef& xhat) const;

  /// Batch forms over a precomputed TestEvaluation: d x N gradient field and
  /// (d*d) x N Hessian field of x -> delta_m u(m, x).
  Eigen::MatrixXd d_lions(const TestEvaluation& e) const;
  Eigen::MatrixXd d2x_dm(const TestEvaluation& e) const;

 private:
  const CylindricalFunctional* u_;
  Eigen::VectorXd v_;
  double value_;
  Eigen::VectorXd grad_;
  Eigen::MatrixXd hess_;
};

/// u(m) = F(<phi_1, m>, ..., <phi_k, m>).
class CylindricalFunctional {
 public:
  CylindricalFunctional(std::string name, std::shared_ptr<const OuterFunction> outer,
                        std::vector<std::shared_ptr<const TestFunction>> tests);

  const std::string& name() const { return name_; }
  std::size_t arity() const { return tests_.size(); }
  std::size_t dim() const { return dim_; }
  const OuterFunction& outer() const { return *outer_; }
  const std::shared_ptr<const OuterFunction>& outer_ptr() const { return outer_; }
  const std::vector<std::shared_ptr<const TestFunction>>& tests() const { return tests_; }
  /// max_i sup |Hess phi_i|.
  double hessian_bound() const;

  /// v_i(m) = <phi_i, m>; throws NumericOverflow on non-finite values.
  Eigen::VectorXd moments(const EmpiricalMeasure& m) const;
  FunctionalSlice slice(const EmpiricalMeasure& m) const;
  TestEvaluation evaluate_tests(const Eigen::MatrixXd& x, bool gradient = true, bool hessian = true) const;

 private:
  std::string name_;
  std::shared_ptr<const OuterFunction> outer_;
  std::vector<std::shared_ptr<const TestFunction>> tests_;
  std::size_t dim_ = 0;
};

/// alpha u + beta w on the concatenated test functions.
CylindricalFunctional linear_combination(double alpha, const CylindricalFunctional& u, double beta,
                                         const CylindricalFunctional& w);

double eval(const CylindricalFunctional& u, const EmpiricalMeasure& m);
double delta_m(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x);
double delta_m2(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x,
                const ConstVecRef& xhat);
Eigen::VectorXd d_lions(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x);
Eigen::MatrixXd d2x_dm(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x);
Eigen::MatrixXd dm2_cross(const CylindricalFunctional& u, const EmpiricalMeasure& m, const ConstVecRef& x,
                          const ConstVecRef& xhat);

/// Built-in scalar functionals acting on coordinate 0 of R^dim: "constant",
/// "cosine-of-mean", "mean", "mean-squared", "second-moment",
/// "second-moment-squared", "variance".
CylindricalFunctional builtin_functional(const std::string& name, std::size_t dim = 1);
std::vector<std::string> builtin_functional_names();

struct FdRow {
  double eps = 0.0;
  double error = 0.0;
  std::optional<double> order;  ///< log(error ratio) / log(eps ratio) vs the previous row
};

struct FdTable {
  std::string functional;
  std::vector<FdRow> rows;
  /// Every defined order (errors above `floor`) is at least min_order, and
  /// error / eps never grows by more than a factor 2 along the list.
  bool passes(double min_order = 0.9, double floor = 1e-11) const;
};

/// |(u(m^eps) - u(m)) / eps - <delta_m u(m), m' - m>| per eps.
FdTable fd_check_dm(const CylindricalFunctional& u, const EmpiricalMeasure& m,
                    const EmpiricalMeasure& m_prime, const std::vector<double>& eps);

/// Same for x -> delta_m u(., x) against <delta_m^2 u(m, x, .), m' - m>, maximized
/// over x in the atoms of m and m'.
FdTable fd_check_dm2(const CylindricalFunctional& u, const EmpiricalMeasure& m,
                     const EmpiricalMeasure& m_prime, const std::vector<double>& eps);

/// |u(m') - u(m) - int_0^1 <delta_m u(m^lambda), m' - m> d lambda| with a
/// 16-point Gauss-Legendre rule in lambda.
double integral_identity_gap(const CylindricalFunctional& u, const EmpiricalMeasure& m,
                             const EmpiricalMeasure& m_prime);
/// Second-order analogue at the point x.
double integral_identity_gap2(const CylindricalFunctional& u, const EmpiricalMeasure& m,
                              const EmpiricalMeasure& m_prime, const ConstVecRef& x);

}  // namespace condflow
