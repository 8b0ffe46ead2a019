#include "condflow/paths.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace condflow {

Partition::Partition(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) {
    throw std::invalid_argument("Partition: need at least two points");
  }
  if (times_.front() != 0.0) {
    throw std::invalid_argument("Partition: first point must be 0");
  }
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1]) || !std::isfinite(times_[i])) {
      throw std::invalid_argument("Partition: times must be finite and strictly increasing");
    }
    mesh_ = std::max(mesh_, times_[i] - times_[i - 1]);
  }
}

Partition Partition::uniform(double horizon, std::size_t cells) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("make_uniform_partition: horizon must be positive");
  }
  if (cells == 0) {
    throw std::invalid_argument("make_uniform_partition: need at least one cell");
  }
  std::vector<double> times(cells + 1);
  for (std::size_t i = 0; i <= cells; ++i) {
    times[i] = horizon * (static_cast<double>(i) / static_cast<double>(cells));
  }
  return Partition(std::move(times));
}

Partition make_uniform_partition(double horizon, std::size_t cells) {
  return Partition::uniform(horizon, cells);
}

std::vector<std::size_t> Partition::embed(const Partition& coarse) const {
  std::vector<std::size_t> index;
  index.reserve(coarse.size());
  std::size_t j = 0;
  for (double t : coarse.times()) {
    while (j < times_.size() && times_[j] < t) ++j;
    if (j == times_.size() || times_[j] != t) {
      throw std::invalid_argument("Partition: grid is not a sub-grid of the path grid");
    }
    index.push_back(j);
  }
  if (index.back() != times_.size() - 1) {
    throw std::invalid_argument("Partition: sub-grid must end at the same horizon");
  }
  return index;
}

bool Partition::refines(const Partition& coarse) const {
  try {
    embed(coarse);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

SamplePath::SamplePath(Partition partition, Eigen::MatrixXd values)
    : partition_(std::move(partition)), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.cols()) != partition_.size()) {
    throw std::invalid_argument("SamplePath: value count does not match partition");
  }
  if (values_.rows() == 0) {
    throw std::invalid_argument("SamplePath: dimension must be positive");
  }
}

SamplePath::SamplePath(Partition partition, Eigen::MatrixXd values, Decomposition decomposition)
    : SamplePath(std::move(partition), std::move(values)) {
  const auto& a = decomposition.finite_variation;
  const auto& m = decomposition.martingale;
  if (a.rows() != values_.rows() || a.cols() != values_.cols() || m.rows() != values_.rows() ||
      m.cols() != values_.cols()) {
    throw std::invalid_argument("SamplePath: decomposition shape mismatch");
  }
  if (!a.col(0).isZero(0.0) || !m.col(0).isZero(0.0)) {
    throw std::invalid_argument("SamplePath: decomposition must start at zero");
  }
  decomposition_ = std::move(decomposition);
  const double scale = 1.0 + values_.cwiseAbs().maxCoeff();
  if (decomposition_defect() > 1e-9 * scale) {
    throw std::invalid_argument("SamplePath: A + M + X_0 does not reproduce the path");
  }
}

const Decomposition& SamplePath::decomposition() const {
  if (!decomposition_) throw std::logic_error("SamplePath: no decomposition attached");
  return *decomposition_;
}

double SamplePath::decomposition_defect() const {
  if (!decomposition_) return 0.0;
  const Eigen::MatrixXd rebuilt = (decomposition_->finite_variation + decomposition_->martingale)
                                      .colwise() + values_.col(0);
  return (rebuilt - values_).cwiseAbs().maxCoeff();
}

Eigen::VectorXd SamplePath::value_at(double s) const {
  const auto times = partition_.times();
  if (!(s >= 0.0 && s <= partition_.horizon())) {
    throw std::invalid_argument("SamplePath::value_at: time outside [0, T]");
  }
  const auto it = std::lower_bound(times.begin(), times.end(), s);
  const auto k = static_cast<Eigen::Index>(it - times.begin());
  if (*it == s) return values_.col(k);
  const double w = (s - times[k - 1]) / (times[k] - times[k - 1]);
  return (1.0 - w) * values_.col(k - 1) + w * values_.col(k);
}

void SdeCoefficients::validate() const {
  if (state_dim == 0 || common_dim == 0) {
    throw std::invalid_argument("SdeCoefficients: dimensions must be positive");
  }
  if (!drift || !sigma || !sigma0) {
    throw std::invalid_argument("SdeCoefficients: drift, sigma and sigma0 are required");
  }
  if (factor_dim > 0 && (!factor_drift || !factor_sigma || !factor_sigma0)) {
    throw std::invalid_argument("SdeCoefficients: factor coefficients are incomplete");
  }
  const double b[] = {bounds.drift, bounds.sigma, bounds.sigma0,
                      bounds.factor_drift, bounds.factor_sigma, bounds.factor_sigma0};
  for (double v : b) {
    if (!(v >= 0.0)) throw std::invalid_argument("SdeCoefficients: bounds must be nonnegative");
  }
}

SdeCoefficients SdeCoefficients::scalar(double drift, double sigma, double sigma0,
                                        double mean_reversion, double control_gain) {
  SdeCoefficients c;
  c.drift = [=](double, const ConstVecRef& x, const ConstVecRef&, const MeasureMoments& m, double a,
                Eigen::Ref<Eigen::VectorXd> out) {
    out(0) = drift + control_gain * a - mean_reversion * (x(0) - m.mean(0));
  };
  c.sigma = [=](double, const ConstVecRef&, const ConstVecRef&, const MeasureMoments&, double,
                Eigen::Ref<Eigen::MatrixXd> out) { out(0, 0) = sigma; };
  c.sigma0 = [=](double, const ConstVecRef&, const ConstVecRef&, const MeasureMoments&, double,
                 Eigen::Ref<Eigen::MatrixXd> out) { out(0, 0) = sigma0; };
  c.bounds.drift = (mean_reversion == 0.0 && control_gain == 0.0) ? std::abs(drift) : 0.0;
  c.bounds.sigma = std::abs(sigma);
  c.bounds.sigma0 = std::abs(sigma0);
  return c;
}

SdeCoefficients SdeCoefficients::with_scalar_factor(double k, double gamma, double gamma0) const {
  if (common_dim != 1) {
    throw std::invalid_argument("with_scalar_factor: requires a scalar common noise");
  }
  SdeCoefficients c = *this;
  c.factor_dim = 1;
  c.factor_drift = [=](double, const ConstVecRef&, Eigen::Ref<Eigen::VectorXd> out) { out(0) = k; };
  c.factor_sigma = [=](double, const ConstVecRef&, Eigen::Ref<Eigen::MatrixXd> out) {
    out(0, 0) = gamma;
  };
  c.factor_sigma0 = [=](double, const ConstVecRef&, Eigen::Ref<Eigen::MatrixXd> out) {
    out(0, 0) = gamma0;
  };
  c.bounds.factor_drift = std::abs(k);
  c.bounds.factor_sigma = std::abs(gamma);
  c.bounds.factor_sigma0 = std::abs(gamma0);
  return c;
}

SamplePath simulate_brownian(const Partition& partition, std::size_t dim, const RngStream& rng,
                             std::uint32_t index) {
  if (dim == 0) throw std::invalid_argument("simulate_brownian: dimension must be positive");
  const auto n = static_cast<Eigen::Index>(partition.size());
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd values = Eigen::MatrixXd::Zero(d, n);
  Eigen::VectorXd z(d);
  for (Eigen::Index k = 1; k < n; ++k) {
    rng.normals(index, static_cast<std::uint32_t>(k - 1), std::span<double>(z.data(), dim));
    values.col(k) = values.col(k - 1) + std::sqrt(partition.step(k - 1)) * z;
  }
  Decomposition dec{Eigen::MatrixXd::Zero(d, n), values};
  return SamplePath(partition, values, std::move(dec));
}

SamplePath simulate_factor(const SdeCoefficients& coeffs, const Eigen::VectorXd& y0,
                           const Partition& partition, const SamplePath& common_path,
                           const RngStream& rng) {
  if (!coeffs.has_factor()) throw std::invalid_argument("simulate_factor: no factor coefficients");
  if (!(common_path.partition() == partition)) {
    throw std::invalid_argument("simulate_factor: common path is on a different partition");
  }
  if (static_cast<std::size_t>(y0.size()) != coeffs.factor_dim ||
      common_path.dim() != coeffs.common_dim) {
    throw std::invalid_argument("simulate_factor: dimension mismatch");
  }
  const auto n = static_cast<Eigen::Index>(partition.size());
  const auto dy = static_cast<Eigen::Index>(coeffs.factor_dim);
  const auto d0 = static_cast<Eigen::Index>(coeffs.common_dim);
  Eigen::MatrixXd y(dy, n), a = Eigen::MatrixXd::Zero(dy, n), m = Eigen::MatrixXd::Zero(dy, n);
  y.col(0) = y0;
  Eigen::VectorXd k(dy), db(dy);
  Eigen::MatrixXd gamma(dy, dy), gamma0(dy, d0);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double t = partition.time(i);
    const double dt = partition.step(i);
    const Eigen::VectorXd yi = y.col(i);
    coeffs.factor_drift(t, yi, k);
    coeffs.factor_sigma(t, yi, gamma);
    coeffs.factor_sigma0(t, yi, gamma0);
    rng.normals(0, static_cast<std::uint32_t>(i), std::span<double>(db.data(), coeffs.factor_dim));
    db *= std::sqrt(dt);
    const Eigen::VectorXd dw0 = common_path.value(i + 1) - common_path.value(i);
    a.col(i + 1) = a.col(i) + k * dt;
    m.col(i + 1) = m.col(i) + gamma * db + gamma0 * dw0;
    y.col(i + 1) = yi + k * dt + gamma * db + gamma0 * dw0;
  }
  return SamplePath(partition, std::move(y), Decomposition{std::move(a), std::move(m)});
}

}  // namespace condflow
