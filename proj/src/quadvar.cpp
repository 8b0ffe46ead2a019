#include "condflow/quadvar.hpp"

#include <cmath>
#include <stdexcept>

#include "condflow/stats.hpp"

namespace condflow {

WeightProcess::WeightProcess(Partition partition, std::vector<Eigen::MatrixXd> cell_values)
    : partition_(std::move(partition)), values_(std::move(cell_values)) {
  if (values_.size() != partition_.cells()) {
    throw std::invalid_argument("WeightProcess: need one value per cell");
  }
  for (const auto& h : values_) {
    if (!h.allFinite()) throw std::invalid_argument("WeightProcess: non-finite weight");
    if (h.rows() != values_.front().rows() || h.cols() != values_.front().cols()) {
      throw std::invalid_argument("WeightProcess: inconsistent weight shapes");
    }
    sup_norm_ = std::max(sup_norm_, h.norm());
  }
}

WeightProcess WeightProcess::sample(const Partition& partition,
                                    const std::function<Eigen::MatrixXd(double)>& weight) {
  std::vector<Eigen::MatrixXd> values;
  values.reserve(partition.cells());
  for (std::size_t i = 0; i < partition.cells(); ++i) values.push_back(weight(partition.time(i)));
  return WeightProcess(partition, std::move(values));
}

WeightProcess WeightProcess::constant(const Partition& partition, const Eigen::MatrixXd& value) {
  return WeightProcess(partition, std::vector<Eigen::MatrixXd>(partition.cells(), value));
}

IncrementTable increments(const SamplePath& path, const Partition& grid, double s) {
  if (!(s >= 0.0 && s <= grid.horizon())) {
    throw std::invalid_argument("increments: s outside [0, T]");
  }
  if (grid.horizon() != path.partition().horizon()) {
    throw std::invalid_argument("increments: grid horizon differs from the path");
  }
  // Grid points off the path grid are allowed: values are interpolated.
  std::vector<double> times;
  for (double t : grid.times()) {
    if (t < s) times.push_back(t);
  }
  times.push_back(s);
  if (times.size() < 2) {
    // s == 0: a single degenerate cell [0, 0] carries no information.
    return IncrementTable{Partition({0.0, grid.horizon()}), Eigen::MatrixXd::Zero(path.dim(), 0)};
  }
  Eigen::MatrixXd inc(path.dim(), static_cast<Eigen::Index>(times.size() - 1));
  Eigen::VectorXd prev = path.value_at(times[0]);
  for (std::size_t i = 1; i < times.size(); ++i) {
    Eigen::VectorXd cur = path.value_at(times[i]);
    inc.col(static_cast<Eigen::Index>(i - 1)) = cur - prev;
    prev = std::move(cur);
  }
  return IncrementTable{Partition(std::move(times)), std::move(inc)};
}

double total_variation(const SamplePath& path) {
  double tv = 0.0;
  for (std::size_t k = 1; k < path.size(); ++k) tv += (path.value(k) - path.value(k - 1)).norm();
  return tv;
}

namespace {

Eigen::MatrixXd grid_increments(const Eigen::MatrixXd& values, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd inc(values.rows(), static_cast<Eigen::Index>(idx.size() - 1));
  for (std::size_t i = 1; i < idx.size(); ++i) {
    inc.col(static_cast<Eigen::Index>(i - 1)) =
        values.col(static_cast<Eigen::Index>(idx[i])) - values.col(static_cast<Eigen::Index>(idx[i - 1]));
  }
  return inc;
}

}  // namespace

Eigen::MatrixXd realized_qv(const SamplePath& path, const Partition& grid) {
  const Eigen::MatrixXd inc = grid_increments(path.values(), path.partition().embed(grid));
  return inc * inc.transpose();
}

Eigen::MatrixXd realized_qv(const SamplePath& path) { return realized_qv(path, path.partition()); }

double weighted_qv_sum(const WeightProcess& weight, const SamplePath& x, const SamplePath* xhat,
                       const Partition& grid) {
  const SamplePath& y = xhat ? *xhat : x;
  if (!(weight.partition() == grid)) {
    throw std::invalid_argument("weighted_qv_sum: weight is not piecewise constant along the grid");
  }
  if (!(x.partition() == y.partition())) {
    throw std::invalid_argument("weighted_qv_sum: X and Xhat live on different grids");
  }
  const auto idx = x.partition().embed(grid);
  const Eigen::MatrixXd dx = grid_increments(x.values(), idx);
  const Eigen::MatrixXd dy = xhat ? grid_increments(y.values(), idx) : dx;
  if (weight.cell(0).rows() != dx.rows() || weight.cell(0).cols() != dy.rows()) {
    throw std::invalid_argument("weighted_qv_sum: weight shape does not match the paths");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < dx.cols(); ++i) {
    sum += dx.col(i).dot(weight.cell(static_cast<std::size_t>(i)) * dy.col(i));
  }
  return sum;
}

double mixed_qv_sum(const WeightProcess& weight, const SamplePath& path, const Partition& grid) {
  const auto& dec = path.decomposition();
  const auto idx = path.partition().embed(grid);
  const Eigen::MatrixXd da = grid_increments(dec.finite_variation, idx);
  const Eigen::MatrixXd dm = grid_increments(dec.martingale, idx);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < da.cols(); ++i) {
    sum += da.col(i).dot(weight.cell(static_cast<std::size_t>(i)) * dm.col(i));
  }
  return sum;
}

LemmaInstance lemma_brownian(double sigma, const std::string& weight) {
  LemmaInstance inst;
  inst.horizon = 1.0;
  inst.simulate = [sigma](const Partition& p, const RngStream& rng) {
    SamplePath w = simulate_brownian(p, 1, rng);
    Eigen::MatrixXd v = sigma * w.values();
    return SamplePath(p, v, Decomposition{Eigen::MatrixXd::Zero(1, v.cols()), v});
  };
  const double s2 = sigma * sigma;
  if (weight == "one") {
    inst.name = "brownian/H=1";
    inst.weight = [](double) { return Eigen::MatrixXd::Ones(1, 1); };
    inst.limit = [s2](const SamplePath& x) { return s2 * x.partition().horizon(); };
  } else if (weight == "t") {
    inst.name = "brownian/H=t";
    inst.weight = [](double t) { return Eigen::MatrixXd::Constant(1, 1, t); };
    inst.limit = [s2](const SamplePath& x) {
      const double T = x.partition().horizon();
      return s2 * 0.5 * T * T;
    };
  } else {
    throw std::invalid_argument("lemma_brownian: weight must be 'one' or 't'");
  }
  return inst;
}

LemmaInstance lemma_pure_drift() {
  LemmaInstance inst;
  inst.name = "drift/H=1";
  inst.horizon = 1.0;
  inst.simulate = [](const Partition& p, const RngStream&) {
    Eigen::MatrixXd v(1, static_cast<Eigen::Index>(p.size()));
    for (std::size_t k = 0; k < p.size(); ++k) v(0, static_cast<Eigen::Index>(k)) = p.time(k);
    return SamplePath(p, v, Decomposition{v, Eigen::MatrixXd::Zero(1, v.cols())});
  };
  inst.weight = [](double) { return Eigen::MatrixXd::Ones(1, 1); };
  inst.limit = [](const SamplePath&) { return 0.0; };
  return inst;
}

std::pair<double, double> ratio_band(double factor) {
  const double expected = std::sqrt(factor);
  return {0.65 * expected, 1.5 * expected};
}

bool LemmaStudy::trend_ok() const {
  for (const auto& row : rows) {
    if (row.ratio_ok && !*row.ratio_ok) return false;
  }
  return true;
}

LemmaStudy lemma_convergence_study(const LemmaInstance& instance, const std::vector<std::size_t>& n_list,
                                   std::size_t seeds, std::uint64_t seed) {
  if (seeds == 0) throw std::invalid_argument("lemma_convergence_study: need at least one seed");
  LemmaStudy study{instance.name, seeds, {}};
  std::vector<double> errors(seeds);
  for (std::size_t j = 0; j < n_list.size(); ++j) {
    const Partition grid = Partition::uniform(instance.horizon, n_list[j]);
    const WeightProcess h = WeightProcess::sample(grid, instance.weight);
    for (std::size_t s = 0; s < seeds; ++s) {
      const RngStream rng = RngStream::for_role(seed, static_cast<std::uint32_t>(s), StreamRole::kUser);
      const SamplePath x = instance.simulate(grid, rng);
      errors[s] = std::abs(weighted_qv_sum(h, x, grid) - instance.limit(x));
    }
    const MeanSe est = mean_se(errors);
    LemmaRow row{n_list[j], est.mean, est.se, std::nullopt, std::nullopt};
    if (j > 0) {
      const auto& prev = study.rows.back();
      const double factor = static_cast<double>(n_list[j]) / static_cast<double>(n_list[j - 1]);
      if (est.mean > 0.0) {
        row.ratio = prev.mean_abs_error / est.mean;
        const auto [lo, hi] = ratio_band(factor);
        row.ratio_ok = *row.ratio >= lo && *row.ratio <= hi;
      } else {
        row.ratio_ok = prev.mean_abs_error == 0.0;
      }
    }
    study.rows.push_back(row);
  }
  return study;
}

}  // namespace condflow
