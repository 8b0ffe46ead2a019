#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "condflow/paths.hpp"

namespace condflow {

/// Increments Y_{t_i} - Y_{t_{i-1}} over the cells of a (possibly truncated) grid.
struct IncrementTable {
  Partition partition;        ///< cell boundaries; the last point is the truncation time s
  Eigen::MatrixXd increments;  ///< dim x cells
};

/// Matrix weights H_{t_{i-1}} held constant on (t_{i-1}, t_i].
class WeightProcess {
 public:
  WeightProcess(Partition partition, std::vector<Eigen::MatrixXd> cell_values);

  /// Samples a continuous H at the left endpoint of each cell.
  static WeightProcess sample(const Partition& partition,
                              const std::function<Eigen::MatrixXd(double)>& weight);
  static WeightProcess constant(const Partition& partition, const Eigen::MatrixXd& value);

  const Partition& partition() const { return partition_; }
  const Eigen::MatrixXd& cell(std::size_t i) const { return values_[i]; }
  double sup_norm() const { return sup_norm_; }

 private:
  Partition partition_;
  std::vector<Eigen::MatrixXd> values_;
  double sup_norm_ = 0.0;
};

/// Increments of `path` along the sub-grid `grid`, truncated at time s; the
/// final cell ends at s (path interpolated linearly between its own grid points).
IncrementTable increments(const SamplePath& path, const Partition& grid, double s);

/// Sum of Euclidean norms of the path's own grid increments.
double total_variation(const SamplePath& path);

/// sum_i (dY_i)(dY_i)^T along the sub-grid `grid`.
Eigen::MatrixXd realized_qv(const SamplePath& path, const Partition& grid);
Eigen::MatrixXd realized_qv(const SamplePath& path);

/// sum_i H_{t_{i-1}} : (dX_i)(dXhat_i)^T along grid; Xhat = X when omitted.
double weighted_qv_sum(const WeightProcess& weight, const SamplePath& x, const SamplePath* xhat,
                       const Partition& grid);
inline double weighted_qv_sum(const WeightProcess& weight, const SamplePath& x, const Partition& grid) {
  return weighted_qv_sum(weight, x, nullptr, grid);
}

/// sum_i H : (dA_i)(dM_i)^T, the mixed finite-variation / martingale term.
double mixed_qv_sum(const WeightProcess& weight, const SamplePath& path, const Partition& grid);

/// Process with a known bracket and a continuous weight so that the limit of
/// the weighted QV sums is available in closed form for each path.
struct LemmaInstance {
  std::string name;
  double horizon = 1.0;
  std::function<SamplePath(const Partition&, const RngStream&)> simulate;
  std::function<Eigen::MatrixXd(double)> weight;
  /// Integral of H : d<X> over [0, T] for the given path.
  std::function<double(const SamplePath&)> limit;
};

/// Standard instances: X = sigma * W with H = 1 or H_t = t, and X_t = t (pure drift).
LemmaInstance lemma_brownian(double sigma, const std::string& weight);
LemmaInstance lemma_pure_drift();

struct LemmaRow {
  std::size_t n = 0;
  double mean_abs_error = 0.0;
  double std_error = 0.0;
  std::optional<double> ratio;   ///< error(previous n) / error(n)
  std::optional<bool> ratio_ok;  ///< ratio within the band for the refinement factor
};

struct LemmaStudy {
  std::string instance;
  std::size_t seeds = 0;
  std::vector<LemmaRow> rows;
  /// True when every ratio flag is set (vacuously true for a single row).
  bool trend_ok() const;
};

/// Band for the error ratio when the cell count grows by `factor`: the
/// expected n^{-1/2} ratio sqrt(factor) widened to [0.65, 1.5] of itself
/// ([1.3, 3.0] for factor 4).
std::pair<double, double> ratio_band(double factor);

/// L1 error of the weighted QV statistic against its analytic limit, per n,
/// averaged over `seeds` independent paths (seed index = RNG index).
LemmaStudy lemma_convergence_study(const LemmaInstance& instance, const std::vector<std::size_t>& n_list,
                                   std::size_t seeds, std::uint64_t seed);

}  // namespace condflow
