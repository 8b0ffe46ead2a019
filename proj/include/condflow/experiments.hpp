#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "condflow/chainrule.hpp"
#include "condflow/mfc.hpp"

namespace condflow {

inline constexpr const char* kVersion = "0.3.0";

/// Bad config, unknown key or unknown experiment (exit status 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SizesConfig {
  std::size_t n = 64;
  std::size_t particles = 256;
  std::size_t outer_paths = 16;
};

/// dX = (drift + a - mean_reversion (x - mean)) dt + sigma dW + sigma0 dW0, X_0 ~ N(x0, x0_var).
struct CoefficientConfig {
  double drift = 0.0;
  double sigma = 1.0;
  double sigma0 = 0.0;
  double mean_reversion = 0.0;
  double x0 = 0.0;
  double x0_var = 0.0;
  double horizon = 1.0;
};

/// dY = k dt + gamma dB + gamma0 dW0, Y_0 = y0.
struct FactorConfig {
  bool enabled = false;
  double k = 0.0;
  double gamma = 0.0;
  double gamma0 = 1.0;
  double y0 = 0.0;
};

struct ToleranceConfig {
  double c = 0.05;
  std::optional<std::string> statistic;  ///< "mean-abs" | "signed-mean"; default depends on the experiment
  std::optional<std::string> scale;      ///< "root-sizes" | "mesh"
  bool check_quantile = false;
  double tol_hjb = 1e-4;
  double c_dpp = 0.5;
};

struct LemmaConfig {
  std::string weight = "one";
  double sigma = 1.0;
  std::vector<std::size_t> n_list{256, 1024, 4096};
  std::size_t seeds = 200;
  double max_error = 0.05;
};

struct DerivConfig {
  std::vector<std::string> functionals;  ///< empty means every built-in
  std::vector<double> eps{1e-1, 1e-2, 1e-3, 1e-4};
  double identity_tol = 1e-10;
};

struct LqConfig {
  LqParams params;
  double perturbation = 0.1;
  double perturbation_floor = 0.05;
  std::vector<std::array<double, 3>> mc_nodes{{0.0, 0.5, 0.5}, {0.5, -0.5, 1.0}, {0.75, 0.0, 0.25}};  ///< (t, mean, var)
  std::size_t mc_particles = 1024;
  std::size_t mc_paths = 64;
  std::size_t mc_steps = 128;
};

struct DppConfig {
  double t = 0.0;
  double theta = 0.5;
  double mean = 0.5;
  double var = 0.5;
  std::string control = "both";  ///< "optimal" | "constant" | "both"
  double band = 0.25;
};

struct ModulusConfig {
  std::size_t pairs = 20;
};

struct ExperimentConfig {
  std::string experiment;
  std::string functional = "second-moment";
  std::string instance;  ///< random-field or factor instance from the registry
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  BracketMode bracket = BracketMode::kAnalytic;
  CrossMode cross = CrossMode::kAnalytic;
  SizesConfig sizes;
  CoefficientConfig coefficients;
  FactorConfig factor;
  ToleranceConfig tolerance;
  std::vector<SweepCell> sweep;
  LemmaConfig lemma;
  DerivConfig deriv;
  LqConfig lq;
  DppConfig dpp;
  ModulusConfig modulus;
  std::string output = "out";
};

/// Subcommands accepted by the runner, sorted.
const std::vector<std::string>& experiment_names();

/// Parses a YAML document; unknown keys, bad enums or non-positive sizes throw ConfigError.
ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Sorted names of built-in functionals, random-field specs, factor functionals and control instances.
std::vector<std::string> list_registry();
RandomFieldSpec registry_field(const std::string& name);
FactorFunctional registry_factor(const std::string& name);

EnsembleConfig make_ensemble_config(const ExperimentConfig& config);
VerifyOptions make_verify_options(const ExperimentConfig& config);

struct CsvTable {
  std::string name;  ///< file name
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string render() const;
};

/// Doubles as %.17g.
std::string csv_number(double x);

struct RunResult {
  std::string experiment;
  nlohmann::json report;
  std::vector<CsvTable> tables;
  bool pass = false;

  /// Report and tables exactly as written to disk.
  std::string payload() const;
};

/// Dispatches to the named experiment. Throws ConfigError for an unknown name or missing seed.
RunResult run_experiment(const ExperimentConfig& config);

/// Writes report.json, the CSV tables and manifest.json into `dir`; returns the file names.
std::vector<std::string> write_run(const RunResult& result, const ExperimentConfig& config, const std::filesystem::path& dir);

/// Report body of a chain-rule verification.
nlohmann::json report_json(const VerificationReport& report);
CsvTable terms_table(const VerificationReport& report);

}  // namespace condflow
