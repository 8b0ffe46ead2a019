// condflow: run a named experiment from a YAML config.
//
//   condflow verify-ito --config configs/verify_ito_telescoping.yaml --out out/tele
//   condflow list
//
// Exit status: 0 all checks pass, 1 a check failed or the run aborted, 2 usage or config error.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "condflow/errors.hpp"
#include "condflow/experiments.hpp"

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 0;
};

int run(const std::string& name, const Flags& f) {
  condflow::ExperimentConfig cfg;
  try {
    if (!f.config.empty()) cfg = condflow::load_config(f.config);
    if (!cfg.experiment.empty() && cfg.experiment != name) {
      throw condflow::ConfigError("config names experiment '" + cfg.experiment + "' but '" + name + "' was requested");
    }
    cfg.experiment = name;
    if (f.seed) cfg.seed = f.seed;
    if (f.threads > 0) cfg.threads = f.threads;
    if (!f.out.empty()) cfg.output = f.out;
    if (!cfg.seed) throw condflow::ConfigError("a seed is required (config 'seed' or --seed)");
  } catch (const condflow::ConfigError& e) {
    std::cerr << "condflow: " << e.what() << "\n";
    return kUsage;
  }
  condflow::RunResult result;
  try {
    result = condflow::run_experiment(cfg);
  } catch (const condflow::ConfigError& e) {
    std::cerr << "condflow: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "condflow: run aborted: " << e.what() << "\n";
    return kFail;
  }
  const auto files = condflow::write_run(result, cfg, cfg.output);
  std::cout << name << ": " << (result.pass ? "PASS" : "FAIL") << " (" << files.size() + 1 << " files in " << cfg.output
            << ")\n";
  return result.pass ? kPass : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"condflow: chain rules along conditional law flows"};
  app.require_subcommand(1);
  Flags flags;
  std::string chosen;
  for (const auto& name : condflow::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", flags.config, "YAML config")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "seed (overrides the config)");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->callback([&chosen, name] { chosen = name; });
  }
  auto* list = app.add_subcommand("list", "print the registry of functionals and instances");
  list->callback([&chosen] { chosen = "list"; });
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }
  if (chosen == "list") {
    for (const auto& n : condflow::list_registry()) std::cout << n << "\n";
    return kPass;
  }
  return run(chosen, flags);
}
