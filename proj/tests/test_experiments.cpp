#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "condflow/experiments.hpp"

using namespace condflow;

namespace {

const char* kTelescoping = R"(experiment: verify-ito
seed: 5
functional: mean-squared
bracket: realized
cross: pairwise
sizes: {n: 16, particles: 32, outer_paths: 4}
coefficients: {drift: 0.3, sigma: 0.0, sigma0: 1.0}
)";

}  // namespace

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_config("experiment: deriv-check\nseed: 1\nbogus: 2\n"), ConfigError);
  EXPECT_THROW(parse_config("experiment: verify-ito\nseed: 1\nsizes: {n: 4, typo: 1}\n"), ConfigError);
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse_config("experiment: nope\nseed: 1\n"), ConfigError);
  EXPECT_THROW(parse_config("experiment: verify-ito\nseed: 1\nsizes: {n: 0}\n"), ConfigError);
  EXPECT_THROW(parse_config("experiment: verify-ito\nseed: 1\nbracket: sideways\n"), ConfigError);
}

TEST(Config, MissingSeedFailsAtRun) {
  auto c = parse_config("experiment: deriv-check\n");
  EXPECT_FALSE(c.seed.has_value());
  EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(std::filesystem::path(CONDFLOW_SOURCE_DIR) / "configs")) {
    auto c = load_config(entry.path());
    EXPECT_TRUE(c.seed.has_value()) << entry.path();
    auto names = experiment_names();
    EXPECT_TRUE(std::binary_search(names.begin(), names.end(), c.experiment)) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 10u);
}

TEST(Registry, SortedAndComplete) {
  auto names = list_registry();
  EXPECT_TRUE(std::is_sorted(names.begin(), names.end()));
  for (const char* n : {"mean", "mean-squared", "second-moment", "variance", "lq-common-noise", "ablation-common",
                        "factor-y-mean"}) {
    EXPECT_TRUE(std::binary_search(names.begin(), names.end(), std::string(n))) << n;
  }
  EXPECT_EQ(names, list_registry());
  EXPECT_THROW(registry_field("missing"), ConfigError);
}

TEST(Run, TelescopingPassesAndIsDeterministic) {
  auto c = parse_config(kTelescoping);
  auto a = run_experiment(c);
  auto b = run_experiment(c);
  EXPECT_TRUE(a.pass);
  EXPECT_EQ(a.payload(), b.payload());
  EXPECT_LT(a.report["aggregate"]["mean_abs"].get<double>(), 1e-12);
  c.seed = 6;
  EXPECT_NE(run_experiment(c).payload(), a.payload());
}

TEST(Run, ThreadCountDoesNotChangePayload) {
  auto c = parse_config(kTelescoping);
  auto one = run_experiment(c);
  c.threads = 4;
  EXPECT_EQ(run_experiment(c).payload(), one.payload());
}

TEST(Run, WritesReportTablesAndManifest) {
  auto c = parse_config(kTelescoping);
  auto dir = std::filesystem::temp_directory_path() / "condflow_write_run_test";
  std::filesystem::remove_all(dir);
  auto files = write_run(run_experiment(c), c, dir);
  for (const char* f : {"report.json", "manifest.json", "terms.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "manifest.json");
  auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest["version"], kVersion);
  EXPECT_EQ(manifest["pass"], true);
  EXPECT_EQ(manifest["config"]["seed"], 5);
  std::filesystem::remove_all(dir);
}

TEST(Csv, SeventeenDigits) {
  EXPECT_EQ(csv_number(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(csv_number(1.0 / 3.0)), 1.0 / 3.0);
  CsvTable t{"x.csv", {"a", "b"}, {{"1", "2"}}};
  EXPECT_EQ(t.render(), "a,b\n1,2\n");
}
