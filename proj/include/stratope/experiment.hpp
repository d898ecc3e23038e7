#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stratope/data_pipeline.hpp"
#include "stratope/nuisance.hpp"
#include "stratope/oracle.hpp"
#include "stratope/variance.hpp"

namespace stratope {

/// Estimators understood by the benchmark: IS, IS-Avg, IS-PW, DR, DR-Avg,
/// DR-PW, SMRDR, MRDR, plus Oracle (returns the true value; for harness checks).
const std::vector<std::string>& standard_estimators();
bool is_known_estimator(const std::string& name);

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset_path;
  LabelColumn label_column = std::string("label");
  std::optional<SyntheticFixtureSpec> synthetic;

  std::vector<double> ratios{0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0};
  std::size_t replications = 200;
  std::uint64_t seed = 1;
  std::vector<std::string> estimators = standard_estimators();
  std::size_t folds = 2;
  double train_fraction = 0.3;
  /// When false (the default) logging policies are estimated per fold.
  bool known_loggers = false;

  /// Logistic fits default to standardised features, step 0.5, 300 steps and
  /// unit ridge strength.
  FitConfig policy_fit{0.5, 300, 1.0, 0, true};
  FitConfig q_fit{0.5, 300, 1.0, 0, true};
  FitConfig behavior_fit{0.5, 300, 1.0, 0, true};
  ControlVariateFitConfig cv_fit{FitConfig{0.1, 150, 0.0, 0, false}, 3, 0.5};
  double propensity_floor = 1e-6;
  std::optional<double> max_weight;
  VarianceOptions variance;

  /// Record wall time in the CSVs; disable for byte-reproducible output.
  bool timing = true;
  std::size_t threads = 1;
  std::filesystem::path output_dir = "results";

  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
ExperimentConfig experiment_config_from_json(const nlohmann::json& value);
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);

/// (1 / (J sqrt(M))) sqrt(sum_m (J - J_m)^2). Throws std::domain_error when
/// J == 0 and std::invalid_argument when there are no estimates.
double relative_rmse(double true_value, std::span<const double> estimates);
/// Delta-method standard error of relative_rmse.
double relative_rmse_se(double true_value, std::span<const double> estimates);

struct ResultRow {
  std::string estimator;
  double ratio = 0.0;
  double relative_rmse = 0.0;
  double rmse_se = 0.0;
  std::size_t replications = 0;  // successful replications
  std::size_t failures = 0;
  double wall_ms = 0.0;
};

struct ReplicationRecord {
  std::size_t ratio_index = 0;
  double ratio = 0.0;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::string estimator;
  double value = 0.0;
  bool ok = true;
  std::string error;
};

struct BenchmarkResult {
  double true_value = 0.0;
  std::vector<ResultRow> rows;
  std::vector<ReplicationRecord> records;
  nlohmann::json manifest;
  /// Estimators that failed in every replication of some ratio.
  std::vector<std::string> total_failures;
};

/// Seed of replication m at ratio index i.
std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t ratio_index,
                               std::size_t replication);

BenchmarkResult run_benchmark(const ExperimentConfig& config);

/// results.csv, fig_dr_vs_is.csv, fig_smrdr_vs_mrdr.csv, replications.csv and
/// manifest.json under `dir`.
void write_benchmark_outputs(const BenchmarkResult& result, const std::filesystem::path& dir,
                             bool timing = true);

void write_result_csv(std::ostream& os, std::span<const ResultRow> rows, bool timing);

// ---------------------------------------------------------------------------

struct TheoremSuiteConfig {
  /// unbiasedness, orderings, optimality, stratified_vs_iid, efficiency_bound,
  /// dilemma. Empty means nothing to check.
  std::vector<std::string> checks;
  std::size_t instances = 50;
  std::uint64_t seed = 2024;
  std::size_t random_weights = 20;
  std::size_t random_control_variates = 20;
  std::size_t random_lambdas = 5;
  /// Negative control: scale every random h by 1.1, breaking the constraint.
  bool corrupt_weights = false;
  DilemmaSearchConfig dilemma;
  /// Monte Carlo confirmation of the dilemma pair; 0 skips it.
  std::size_t dilemma_replications = 0;
  RandomInstanceConfig instance;
};

const std::vector<std::string>& all_theorem_checks();
TheoremSuiteConfig theorem_suite_config_from_json(const nlohmann::json& value);

struct CheckResult {
  std::string name;
  bool passed = true;
  /// Worst slack observed (>= 0 on success).
  double margin = 0.0;
  std::string detail;
};

struct TheoremReport {
  std::vector<CheckResult> checks;
  bool passed() const;
};

TheoremReport run_theorem_suite(const TheoremSuiteConfig& config);

}  // namespace stratope
