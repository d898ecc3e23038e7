#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "stratope/nuisance.hpp"
#include "stratope/policy.hpp"
#include "stratope/types.hpp"

namespace stratope {

struct ClassificationDataset {
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
  /// Original label text, indexed by remapped label.
  std::vector<std::string> label_names;
  std::vector<std::string> feature_names;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.empty() ? 0 : features.front().size(); }
  std::size_t num_classes() const noexcept { return label_names.size(); }

  ClassificationDataset select(const std::vector<std::size_t>& rows) const;
  /// Context for row i (id = i).
  Context context(std::size_t i) const { return Context{i, features.at(i)}; }
};

/// Column holding the label: a zero-based index or a header name.
using LabelColumn = std::variant<std::size_t, std::string>;

/// Comma-separated rows. A header is detected when a non-label field of the
/// first row is not numeric (and is required when the label is named). Labels
/// are remapped to 0..l-1 in order of first appearance. Throws ParseError with
/// the 1-based line number.
ClassificationDataset parse_csv_dataset(std::istream& is, const LabelColumn& label_column);
ClassificationDataset load_csv_dataset(const std::filesystem::path& path,
                                       const LabelColumn& label_column);
/// Writes `f0,...,f{d-1},label`.
void write_csv_dataset(std::ostream& os, const ClassificationDataset& data);

/// a ~ policy(.|s), r = 1{a == y}. Context ids are `id_offset + row`.
std::vector<LoggedSample> classification_to_bandit(const ClassificationDataset& rows,
                                                   const Policy& policy, std::uint64_t seed,
                                                   std::size_t logger = 0,
                                                   std::size_t id_offset = 0);

struct PolicySuite {
  PolicyPtr evaluation;  // 1.00 det + 0.00 uniform
  PolicyPtr logger1;     // 0.95 det + 0.05 uniform
  PolicyPtr logger2;     // 0.05 det + 0.95 uniform
};

PolicySuite build_policy_suite(PolicyPtr det_policy);

/// n_1 = floor(n ratio / (1 + ratio) + 1/2); rows are permuted, the first n_1
/// are logged with logger1 and the rest with logger2. Context ids are eval row
/// indices. Throws std::invalid_argument when ratio <= 0 or a stratum is empty.
StratifiedDataset partition_eval_by_ratio(const ClassificationDataset& eval, double ratio,
                                          const Policy& logger1, const Policy& logger2,
                                          std::uint64_t seed);

std::size_t stratum_one_size(std::size_t n, double ratio);

struct ExperimentSplit {
  ClassificationDataset train;
  ClassificationDataset eval;
  std::uint64_t seed = 0;
};

/// Random disjoint split with round(train_fraction * n) training rows.
ExperimentSplit split_train_eval(const ClassificationDataset& data, std::uint64_t seed,
                                 double train_fraction = 0.3);

/// Multinomial logistic fit on the training rows, returned as a greedy policy.
std::shared_ptr<const GreedyPolicy> train_det_policy(const ClassificationDataset& train,
                                                     const FitConfig& config = {});

/// Fraction of rows whose greedy action equals the label.
double policy_accuracy(const GreedyPolicy& policy, const ClassificationDataset& rows);

struct SyntheticFixtureSpec {
  std::size_t classes = 4;
  std::size_t dim = 5;
  std::size_t rows = 1000;
  /// Standard deviation of the class centres; points have unit noise.
  double separation = 1.5;
  std::uint64_t seed = 7;
};

/// Gaussian class clusters with uniformly drawn labels.
ClassificationDataset make_synthetic_fixture(const SyntheticFixtureSpec& spec);

/// Line records `k,s_0,...,s_{d-1},a,r` after the header line.
void write_bandit_dataset(std::ostream& os, const StratifiedDataset& data);

}  // namespace stratope
