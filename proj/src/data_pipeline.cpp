#include "stratope/data_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "stratope/errors.hpp"
#include "stratope/rng.hpp"

namespace stratope {

ClassificationDataset ClassificationDataset::select(const std::vector<std::size_t>& rows) const {
  ClassificationDataset out;
  out.label_names = label_names;
  out.feature_names = feature_names;
  out.features.reserve(rows.size());
  out.labels.reserve(rows.size());
  for (std::size_t i : rows) {
    out.features.push_back(features.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

// CSV ------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

bool parse_number(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* begin = text.data();
  if (*begin == '+') ++begin;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

ClassificationDataset parse_csv_dataset(std::istream& is, const LabelColumn& label_column) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    lines.emplace_back(line_no, split_fields(line));
  }
  if (lines.empty()) throw ParseError(0, "empty dataset file");

  const std::size_t width = lines.front().second.size();
  if (width < 2) throw ParseError(lines.front().first, "need at least one feature and a label");
  for (const auto& [no, fields] : lines) {
    if (fields.size() != width) {
      throw ParseError(no, "expected " + std::to_string(width) + " fields, found " +
                               std::to_string(fields.size()));
    }
  }

  bool has_header = false;
  std::size_t label_index = 0;
  if (const auto* name = std::get_if<std::string>(&label_column)) {
    has_header = true;
    const auto& header = lines.front().second;
    const auto it = std::find(header.begin(), header.end(), *name);
    if (it == header.end()) throw ParseError(lines.front().first, "unknown label column '" + *name + "'");
    label_index = static_cast<std::size_t>(it - header.begin());
  } else {
    label_index = std::get<std::size_t>(label_column);
    if (label_index >= width) {
      throw ParseError(lines.front().first,
                       "label column " + std::to_string(label_index) + " out of range");
    }
    double dummy = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (j != label_index && !parse_number(lines.front().second[j], dummy)) has_header = true;
    }
  }

  ClassificationDataset data;
  if (has_header) {
    for (std::size_t j = 0; j < width; ++j) {
      if (j != label_index) data.feature_names.push_back(lines.front().second[j]);
    }
  } else {
    for (std::size_t j = 0; j + 1 < width; ++j) data.feature_names.push_back("f" + std::to_string(j));
  }

  std::map<std::string, std::size_t> label_ids;
  for (std::size_t i = has_header ? 1 : 0; i < lines.size(); ++i) {
    const auto& [no, fields] = lines[i];
    std::vector<double> x;
    x.reserve(width - 1);
    for (std::size_t j = 0; j < width; ++j) {
      if (j == label_index) continue;
      double v = 0.0;
      if (!parse_number(fields[j], v)) {
        throw ParseError(no, "non-numeric feature '" + fields[j] + "' in column " + std::to_string(j));
      }
      x.push_back(v);
    }
    const std::string& label = fields[label_index];
    if (label.empty()) throw ParseError(no, "empty label");
    auto [it, inserted] = label_ids.try_emplace(label, data.label_names.size());
    if (inserted) data.label_names.push_back(label);
    data.features.push_back(std::move(x));
    data.labels.push_back(it->second);
  }
  if (data.labels.empty()) throw ParseError(lines.back().first, "no data rows");
  return data;
}

ClassificationDataset load_csv_dataset(const std::filesystem::path& path,
                                       const LabelColumn& label_column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  return parse_csv_dataset(in, label_column);
}

void write_csv_dataset(std::ostream& os, const ClassificationDataset& data) {
  for (std::size_t j = 0; j < data.dim(); ++j) os << 'f' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.features[i]) os << format_double(v) << ',';
    os << data.label_names.at(data.labels[i]) << '\n';
  }
}

// Bandit conversion ----------------------------------------------------------

namespace {

void log_rows(const ClassificationDataset& rows, std::span<const std::size_t> indices,
              const Policy& policy, Rng& rng, std::size_t logger,
              std::vector<LoggedSample>& out) {
  if (policy.num_actions() != rows.num_classes()) {
    throw std::invalid_argument("policy action count differs from the class count");
  }
  for (std::size_t i : indices) {
    LoggedSample x;
    x.logger = logger;
    x.context = rows.context(i);
    x.action = policy.sample_action(x.context, rng);
    x.reward = x.action == rows.labels[i] ? 1.0 : 0.0;
    out.push_back(std::move(x));
  }
}

}  // namespace

std::vector<LoggedSample> classification_to_bandit(const ClassificationDataset& rows,
                                                   const Policy& policy, std::uint64_t seed,
                                                   std::size_t logger, std::size_t id_offset) {
  std::vector<std::size_t> idx(rows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  std::vector<LoggedSample> out;
  out.reserve(rows.size());
  log_rows(rows, idx, policy, rng, logger, out);
  for (auto& x : out) x.context.id += id_offset;
  return out;
}

PolicySuite build_policy_suite(PolicyPtr det_policy) {
  if (!det_policy) throw std::invalid_argument("null deterministic policy");
  return PolicySuite{std::make_shared<const MixturePolicy>(1.0, det_policy),
                     std::make_shared<const MixturePolicy>(0.95, det_policy),
                     std::make_shared<const MixturePolicy>(0.05, det_policy)};
}

std::size_t stratum_one_size(std::size_t n, double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    throw std::invalid_argument("stratum ratio must be positive and finite");
  }
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio / (1.0 + ratio) + 0.5));
}

StratifiedDataset partition_eval_by_ratio(const ClassificationDataset& eval, double ratio,
                                          const Policy& logger1, const Policy& logger2,
                                          std::uint64_t seed) {
  const std::size_t n = eval.size();
  const std::size_t n1 = stratum_one_size(n, ratio);
  if (n1 == 0 || n1 >= n) {
    throw std::invalid_argument("ratio " + format_double(ratio) + " leaves an empty stratum for n = " +
                                std::to_string(n));
  }
  const Rng root(seed);
  Rng perm_rng = root.split(0);
  const auto perm = perm_rng.permutation(n);
  const std::span<const std::size_t> all(perm);
  std::vector<std::vector<LoggedSample>> strata(2);
  Rng rng1 = root.split(1);
  Rng rng2 = root.split(2);
  log_rows(eval, all.first(n1), logger1, rng1, 0, strata[0]);
  log_rows(eval, all.subspan(n1), logger2, rng2, 1, strata[1]);
  return StratifiedDataset(std::move(strata));
}

ExperimentSplit split_train_eval(const ClassificationDataset& data, std::uint64_t seed,
                                 double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0, 1)");
  }
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw std::invalid_argument("split leaves an empty part");
  Rng rng(seed);
  auto perm = rng.permutation(n);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> eval(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
  return ExperimentSplit{data.select(train), data.select(eval), seed};
}

std::shared_ptr<const GreedyPolicy> train_det_policy(const ClassificationDataset& train,
                                                     const FitConfig& config) {
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  return std::make_shared<const GreedyPolicy>(
      fit_multinomial(train.features, train.labels, train.num_classes(), config));
}

double policy_accuracy(const GreedyPolicy& policy, const ClassificationDataset& rows) {
  if (rows.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (policy.greedy_action(rows.context(i)) == rows.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

ClassificationDataset make_synthetic_fixture(const SyntheticFixtureSpec& spec) {
  if (spec.classes < 2 || spec.dim == 0 || spec.rows == 0) {
    throw std::invalid_argument("fixture needs at least 2 classes, 1 feature and 1 row");
  }
  Rng rng(spec.seed);
  Rng centre_rng = rng.split(0);
  Rng row_rng = rng.split(1);
  std::vector<std::vector<double>> centres(spec.classes, std::vector<double>(spec.dim));
  for (auto& c : centres) {
    for (double& v : c) v = spec.separation * centre_rng.normal();
  }
  ClassificationDataset data;
  for (std::size_t c = 0; c < spec.classes; ++c) data.label_names.push_back(std::to_string(c));
  for (std::size_t j = 0; j < spec.dim; ++j) data.feature_names.push_back("f" + std::to_string(j));
  for (std::size_t i = 0; i < spec.rows; ++i) {
    const std::size_t y = row_rng.below(spec.classes);
    std::vector<double> x(spec.dim);
    for (std::size_t j = 0; j < spec.dim; ++j) x[j] = centres[y][j] + row_rng.normal();
    data.features.push_back(std::move(x));
    data.labels.push_back(y);
  }
  return data;
}

void write_bandit_dataset(std::ostream& os, const StratifiedDataset& data) {
  std::size_t d = 0;
  data.for_each([&](const LoggedSample& x) { d = std::max(d, x.context.features.size()); });
  os << 'k';
  for (std::size_t j = 0; j < d; ++j) os << ",s_" << j;
  os << ",a,r\n";
  data.for_each([&](const LoggedSample& x) {
    os << x.logger;
    for (double v : x.context.features) os << ',' << format_double(v);
    os << ',' << x.action << ',' << format_double(x.reward) << '\n';
  });
}

}  // namespace stratope
