#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stratope {

/// A context: an integer id plus an optional feature vector.
///
/// Finite environments address contexts by id (exact enumeration); feature
/// based models read `features`. Two contexts with the same id must carry the
/// same features.
struct Context {
  std::size_t id = 0;
  std::vector<double> features;
};

/// One logged observation (k, s, a, r). Logger ids are zero based.
struct LoggedSample {
  std::size_t logger = 0;
  Context context;
  std::size_t action = 0;
  double reward = 0.0;
};

/// K strata of logged samples whose sizes are fixed by design.
class StratifiedDataset {
 public:
  StratifiedDataset() = default;
  explicit StratifiedDataset(std::size_t num_strata) : strata_(num_strata) {}
  /// Takes ownership of the strata. Every sample in stratum k must have
  /// `logger == k`; violated ids throw std::invalid_argument.
  explicit StratifiedDataset(std::vector<std::vector<LoggedSample>> strata);

  std::size_t num_strata() const noexcept { return strata_.size(); }
  std::size_t size(std::size_t k) const { return strata_.at(k).size(); }
  std::size_t total() const noexcept;
  bool empty() const noexcept { return total() == 0; }

  std::vector<std::size_t> sizes() const;
  /// rho_k = n_k / n. Throws std::domain_error on an empty dataset.
  std::vector<double> proportions() const;

  std::span<const LoggedSample> stratum(std::size_t k) const { return strata_.at(k); }
  const std::vector<std::vector<LoggedSample>>& strata() const noexcept { return strata_; }

  /// Appends to stratum `sample.logger`.
  void add(LoggedSample sample);

  /// Subset selected by per-stratum index lists.
  StratifiedDataset subset(const std::vector<std::vector<std::size_t>>& indices) const;

  /// All samples in stratum order.
  std::vector<LoggedSample> pooled() const;

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& stratum : strata_) {
      for (const auto& sample : stratum) f(sample);
    }
  }

 private:
  std::vector<std::vector<LoggedSample>> strata_;
};

}  // namespace stratope
