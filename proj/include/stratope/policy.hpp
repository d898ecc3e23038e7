#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stratope/rng.hpp"
#include "stratope/types.hpp"

namespace stratope {

class DiscreteEnvironment;

/// Stochastic map from contexts to distributions over a finite action set.
/// Implementations are immutable after construction.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::size_t num_actions() const noexcept = 0;
  /// Writes pi(.|s) into `out` (size num_actions()).
  virtual void fill_probabilities(const Context& s, std::span<double> out) const = 0;

  std::vector<double> probabilities(const Context& s) const;
  double action_probability(const Context& s, std::size_t a) const;
  std::size_t sample_action(const Context& s, Rng& rng) const;
};

using PolicyPtr = std::shared_ptr<const Policy>;

class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(std::size_t num_actions);
  std::size_t num_actions() const noexcept override { return num_actions_; }
  void fill_probabilities(const Context& s, std::span<double> out) const override;

 private:
  std::size_t num_actions_;
};

/// Explicit probability table indexed by context id (rows) and action.
class TabularPolicy final : public Policy {
 public:
  /// `table[s][a]`; every row must lie on the simplex within 1e-9.
  explicit TabularPolicy(std::vector<std::vector<double>> table);

  static TabularPolicy point_mass(std::size_t num_contexts, std::size_t num_actions,
                                  std::span<const std::size_t> action_per_context);

  std::size_t num_actions() const noexcept override { return num_actions_; }
  std::size_t num_contexts() const noexcept { return table_.size(); }
  void fill_probabilities(const Context& s, std::span<double> out) const override;
  const std::vector<std::vector<double>>& table() const noexcept { return table_; }

 private:
  std::vector<std::vector<double>> table_;
  std::size_t num_actions_;
};

/// Affine scores W x + b over context features.
struct LinearScorer {
  Eigen::MatrixXd weights;  // A x d
  Eigen::VectorXd bias;     // A

  std::size_t num_actions() const noexcept { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(weights.cols()); }
  void scores(const Context& s, std::span<double> out) const;
};

class LinearSoftmaxPolicy final : public Policy {
 public:
  explicit LinearSoftmaxPolicy(LinearScorer scorer, double temperature = 1.0);

  std::size_t num_actions() const noexcept override { return scorer_.num_actions(); }
  void fill_probabilities(const Context& s, std::span<double> out) const override;
  const LinearScorer& scorer() const noexcept { return scorer_; }
  double temperature() const noexcept { return temperature_; }

 private:
  LinearScorer scorer_;
  double temperature_;
};

/// Point mass on the highest score; ties go to the lowest action index.
class GreedyPolicy final : public Policy {
 public:
  using ScoreFn = std::function<void(const Context&, std::span<double>)>;

  explicit GreedyPolicy(LinearScorer scorer);
  GreedyPolicy(std::size_t num_actions, ScoreFn scorer);

  std::size_t num_actions() const noexcept override { return num_actions_; }
  void fill_probabilities(const Context& s, std::span<double> out) const override;
  std::size_t greedy_action(const Context& s) const;
  /// Present only when built from a LinearScorer.
  const LinearScorer* linear_scorer() const noexcept { return linear_ ? &*linear_ : nullptr; }

 private:
  std::size_t num_actions_;
  ScoreFn scorer_;
  std::shared_ptr<const LinearScorer> linear_;
};

/// alpha * base + (1 - alpha) * uniform.
class MixturePolicy final : public Policy {
 public:
  MixturePolicy(double alpha, PolicyPtr base);

  std::size_t num_actions() const noexcept override { return base_->num_actions(); }
  void fill_probabilities(const Context& s, std::span<double> out) const override;
  double alpha() const noexcept { return alpha_; }
  const PolicyPtr& base() const noexcept { return base_; }

 private:
  double alpha_;
  PolicyPtr base_;
};

/// sum_k rho_k pi_k.
class MarginalPolicy final : public Policy {
 public:
  MarginalPolicy(std::vector<PolicyPtr> components, std::vector<double> rho);

  std::size_t num_actions() const noexcept override { return num_actions_; }
  void fill_probabilities(const Context& s, std::span<double> out) const override;
  const std::vector<PolicyPtr>& components() const noexcept { return components_; }
  const std::vector<double>& rho() const noexcept { return rho_; }

 private:
  std::vector<PolicyPtr> components_;
  std::vector<double> rho_;
  std::size_t num_actions_;
};

/// The marginal logging policy pi_* = sum_k rho_k pi_k. With one logger the
/// logger itself is returned. Throws std::invalid_argument when rho is off the
/// simplex (tolerance 1e-9) or its length differs from the logger count.
PolicyPtr marginal_policy(std::span<const PolicyPtr> loggers, std::span<const double> rho);

void validate_simplex(std::span<const double> weights, double tol = 1e-9);

struct OverlapReport {
  bool holds = true;
  /// (context index, action) pairs with pi_e > 0 and pi_star == 0.
  std::vector<std::pair<std::size_t, std::size_t>> violations;
};

OverlapReport check_weak_overlap(const Policy& pi_e, const Policy& pi_star,
                                 const DiscreteEnvironment& env);

/// Plain-text policy format. A header line `<tag> <A> <d> <param>` followed by
/// one whitespace-separated row per action. Linear rows hold the bias first and
/// then d weights. Mixtures are followed by their base block; marginals by a
/// line of K proportions and K component blocks; tabular rows hold one
/// probability per context (d is the context count).
void write_policy(std::ostream& os, const Policy& policy);
PolicyPtr read_policy(std::istream& is);

}  // namespace stratope
