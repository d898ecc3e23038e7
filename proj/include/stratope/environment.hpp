#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stratope/policy.hpp"
#include "stratope/types.hpp"

namespace stratope {

enum class RewardModel {
  kScaledBernoulli,  // r = r_max * Bernoulli(q / r_max)
  kDeterministic,    // r = q
};

/// Finite ground-truth data generating process: p_S over a list of contexts,
/// a mean-reward table q(s, a) and a reward model.
class DiscreteEnvironment {
 public:
  /// Context ids are reassigned to their positions. Throws
  /// std::invalid_argument when probabilities are off the simplex, q is out of
  /// [0, r_max] or shapes disagree.
  DiscreteEnvironment(std::vector<Context> contexts, std::vector<double> context_probs,
                      std::vector<std::vector<double>> q_table,
                      RewardModel reward_model = RewardModel::kScaledBernoulli,
                      double r_max = 1.0);

  /// Contexts with one-hot feature vectors.
  static DiscreteEnvironment with_one_hot_contexts(
      std::vector<double> context_probs, std::vector<std::vector<double>> q_table,
      RewardModel reward_model = RewardModel::kScaledBernoulli, double r_max = 1.0);

  std::size_t num_contexts() const noexcept { return contexts_.size(); }
  std::size_t num_actions() const noexcept { return num_actions_; }
  const Context& context(std::size_t s) const { return contexts_.at(s); }
  const std::vector<Context>& contexts() const noexcept { return contexts_; }
  double context_prob(std::size_t s) const { return context_probs_.at(s); }
  const std::vector<double>& context_probs() const noexcept { return context_probs_; }
  double q(std::size_t s, std::size_t a) const { return q_table_.at(s).at(a); }
  const std::vector<std::vector<double>>& q_table() const noexcept { return q_table_; }
  RewardModel reward_model() const noexcept { return reward_model_; }
  double r_max() const noexcept { return r_max_; }

  /// sigma_r^2(s, a): q (r_max - q) under scaled Bernoulli, 0 otherwise.
  double reward_variance(std::size_t s, std::size_t a) const;

  /// Support of r given (s, a) as (value, probability) pairs.
  std::vector<std::pair<double, double>> reward_support(std::size_t s, std::size_t a) const;

  double sample_reward(std::size_t s, std::size_t a, Rng& rng) const;

  /// pi(a|s) table for every context; throws InvalidPolicyError when the
  /// policy has a different action count or rejects a context.
  std::vector<std::vector<double>> policy_table(const Policy& policy) const;

 private:
  std::vector<Context> contexts_;
  std::vector<double> context_probs_;
  std::vector<std::vector<double>> q_table_;
  RewardModel reward_model_;
  double r_max_;
  std::size_t num_actions_;
};

/// J = sum_s p_S(s) sum_a pi_e(a|s) q(s, a).
double policy_value_exact(const DiscreteEnvironment& env, const Policy& pi_e);

/// v(s) = sum_a pi_e(a|s) q(s, a) for every context.
std::vector<double> state_values(const DiscreteEnvironment& env, const Policy& pi_e);

/// Stratum k holds exactly sizes[k] iid draws from p_S x pi_k x p_{R|S,A}.
StratifiedDataset sample_stratified(const DiscreteEnvironment& env,
                                    std::span<const PolicyPtr> loggers,
                                    std::span<const std::size_t> sizes, std::uint64_t seed);

/// n iid draws with logger ids ~ Categorical(rho); stratum sizes are random.
StratifiedDataset sample_iid_mixture(const DiscreteEnvironment& env,
                                     std::span<const PolicyPtr> loggers,
                                     std::span<const double> rho, std::size_t n,
                                     std::uint64_t seed);

}  // namespace stratope
