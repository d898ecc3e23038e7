#include "stratope/environment.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stratope/errors.hpp"

namespace stratope {

// StratifiedDataset ----------------------------------------------------------

StratifiedDataset::StratifiedDataset(std::vector<std::vector<LoggedSample>> strata)
    : strata_(std::move(strata)) {
  for (std::size_t k = 0; k < strata_.size(); ++k) {
    for (const auto& sample : strata_[k]) {
      if (sample.logger != k) {
        throw std::invalid_argument("sample with logger " + std::to_string(sample.logger) +
                                    " placed in stratum " + std::to_string(k));
      }
    }
  }
}

std::size_t StratifiedDataset::total() const noexcept {
  std::size_t n = 0;
  for (const auto& s : strata_) n += s.size();
  return n;
}

std::vector<std::size_t> StratifiedDataset::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(strata_.size());
  for (const auto& s : strata_) out.push_back(s.size());
  return out;
}

std::vector<double> StratifiedDataset::proportions() const {
  const std::size_t n = total();
  if (n == 0) throw std::domain_error("proportions of an empty dataset");
  std::vector<double> rho;
  rho.reserve(strata_.size());
  for (const auto& s : strata_) rho.push_back(static_cast<double>(s.size()) / n);
  return rho;
}

void StratifiedDataset::add(LoggedSample sample) {
  if (sample.logger >= strata_.size()) strata_.resize(sample.logger + 1);
  strata_[sample.logger].push_back(std::move(sample));
}

StratifiedDataset StratifiedDataset::subset(
    const std::vector<std::vector<std::size_t>>& indices) const {
  if (indices.size() != strata_.size()) {
    throw std::invalid_argument("subset: one index list per stratum required");
  }
  std::vector<std::vector<LoggedSample>> out(strata_.size());
  for (std::size_t k = 0; k < strata_.size(); ++k) {
    out[k].reserve(indices[k].size());
    for (std::size_t i : indices[k]) out[k].push_back(strata_[k].at(i));
  }
  StratifiedDataset result;
  result.strata_ = std::move(out);
  return result;
}

std::vector<LoggedSample> StratifiedDataset::pooled() const {
  std::vector<LoggedSample> out;
  out.reserve(total());
  for (const auto& s : strata_) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// DiscreteEnvironment --------------------------------------------------------

DiscreteEnvironment::DiscreteEnvironment(std::vector<Context> contexts,
                                         std::vector<double> context_probs,
                                         std::vector<std::vector<double>> q_table,
                                         RewardModel reward_model, double r_max)
    : contexts_(std::move(contexts)),
      context_probs_(std::move(context_probs)),
      q_table_(std::move(q_table)),
      reward_model_(reward_model),
      r_max_(r_max) {
  if (contexts_.empty()) throw std::invalid_argument("environment needs at least one context");
  if (context_probs_.size() != contexts_.size() || q_table_.size() != contexts_.size()) {
    throw std::invalid_argument("context, probability and q-table sizes disagree");
  }
  if (!(r_max_ > 0.0) || !std::isfinite(r_max_)) throw std::invalid_argument("r_max must be > 0");
  validate_simplex(context_probs_);
  num_actions_ = q_table_.front().size();
  if (num_actions_ == 0) throw std::invalid_argument("environment needs at least one action");
  for (std::size_t s = 0; s < contexts_.size(); ++s) {
    contexts_[s].id = s;
    if (q_table_[s].size() != num_actions_) throw std::invalid_argument("ragged q-table");
    for (double q : q_table_[s]) {
      if (!(q >= 0.0 && q <= r_max_)) throw std::invalid_argument("q outside [0, r_max]");
    }
  }
}

DiscreteEnvironment DiscreteEnvironment::with_one_hot_contexts(
    std::vector<double> context_probs, std::vector<std::vector<double>> q_table,
    RewardModel reward_model, double r_max) {
  std::vector<Context> contexts(context_probs.size());
  for (std::size_t s = 0; s < contexts.size(); ++s) {
    contexts[s].id = s;
    contexts[s].features.assign(contexts.size(), 0.0);
    contexts[s].features[s] = 1.0;
  }
  return DiscreteEnvironment(std::move(contexts), std::move(context_probs), std::move(q_table),
                             reward_model, r_max);
}

double DiscreteEnvironment::reward_variance(std::size_t s, std::size_t a) const {
  if (reward_model_ == RewardModel::kDeterministic) return 0.0;
  const double qv = q(s, a);
  return qv * (r_max_ - qv);
}

std::vector<std::pair<double, double>> DiscreteEnvironment::reward_support(std::size_t s,
                                                                           std::size_t a) const {
  const double qv = q(s, a);
  if (reward_model_ == RewardModel::kDeterministic) return {{qv, 1.0}};
  const double p = qv / r_max_;
  return {{0.0, 1.0 - p}, {r_max_, p}};
}

double DiscreteEnvironment::sample_reward(std::size_t s, std::size_t a, Rng& rng) const {
  const double qv = q(s, a);
  if (reward_model_ == RewardModel::kDeterministic) return qv;
  return rng.bernoulli(qv / r_max_) ? r_max_ : 0.0;
}

std::vector<std::vector<double>> DiscreteEnvironment::policy_table(const Policy& policy) const {
  if (policy.num_actions() != num_actions_) {
    throw InvalidPolicyError("policy has " + std::to_string(policy.num_actions()) +
                             " actions, environment has " + std::to_string(num_actions_));
  }
  std::vector<std::vector<double>> table(contexts_.size(), std::vector<double>(num_actions_));
  for (std::size_t s = 0; s < contexts_.size(); ++s) {
    policy.fill_probabilities(contexts_[s], table[s]);
    for (double p : table[s]) {
      if (!std::isfinite(p) || p < 0.0) {
        throw InvalidPolicyError("action probability undefined at context " + std::to_string(s));
      }
    }
  }
  return table;
}

// Values and samplers --------------------------------------------------------

std::vector<double> state_values(const DiscreteEnvironment& env, const Policy& pi_e) {
  const auto table = env.policy_table(pi_e);
  std::vector<double> v(env.num_contexts(), 0.0);
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) v[s] += table[s][a] * env.q(s, a);
  }
  return v;
}

double policy_value_exact(const DiscreteEnvironment& env, const Policy& pi_e) {
  const auto v = state_values(env, pi_e);
  double j = 0.0;
  for (std::size_t s = 0; s < env.num_contexts(); ++s) j += env.context_prob(s) * v[s];
  return j;
}

namespace {

LoggedSample draw(const DiscreteEnvironment& env, const std::vector<std::vector<double>>& table,
                  std::size_t k, Rng& rng) {
  const std::size_t s = rng.categorical(env.context_probs());
  const std::size_t a = rng.categorical(table[s]);
  return LoggedSample{k, env.context(s), a, env.sample_reward(s, a, rng)};
}

}  // namespace

StratifiedDataset sample_stratified(const DiscreteEnvironment& env,
                                    std::span<const PolicyPtr> loggers,
                                    std::span<const std::size_t> sizes, std::uint64_t seed) {
  if (loggers.size() != sizes.size()) {
    throw std::invalid_argument("sample_stratified: one size per logger required");
  }
  Rng root(seed);
  std::vector<std::vector<LoggedSample>> strata(loggers.size());
  for (std::size_t k = 0; k < loggers.size(); ++k) {
    const auto table = env.policy_table(*loggers[k]);
    Rng rng = root.split(k);
    strata[k].reserve(sizes[k]);
    for (std::size_t i = 0; i < sizes[k]; ++i) strata[k].push_back(draw(env, table, k, rng));
  }
  return StratifiedDataset(std::move(strata));
}

StratifiedDataset sample_iid_mixture(const DiscreteEnvironment& env,
                                     std::span<const PolicyPtr> loggers,
                                     std::span<const double> rho, std::size_t n,
                                     std::uint64_t seed) {
  if (loggers.size() != rho.size()) {
    throw std::invalid_argument("sample_iid_mixture: one proportion per logger required");
  }
  validate_simplex(rho);
  std::vector<std::vector<std::vector<double>>> tables;
  tables.reserve(loggers.size());
  for (const auto& logger : loggers) tables.push_back(env.policy_table(*logger));
  Rng rng(seed);
  std::vector<std::vector<LoggedSample>> strata(loggers.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.categorical(rho);
    strata[k].push_back(draw(env, tables[k], k, rng));
  }
  return StratifiedDataset(std::move(strata));
}

}  // namespace stratope
