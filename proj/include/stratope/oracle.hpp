#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stratope/environment.hpp"
#include "stratope/policy.hpp"
#include "stratope/rng.hpp"

namespace stratope {

/// f(k, s, a, r) with s a context index of the environment.
using ScoreFunction = std::function<double(std::size_t, std::size_t, std::size_t, double)>;

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// E_{pi}[f(k, .)] and var_{pi}[f(k, .)] by exact summation over (s, a, r).
Moments exact_score_moments(const DiscreteEnvironment& env, const Policy& logger, std::size_t k,
                            const ScoreFunction& f);

/// Mean and variance of E_n[f] when stratum k holds exactly sizes[k] draws.
Moments exact_moments_stratified(const DiscreteEnvironment& env,
                                 std::span<const PolicyPtr> loggers,
                                 std::span<const std::size_t> sizes, const ScoreFunction& f);

/// Mean and variance of E_n[f] when each of n draws picks its logger ~ rho.
Moments exact_moments_iid(const DiscreteEnvironment& env, std::span<const PolicyPtr> loggers,
                          std::span<const double> rho, std::size_t n, const ScoreFunction& f);

/// Tabular weights h[k][s][a] for exact analysis.
using WeightTable = std::vector<std::vector<std::vector<double>>>;
/// Tabular control variate g[s][a].
using ValueTable = std::vector<std::vector<double>>;

/// Score of Gamma(D; h, g): h pi_e (r - g) + g(s, pi_e), ratio term dropped
/// where pi_e(a|s) == 0.
ScoreFunction gamma_score(const DiscreteEnvironment& env, const Policy& pi_e, WeightTable h,
                          ValueTable g);

WeightTable marginal_inverse_table(const DiscreteEnvironment& env,
                                   std::span<const PolicyPtr> loggers,
                                   std::span<const double> rho);
/// h(k,s,a) = n lambda_k / (n_k pi_k(a|s)).
WeightTable simplex_weight_table(const DiscreteEnvironment& env,
                                 std::span<const PolicyPtr> loggers,
                                 std::span<const std::size_t> sizes,
                                 std::span<const double> lambda);
ValueTable zero_table(const DiscreteEnvironment& env);

/// Exact per-stratum variances var_{pi_k}[pi_e r / pi_k].
std::vector<double> exact_is_variances(const DiscreteEnvironment& env, const Policy& pi_e,
                                       std::span<const PolicyPtr> loggers);

/// Exact lambda* (precision weights from exact per-stratum IS variances).
std::vector<double> oracle_lambda_star(const DiscreteEnvironment& env, const Policy& pi_e,
                                       std::span<const PolicyPtr> loggers,
                                       std::span<const std::size_t> sizes);

/// A finite problem: environment, K loggers, evaluation policy, stratum sizes.
struct FiniteInstance {
  DiscreteEnvironment env;
  std::vector<PolicyPtr> loggers;
  PolicyPtr pi_e;
  std::vector<std::size_t> sizes;

  std::size_t total() const;
  std::vector<double> rho() const;
  PolicyPtr pi_star() const;
};

struct RandomInstanceConfig {
  std::size_t max_contexts = 3;
  std::size_t max_actions = 3;
  std::size_t min_loggers = 2;
  std::size_t max_loggers = 3;
  std::size_t max_stratum_size = 20;
  /// Probability that pi_e is a point mass in a context (zeros exercise the
  /// pi_e(a|s) = 0 convention).
  double point_mass_prob = 0.3;
};

/// Random tabular instance with Bernoulli rewards and full-support loggers.
FiniteInstance random_instance(Rng& rng, const RandomInstanceConfig& config = {});

/// h(k,s,a) = n w_k(s,a) / (n_k pi_k(a|s)) with w(s,a) a random point of the
/// simplex over strata; satisfies the unbiasedness constraint by construction.
WeightTable random_constraint_weights(const FiniteInstance& instance, Rng& rng);

/// g(s,a) uniform on [lo, hi].
ValueTable random_value_table(const DiscreteEnvironment& env, Rng& rng, double lo = -1.0,
                              double hi = 2.0);

struct DilemmaInstance {
  FiniteInstance instance;
  std::vector<double> lambda_star;
  double var_is = 0.0;     // exact variance of IS
  double var_is_pw = 0.0;  // exact variance of IS-PW(lambda*)
  std::string description;
};

struct DilemmaSearchConfig {
  std::vector<std::size_t> context_counts{1, 2};
  std::size_t num_actions = 2;
  std::vector<double> q_grid{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> logger_alphas{0.1, 0.5, 0.9};
  std::vector<std::vector<std::size_t>> size_grid{{10, 10}, {4, 16}, {16, 4}};
  /// Instances whose variances differ by less than this are not counted.
  double margin = 1e-9;
  /// Additional requirement |var_IS - var_PW| >= gap * max(var_IS, var_PW).
  double min_relative_gap = 0.05;
};

/// First instance (grid order) with var[IS] < var[IS-PW(lambda*)] and first with
/// the reverse. Throws std::runtime_error when either direction is missing.
std::pair<DilemmaInstance, DilemmaInstance> find_dilemma_instances(
    const DilemmaSearchConfig& config = {});

struct SimulatedVariances {
  double var_is = 0.0;
  double var_is_pw = 0.0;
  std::size_t replications = 0;
};

/// Sample variances of IS and IS-PW(lambda*) over repeated stratified draws.
SimulatedVariances simulate_dilemma(const DilemmaInstance& instance, std::size_t replications,
                                    std::uint64_t seed);

}  // namespace stratope
