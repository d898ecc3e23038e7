#include "stratope/oracle.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "stratope/errors.hpp"
#include "stratope/estimators.hpp"

namespace stratope {

Moments exact_score_moments(const DiscreteEnvironment& env, const Policy& logger, std::size_t k,
                            const ScoreFunction& f) {
  const auto table = env.policy_table(logger);
  double mean = 0.0;
  double second = 0.0;
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) {
      const double pa = env.context_prob(s) * table[s][a];
      if (pa == 0.0) continue;
      for (const auto& [r, pr] : env.reward_support(s, a)) {
        if (pr == 0.0) continue;
        const double v = f(k, s, a, r);
        mean += pa * pr * v;
        second += pa * pr * v * v;
      }
    }
  }
  return {mean, std::max(0.0, second - mean * mean)};
}

Moments exact_moments_stratified(const DiscreteEnvironment& env,
                                 std::span<const PolicyPtr> loggers,
                                 std::span<const std::size_t> sizes, const ScoreFunction& f) {
  if (loggers.size() != sizes.size()) throw std::invalid_argument("one size per logger required");
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  if (n == 0.0) throw std::invalid_argument("exact moments with no samples");
  Moments out;
  for (std::size_t k = 0; k < loggers.size(); ++k) {
    if (sizes[k] == 0) continue;
    const Moments m = exact_score_moments(env, *loggers[k], k, f);
    const double nk = static_cast<double>(sizes[k]);
    out.mean += nk * m.mean / n;
    out.variance += nk * m.variance / (n * n);
  }
  return out;
}

Moments exact_moments_iid(const DiscreteEnvironment& env, std::span<const PolicyPtr> loggers,
                          std::span<const double> rho, std::size_t n, const ScoreFunction& f) {
  if (loggers.size() != rho.size()) throw std::invalid_argument("one proportion per logger required");
  if (n == 0) throw std::invalid_argument("exact moments with no samples");
  validate_simplex(rho);
  double mean = 0.0;
  double second = 0.0;
  for (std::size_t k = 0; k < loggers.size(); ++k) {
    if (rho[k] == 0.0) continue;
    const Moments m = exact_score_moments(env, *loggers[k], k, f);
    mean += rho[k] * m.mean;
    second += rho[k] * (m.variance + m.mean * m.mean);
  }
  return {mean, std::max(0.0, second - mean * mean) / static_cast<double>(n)};
}

ScoreFunction gamma_score(const DiscreteEnvironment& env, const Policy& pi_e, WeightTable h,
                          ValueTable g) {
  auto e = env.policy_table(pi_e);
  std::vector<double> baseline(env.num_contexts(), 0.0);
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) baseline[s] += e[s][a] * g.at(s).at(a);
  }
  return [e = std::move(e), h = std::move(h), g = std::move(g), baseline = std::move(baseline)](
             std::size_t k, std::size_t s, std::size_t a, double r) {
    double v = baseline[s];
    if (e[s][a] > 0.0) v += h.at(k).at(s).at(a) * e[s][a] * (r - g[s][a]);
    return v;
  };
}

WeightTable marginal_inverse_table(const DiscreteEnvironment& env,
                                   std::span<const PolicyPtr> loggers,
                                   std::span<const double> rho) {
  const auto star = env.policy_table(*marginal_policy(loggers, rho));
  WeightTable h(loggers.size(), ValueTable(env.num_contexts(), std::vector<double>(env.num_actions(), 0.0)));
  for (std::size_t k = 0; k < loggers.size(); ++k) {
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      for (std::size_t a = 0; a < env.num_actions(); ++a) {
        if (star[s][a] > 0.0) h[k][s][a] = 1.0 / star[s][a];
      }
    }
  }
  return h;
}

WeightTable simplex_weight_table(const DiscreteEnvironment& env,
                                 std::span<const PolicyPtr> loggers,
                                 std::span<const std::size_t> sizes,
                                 std::span<const double> lambda) {
  if (loggers.size() != sizes.size() || lambda.size() != sizes.size()) {
    throw std::invalid_argument("simplex_weight_table: size mismatch");
  }
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  WeightTable h(loggers.size(), ValueTable(env.num_contexts(), std::vector<double>(env.num_actions(), 0.0)));
  for (std::size_t k = 0; k < loggers.size(); ++k) {
    if (lambda[k] == 0.0 || sizes[k] == 0) continue;
    const auto table = env.policy_table(*loggers[k]);
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      for (std::size_t a = 0; a < env.num_actions(); ++a) {
        if (table[s][a] > 0.0) {
          h[k][s][a] = n * lambda[k] / (static_cast<double>(sizes[k]) * table[s][a]);
        }
      }
    }
  }
  return h;
}

ValueTable zero_table(const DiscreteEnvironment& env) {
  return ValueTable(env.num_contexts(), std::vector<double>(env.num_actions(), 0.0));
}

std::vector<double> exact_is_variances(const DiscreteEnvironment& env, const Policy& pi_e,
                                       std::span<const PolicyPtr> loggers) {
  const auto e = env.policy_table(pi_e);
  std::vector<double> out;
  out.reserve(loggers.size());
  for (std::size_t k = 0; k < loggers.size(); ++k) {
    const auto b = env.policy_table(*loggers[k]);
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      for (std::size_t a = 0; a < env.num_actions(); ++a) {
        if (e[s][a] > 0.0 && b[s][a] == 0.0) {
          throw OverlapError("logger " + std::to_string(k) + " lacks support at context " +
                             std::to_string(s) + ", action " + std::to_string(a));
        }
      }
    }
    const ScoreFunction f = [&](std::size_t, std::size_t s, std::size_t a, double r) {
      return e[s][a] > 0.0 ? e[s][a] / b[s][a] * r : 0.0;
    };
    out.push_back(exact_score_moments(env, *loggers[k], k, f).variance);
  }
  return out;
}

std::vector<double> oracle_lambda_star(const DiscreteEnvironment& env, const Policy& pi_e,
                                       std::span<const PolicyPtr> loggers,
                                       std::span<const std::size_t> sizes) {
  const auto variances = exact_is_variances(env, pi_e, loggers);
  return precision_weights(sizes, variances);
}

std::size_t FiniteInstance::total() const {
  return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
}

std::vector<double> FiniteInstance::rho() const {
  const double n = static_cast<double>(total());
  if (n == 0.0) throw std::domain_error("instance with no samples");
  std::vector<double> out;
  for (std::size_t nk : sizes) out.push_back(static_cast<double>(nk) / n);
  return out;
}

PolicyPtr FiniteInstance::pi_star() const {
  const auto r = rho();
  return marginal_policy(loggers, r);
}

// Random instances -----------------------------------------------------------

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t dim, double min_entry = 0.0) {
  std::vector<double> w(dim);
  double total = 0.0;
  for (double& x : w) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    x = -std::log(u) + min_entry;
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

std::size_t in_range(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

FiniteInstance random_instance(Rng& rng, const RandomInstanceConfig& config) {
  if (config.max_contexts < 1 || config.max_actions < 2 || config.min_loggers < 1 ||
      config.max_loggers < config.min_loggers || config.max_stratum_size < 2) {
    throw std::invalid_argument("invalid random instance configuration");
  }
  const std::size_t S = in_range(rng, 1, config.max_contexts);
  const std::size_t A = in_range(rng, 2, config.max_actions);
  const std::size_t K = in_range(rng, config.min_loggers, config.max_loggers);

  auto probs = random_simplex(rng, S);
  std::vector<std::vector<double>> q(S, std::vector<double>(A));
  for (auto& row : q) {
    for (double& v : row) v = rng.uniform(0.05, 0.95);
  }
  auto env = DiscreteEnvironment::with_one_hot_contexts(std::move(probs), std::move(q));

  std::vector<PolicyPtr> loggers;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::vector<double>> table(S);
    for (auto& row : table) row = random_simplex(rng, A, 0.1);
    loggers.push_back(std::make_shared<const TabularPolicy>(std::move(table)));
  }
  std::vector<std::vector<double>> e(S);
  for (auto& row : e) {
    if (rng.bernoulli(config.point_mass_prob)) {
      row.assign(A, 0.0);
      row[rng.below(A)] = 1.0;
    } else {
      row = random_simplex(rng, A);
    }
  }
  std::vector<std::size_t> sizes(K);
  for (auto& nk : sizes) nk = in_range(rng, 2, config.max_stratum_size);
  return FiniteInstance{std::move(env), std::move(loggers),
                        std::make_shared<const TabularPolicy>(std::move(e)), std::move(sizes)};
}

WeightTable random_constraint_weights(const FiniteInstance& instance, Rng& rng) {
  const auto& env = instance.env;
  const std::size_t K = instance.loggers.size();
  const double n = static_cast<double>(instance.total());
  std::vector<ValueTable> tables;
  for (const auto& logger : instance.loggers) tables.push_back(env.policy_table(*logger));
  WeightTable h(K, zero_table(env));
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) {
      const auto w = random_simplex(rng, K);
      for (std::size_t k = 0; k < K; ++k) {
        if (tables[k][s][a] == 0.0 || instance.sizes[k] == 0) {
          throw std::invalid_argument("random_constraint_weights needs full-support loggers");
        }
        h[k][s][a] = n * w[k] / (static_cast<double>(instance.sizes[k]) * tables[k][s][a]);
      }
    }
  }
  return h;
}

ValueTable random_value_table(const DiscreteEnvironment& env, Rng& rng, double lo, double hi) {
  ValueTable g = zero_table(env);
  for (auto& row : g) {
    for (double& v : row) v = rng.uniform(lo, hi);
  }
  return g;
}

// Dilemma search -------------------------------------------------------------

namespace {

struct DilemmaVariances {
  std::vector<double> lambda;
  double var_is;
  double var_pw;
};

DilemmaVariances dilemma_variances(const FiniteInstance& inst) {
  const auto rho = inst.rho();
  DilemmaVariances out;
  out.lambda = oracle_lambda_star(inst.env, *inst.pi_e, inst.loggers, inst.sizes);
  out.var_is = exact_moments_stratified(
                   inst.env, inst.loggers, inst.sizes,
                   gamma_score(inst.env, *inst.pi_e, marginal_inverse_table(inst.env, inst.loggers, rho),
                               zero_table(inst.env)))
                   .variance;
  out.var_pw = exact_moments_stratified(
                   inst.env, inst.loggers, inst.sizes,
                   gamma_score(inst.env, *inst.pi_e,
                               simplex_weight_table(inst.env, inst.loggers, inst.sizes, out.lambda),
                               zero_table(inst.env)))
                   .variance;
  return out;
}

// Greedy action per context: bit s of `pattern` selects action 1 over action 0.
std::vector<std::size_t> pattern_actions(std::size_t pattern, std::size_t contexts, std::size_t actions) {
  std::vector<std::size_t> out(contexts);
  for (std::size_t s = 0; s < contexts; ++s) out[s] = ((pattern >> s) & 1U) % actions;
  return out;
}

std::string describe(std::size_t contexts, const std::vector<std::vector<double>>& q,
                     const std::vector<std::size_t>& greedy1, const std::vector<std::size_t>& greedy2,
                     double alpha1, double alpha2, const std::vector<std::size_t>& sizes) {
  std::ostringstream os;
  os << "contexts=" << contexts << " q=[";
  for (std::size_t s = 0; s < q.size(); ++s) {
    if (s) os << ';';
    for (std::size_t a = 0; a < q[s].size(); ++a) os << (a ? "," : "") << q[s][a];
  }
  os << "] greedy1=(";
  for (std::size_t s = 0; s < greedy1.size(); ++s) os << (s ? "," : "") << greedy1[s];
  os << ") greedy2=(";
  for (std::size_t s = 0; s < greedy2.size(); ++s) os << (s ? "," : "") << greedy2[s];
  os << ") alpha=(" << alpha1 << ',' << alpha2 << ") sizes=(" << sizes[0] << ',' << sizes[1] << ')';
  return os.str();
}

}  // namespace

std::pair<DilemmaInstance, DilemmaInstance> find_dilemma_instances(const DilemmaSearchConfig& config) {
  const std::size_t A = config.num_actions;
  if (A < 2) throw std::invalid_argument("dilemma search needs at least two actions");
  std::optional<DilemmaInstance> is_better;
  std::optional<DilemmaInstance> pw_better;

  for (std::size_t S : config.context_counts) {
    if (S == 0) continue;
    const std::size_t cells = S * A;
    std::vector<std::size_t> digit(cells, 0);
    const std::size_t G = config.q_grid.size();
    bool done_q = G == 0;
    while (!done_q) {
      std::vector<std::vector<double>> q(S, std::vector<double>(A));
      for (std::size_t c = 0; c < cells; ++c) q[c / A][c % A] = config.q_grid[digit[c]];
      for (std::size_t p1 = 0; p1 < (std::size_t{1} << S); ++p1) {
        for (std::size_t p2 = 0; p2 < (std::size_t{1} << S); ++p2) {
          const auto greedy1 = pattern_actions(p1, S, A);
          const auto greedy2 = pattern_actions(p2, S, A);
          if (greedy1 == greedy2) continue;
          for (double a1 : config.logger_alphas) {
            for (double a2 : config.logger_alphas) {
              for (const auto& sizes : config.size_grid) {
                if (sizes.size() != 2) throw std::invalid_argument("dilemma sizes must have two strata");
                FiniteInstance inst{
                    DiscreteEnvironment::with_one_hot_contexts(std::vector<double>(S, 1.0 / S), q),
                    {std::make_shared<const MixturePolicy>(
                         a1, std::make_shared<const TabularPolicy>(TabularPolicy::point_mass(S, A, greedy1))),
                     std::make_shared<const MixturePolicy>(
                         a2, std::make_shared<const TabularPolicy>(TabularPolicy::point_mass(S, A, greedy2)))},
                    std::make_shared<const TabularPolicy>(
                        TabularPolicy::point_mass(S, A, std::vector<std::size_t>(S, 0))),
                    sizes};
                const auto v = dilemma_variances(inst);
                const double gap = std::abs(v.var_is - v.var_pw);
                if (gap <= config.margin ||
                    gap < config.min_relative_gap * std::max(v.var_is, v.var_pw)) {
                  continue;
                }
                auto& slot = v.var_is < v.var_pw ? is_better : pw_better;
                if (!slot) {
                  slot = DilemmaInstance{inst, v.lambda, v.var_is, v.var_pw,
                                         describe(S, q, greedy1, greedy2, a1, a2, sizes)};
                }
                if (is_better && pw_better) return {*is_better, *pw_better};
              }
            }
          }
        }
      }
      std::size_t c = 0;
      while (c < cells && ++digit[c] == G) digit[c++] = 0;
      done_q = c == cells;
    }
  }
  throw std::runtime_error("no instance pair found where each of IS and IS-PW wins");
}

SimulatedVariances simulate_dilemma(const DilemmaInstance& dilemma, std::size_t replications,
                                    std::uint64_t seed) {
  if (replications < 2) throw std::invalid_argument("simulate_dilemma needs two replications");
  const FiniteInstance& inst = dilemma.instance;
  const auto& env = inst.env;
  const std::size_t K = inst.loggers.size();
  const std::size_t S = env.num_contexts();
  const std::size_t A = env.num_actions();
  const auto rho = inst.rho();
  const double n = static_cast<double>(inst.total());
  const auto h_is = marginal_inverse_table(env, inst.loggers, rho);
  const auto h_pw = simplex_weight_table(env, inst.loggers, inst.sizes, dilemma.lambda_star);
  const auto e = env.policy_table(*inst.pi_e);
  std::vector<ValueTable> tables;
  for (const auto& logger : inst.loggers) tables.push_back(env.policy_table(*logger));

  Rng rng(seed);
  double sum_is = 0.0, sq_is = 0.0, sum_pw = 0.0, sq_pw = 0.0;
  std::vector<double> weights(A);
  for (std::size_t rep = 0; rep < replications; ++rep) {
    double est_is = 0.0;
    double est_pw = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < inst.sizes[k]; ++i) {
        const std::size_t s = S == 1 ? 0 : rng.categorical(env.context_probs());
        const std::size_t a = rng.categorical(tables[k][s]);
        const double r = env.sample_reward(s, a, rng);
        if (e[s][a] > 0.0) {
          est_is += h_is[k][s][a] * e[s][a] * r;
          est_pw += h_pw[k][s][a] * e[s][a] * r;
        }
      }
    }
    est_is /= n;
    est_pw /= n;
    sum_is += est_is;
    sq_is += est_is * est_is;
    sum_pw += est_pw;
    sq_pw += est_pw * est_pw;
  }
  const double m = static_cast<double>(replications);
  auto var = [m](double sum, double sq) { return (sq - sum * sum / m) / (m - 1.0); };
  return {var(sum_is, sq_is), var(sum_pw, sq_pw), replications};
}

}  // namespace stratope
