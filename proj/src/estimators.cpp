#include "stratope/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stratope/errors.hpp"

namespace stratope {

// ControlVariate -------------------------------------------------------------

ControlVariate::ControlVariate(std::size_t num_actions, Evaluator evaluator)
    : num_actions_(num_actions), evaluator_(std::move(evaluator)) {
  if (!evaluator_) throw std::invalid_argument("control variate needs an evaluator");
}

ControlVariate ControlVariate::zero(std::size_t num_actions) { return constant(num_actions, 0.0); }

ControlVariate ControlVariate::constant(std::size_t num_actions, double value) {
  return ControlVariate(num_actions, [value](const Context&, std::span<double> out) {
    std::fill(out.begin(), out.end(), value);
  });
}

ControlVariate ControlVariate::from_table(std::vector<std::vector<double>> table) {
  if (table.empty()) throw std::invalid_argument("empty control variate table");
  const std::size_t actions = table.front().size();
  return ControlVariate(actions, [t = std::move(table)](const Context& s, std::span<double> out) {
    const auto& row = t.at(s.id);
    std::copy(row.begin(), row.end(), out.begin());
  });
}

double ControlVariate::operator()(const Context& s, std::size_t a) const {
  std::vector<double> buf(num_actions_);
  evaluator_(s, buf);
  return buf.at(a);
}

double ControlVariate::expected(const Context& s, const Policy& pi) const {
  std::vector<double> g(num_actions_);
  evaluator_(s, g);
  const auto p = pi.probabilities(s);
  double total = 0.0;
  for (std::size_t a = 0; a < num_actions_; ++a) {
    if (p[a] > 0.0) total += p[a] * g[a];
  }
  return total;
}

SimplexWeights::SimplexWeights(std::vector<double> lambda) : lambda_(std::move(lambda)) {
  validate_simplex(lambda_);
}

// Helpers --------------------------------------------------------------------

double sample_variance(std::span<const double> values, bool bessel) {
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("variance of an empty sample");
  if (bessel && n < 2) throw std::invalid_argument("Bessel-corrected variance needs 2 values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(bessel ? n - 1 : n);
}

std::vector<double> precision_weights(std::span<const std::size_t> sizes,
                                      std::span<const double> variances, double floor) {
  if (sizes.size() != variances.size()) {
    throw std::invalid_argument("precision_weights: size mismatch");
  }
  std::vector<double> lambda(sizes.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) continue;
    lambda[k] = static_cast<double>(sizes[k]) / std::max(variances[k], floor);
    total += lambda[k];
  }
  if (!(total > 0.0)) throw std::invalid_argument("precision_weights: no nonempty stratum");
  for (double& l : lambda) l /= total;
  return lambda;
}

double importance_ratio(const Policy& pi_e, const Policy& pi, const Context& s, std::size_t a) {
  const double pe = pi_e.action_probability(s, a);
  if (pe == 0.0) return 0.0;
  const double pb = pi.action_probability(s, a);
  if (!(pb > 0.0)) {
    throw OverlapError("logging propensity is zero where the evaluation policy acts (context " +
                       std::to_string(s.id) + ", action " + std::to_string(a) + ")");
  }
  return pe / pb;
}

double phi(const LoggedSample& sample, const ControlVariate& g, const Policy& pi_e,
           const Policy& pi_star) {
  const double ratio = importance_ratio(pi_e, pi_star, sample.context, sample.action);
  const double baseline = g.expected(sample.context, pi_e);
  if (ratio == 0.0) return baseline;
  return ratio * (sample.reward - g(sample.context, sample.action)) + baseline;
}

// IS family ------------------------------------------------------------------

double is_estimate(const StratifiedDataset& data, const Policy& pi_e, const Policy& pi_star) {
  if (data.empty()) throw std::invalid_argument("is_estimate on an empty dataset");
  const WeightFunction h = [&pi_star](std::size_t, const Context& s, std::size_t a) {
    const double p = pi_star.action_probability(s, a);
    if (!(p > 0.0)) {
      throw OverlapError("marginal propensity is zero where the evaluation policy acts (context " +
                         std::to_string(s.id) + ", action " + std::to_string(a) + ")");
    }
    return 1.0 / p;
  };
  return gamma_estimate(data, h, ControlVariate::zero(pi_e.num_actions()), pi_e);
}

namespace {

std::vector<double> stratum_is_scores(std::span<const LoggedSample> stratum, const Policy& pi_e,
                                      const Policy& logger) {
  std::vector<double> scores;
  scores.reserve(stratum.size());
  for (const auto& x : stratum) {
    scores.push_back(importance_ratio(pi_e, logger, x.context, x.action) * x.reward);
  }
  return scores;
}

void check_loggers(const StratifiedDataset& data, std::span<const PolicyPtr> loggers) {
  if (loggers.size() != data.num_strata()) {
    throw std::invalid_argument("one logger per stratum required");
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double weighted_is(const StratifiedDataset& data, const SimplexWeights& lambda,
                   const Policy& pi_e, std::span<const PolicyPtr> loggers) {
  check_loggers(data, loggers);
  if (lambda.size() != data.num_strata()) {
    throw std::invalid_argument("one simplex weight per stratum required");
  }
  double estimate = 0.0;
  for (std::size_t k = 0; k < data.num_strata(); ++k) {
    if (lambda[k] == 0.0) continue;
    if (data.size(k) == 0) {
      throw std::invalid_argument("stratum " + std::to_string(k) + " is empty but has weight");
    }
    estimate += lambda[k] * mean_of(stratum_is_scores(data.stratum(k), pi_e, *loggers[k]));
  }
  return estimate;
}

double is_avg(const StratifiedDataset& data, const Policy& pi_e,
              std::span<const PolicyPtr> loggers) {
  return weighted_is(data, SimplexWeights(data.proportions()), pi_e, loggers);
}

std::vector<double> per_stratum_is_variances(const StratifiedDataset& data, const Policy& pi_e,
                                             std::span<const PolicyPtr> loggers, bool bessel) {
  check_loggers(data, loggers);
  std::vector<double> variances(data.num_strata(), 0.0);
  for (std::size_t k = 0; k < data.num_strata(); ++k) {
    if (data.size(k) == 0) continue;
    variances[k] = sample_variance(stratum_is_scores(data.stratum(k), pi_e, *loggers[k]), bessel);
  }
  return variances;
}

double is_pw_feasible(const StratifiedDataset& data, const Policy& pi_e,
                      std::span<const PolicyPtr> loggers, const VarianceOptions& options) {
  const auto variances = per_stratum_is_variances(data, pi_e, loggers, options.bessel);
  const auto sizes = data.sizes();
  return weighted_is(data, SimplexWeights(precision_weights(sizes, variances, options.floor)),
                     pi_e, loggers);
}

// Gamma class ----------------------------------------------------------------

double gamma_estimate(const StratifiedDataset& data, const WeightFunction& h,
                      const ControlVariate& g, const Policy& pi_e) {
  const std::size_t n = data.total();
  if (n == 0) throw std::invalid_argument("gamma_estimate on an empty dataset");
  std::vector<double> pe(pi_e.num_actions());
  std::vector<double> gv(g.num_actions());
  double total = 0.0;
  data.for_each([&](const LoggedSample& x) {
    pi_e.fill_probabilities(x.context, pe);
    g.values(x.context, gv);
    double baseline = 0.0;
    for (std::size_t a = 0; a < pe.size(); ++a) {
      if (pe[a] > 0.0) baseline += pe[a] * gv[a];
    }
    double term = 0.0;
    if (pe[x.action] > 0.0) {
      const double w = h(x.logger, x.context, x.action);
      term = w * pe[x.action] * (x.reward - gv[x.action]);
    }
    if (!std::isfinite(term) || !std::isfinite(baseline)) {
      throw std::domain_error("nonfinite weight or control variate at context " +
                              std::to_string(x.context.id));
    }
    total += term + baseline;
  });
  return total / static_cast<double>(n);
}

bool check_constraint(const WeightFunction& h, std::span<const PolicyPtr> loggers,
                      std::span<const std::size_t> sizes, const DiscreteEnvironment& env,
                      const Policy& pi_e, double tol) {
  if (loggers.size() != sizes.size()) throw std::invalid_argument("one size per logger required");
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  const auto e = env.policy_table(pi_e);
  std::vector<std::vector<std::vector<double>>> tables;
  for (const auto& logger : loggers) tables.push_back(env.policy_table(*logger));
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) {
      if (!(e[s][a] > 0.0)) continue;
      double lhs = 0.0;
      for (std::size_t k = 0; k < loggers.size(); ++k) {
        const double p = tables[k][s][a];
        if (sizes[k] == 0 || p == 0.0) continue;
        lhs += static_cast<double>(sizes[k]) * p * h(k, env.context(s), a);
      }
      if (!(std::abs(lhs - n) <= tol * std::max(1.0, n))) return false;
    }
  }
  return true;
}

namespace {

double invert(double p, double floor, const std::optional<double>& max_weight,
              const Context& s, std::size_t a) {
  const double clipped = std::max(p, floor);
  if (!(clipped > 0.0)) {
    throw OverlapError("zero propensity at context " + std::to_string(s.id) + ", action " +
                       std::to_string(a));
  }
  double w = 1.0 / clipped;
  if (max_weight) w = std::min(w, *max_weight);
  return w;
}

}  // namespace

WeightFunction inverse_propensity_weights(PolicyPtr pi, double floor,
                                          std::optional<double> max_weight) {
  return [pi = std::move(pi), floor, max_weight](std::size_t, const Context& s, std::size_t a) {
    return invert(pi->action_probability(s, a), floor, max_weight, s, a);
  };
}

WeightFunction per_logger_weights(std::vector<PolicyPtr> loggers, double floor,
                                  std::optional<double> max_weight) {
  return [loggers = std::move(loggers), floor, max_weight](std::size_t k, const Context& s,
                                                            std::size_t a) {
    return invert(loggers.at(k)->action_probability(s, a), floor, max_weight, s, a);
  };
}

WeightFunction simplex_logger_weights(std::vector<double> lambda, std::vector<std::size_t> sizes,
                                      std::vector<PolicyPtr> loggers, double floor,
                                      std::optional<double> max_weight) {
  if (lambda.size() != sizes.size() || loggers.size() != sizes.size()) {
    throw std::invalid_argument("simplex_logger_weights: size mismatch");
  }
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  return [lambda = std::move(lambda), sizes = std::move(sizes), loggers = std::move(loggers), n,
          floor, max_weight](std::size_t k, const Context& s, std::size_t a) {
    if (lambda.at(k) == 0.0) return 0.0;
    const double scale = n * lambda[k] / static_cast<double>(sizes[k]);
    return scale * invert(loggers[k]->action_probability(s, a), floor, max_weight, s, a);
  };
}

// Cross-fitting --------------------------------------------------------------

FoldPlan::FoldPlan(std::size_t folds, std::vector<std::vector<std::size_t>> fold_of)
    : folds_(folds), fold_of_(std::move(fold_of)) {
  for (const auto& stratum : fold_of_) {
    for (std::size_t z : stratum) {
      if (z >= folds_) throw std::invalid_argument("fold index out of range");
    }
  }
}

std::size_t FoldPlan::fold_size(std::size_t k, std::size_t z) const {
  return static_cast<std::size_t>(std::count(fold_of_.at(k).begin(), fold_of_.at(k).end(), z));
}

StratifiedDataset FoldPlan::eval_part(const StratifiedDataset& data, std::size_t z) const {
  std::vector<std::vector<std::size_t>> idx(fold_of_.size());
  for (std::size_t k = 0; k < fold_of_.size(); ++k) {
    for (std::size_t i = 0; i < fold_of_[k].size(); ++i) {
      if (fold_of_[k][i] == z) idx[k].push_back(i);
    }
  }
  return data.subset(idx);
}

StratifiedDataset FoldPlan::train_part(const StratifiedDataset& data, std::size_t z) const {
  std::vector<std::vector<std::size_t>> idx(fold_of_.size());
  for (std::size_t k = 0; k < fold_of_.size(); ++k) {
    for (std::size_t i = 0; i < fold_of_[k].size(); ++i) {
      if (fold_of_[k][i] != z) idx[k].push_back(i);
    }
  }
  return data.subset(idx);
}

FoldPlan make_fold_plan(const StratifiedDataset& data, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cross-fitting needs at least 2 folds");
  std::size_t effective = folds;
  for (std::size_t k = 0; k < data.num_strata(); ++k) {
    if (data.size(k) > 0) effective = std::min(effective, data.size(k));
  }
  if (effective < 2) throw std::invalid_argument("a stratum has a single sample; cannot cross-fit");
  if (effective < folds) {
    std::clog << "warning: a stratum has fewer samples than folds; using " << effective
              << " folds instead of " << folds << '\n';
  }
  Rng root(seed);
  std::vector<std::vector<std::size_t>> fold_of(data.num_strata());
  for (std::size_t k = 0; k < data.num_strata(); ++k) {
    const std::size_t nk = data.size(k);
    Rng rng = root.split(k);
    const auto perm = rng.permutation(nk);
    fold_of[k].assign(nk, 0);
    const std::size_t base = nk / effective;
    const std::size_t extra = nk % effective;
    std::size_t pos = 0;
    for (std::size_t z = 0; z < effective; ++z) {
      const std::size_t len = base + (z < extra ? 1 : 0);
      for (std::size_t j = 0; j < len; ++j) fold_of[k][perm[pos++]] = z;
    }
  }
  return FoldPlan(effective, std::move(fold_of));
}

double cross_fit_estimate(const StratifiedDataset& data, const FoldPlan& plan,
                          const NuisanceFitter& fitter, const Policy& pi_e) {
  const std::size_t n = data.total();
  if (n == 0) throw std::invalid_argument("cross_fit_estimate on an empty dataset");
  double weighted = 0.0;
  for (std::size_t z = 0; z < plan.folds(); ++z) {
    const StratifiedDataset eval = plan.eval_part(data, z);
    if (eval.empty()) continue;
    const StratifiedDataset train = plan.train_part(data, z);
    const Nuisances nuisances = fitter(z, train);
    weighted += static_cast<double>(eval.total()) * gamma_estimate(eval, nuisances.h, nuisances.g, pi_e);
  }
  return weighted / static_cast<double>(n);
}

double cross_fit_estimate(const StratifiedDataset& data, std::size_t folds,
                          const NuisanceFitter& fitter, const Policy& pi_e, std::uint64_t seed) {
  return cross_fit_estimate(data, make_fold_plan(data, folds, seed), fitter, pi_e);
}

double dr_estimate(const StratifiedDataset& data, const Policy& pi_e, PolicyPtr pi_star,
                   const QFitter& q_fitter, const CrossFitOptions& options) {
  const WeightFunction h = inverse_propensity_weights(std::move(pi_star), 0.0, options.max_weight);
  return cross_fit_estimate(
      data, options.folds,
      [&](std::size_t, const StratifiedDataset& train) { return Nuisances{h, q_fitter(train)}; },
      pi_e, options.seed);
}

double dr_avg(const StratifiedDataset& data, const Policy& pi_e,
              std::span<const PolicyPtr> loggers, const QFitter& q_fitter,
              const CrossFitOptions& options) {
  check_loggers(data, loggers);
  const WeightFunction h = per_logger_weights({loggers.begin(), loggers.end()}, 0.0,
                                              options.max_weight);
  return cross_fit_estimate(
      data, options.folds,
      [&](std::size_t, const StratifiedDataset& train) { return Nuisances{h, q_fitter(train)}; },
      pi_e, options.seed);
}

std::vector<double> per_stratum_dr_variances(const StratifiedDataset& data, const Policy& pi_e,
                                             std::span<const PolicyPtr> loggers,
                                             const ControlVariate& g, bool bessel,
                                             double propensity_floor) {
  check_loggers(data, loggers);
  std::vector<double> variances(data.num_strata(), 0.0);
  std::vector<double> pe(pi_e.num_actions());
  std::vector<double> gv(g.num_actions());
  for (std::size_t k = 0; k < data.num_strata(); ++k) {
    if (data.size(k) == 0) continue;
    std::vector<double> scores;
    scores.reserve(data.size(k));
    for (const auto& x : data.stratum(k)) {
      pi_e.fill_probabilities(x.context, pe);
      g.values(x.context, gv);
      double score = 0.0;
      for (std::size_t a = 0; a < pe.size(); ++a) score += pe[a] * gv[a];
      if (pe[x.action] > 0.0) {
        const double pk =
            std::max(loggers[k]->action_probability(x.context, x.action), propensity_floor);
        if (!(pk > 0.0)) throw OverlapError("zero logger propensity in DR score");
        score += pe[x.action] / pk * (x.reward - gv[x.action]);
      }
      scores.push_back(score);
    }
    variances[k] = sample_variance(scores, bessel);
  }
  return variances;
}

double dr_pw(const StratifiedDataset& data, const Policy& pi_e, std::span<const PolicyPtr> loggers,
             const QFitter& q_fitter, const CrossFitOptions& options) {
  check_loggers(data, loggers);
  const std::vector<PolicyPtr> logger_vec(loggers.begin(), loggers.end());
  const auto sizes = data.sizes();
  return cross_fit_estimate(
      data, options.folds,
      [&](std::size_t, const StratifiedDataset& train) {
        ControlVariate g = q_fitter(train);
        const auto variances =
            per_stratum_dr_variances(train, pi_e, logger_vec, g, options.variance.bessel);
        auto lambda = precision_weights(train.sizes(), variances, options.variance.floor);
        return Nuisances{simplex_logger_weights(std::move(lambda), sizes, logger_vec, 0.0,
                                                options.max_weight),
                         std::move(g)};
      },
      pi_e, options.seed);
}

double dr_estimated_propensity(const StratifiedDataset& data, const Policy& pi_e,
                               const BehaviorFitter& behavior_fitter, const QFitter& q_fitter,
                               const CrossFitOptions& options) {
  return cross_fit_estimate(
      data, options.folds,
      [&](std::size_t, const StratifiedDataset& train) {
        return Nuisances{inverse_propensity_weights(behavior_fitter(train),
                                                    options.propensity_floor, options.max_weight),
                         q_fitter(train)};
      },
      pi_e, options.seed);
}

}  // namespace stratope
