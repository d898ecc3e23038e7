#include "stratope/variance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

#include "stratope/errors.hpp"
#include "stratope/rng.hpp"

namespace stratope {

double empirical_variance_stratified(const StratifiedDataset& data, const SampleScore& score,
                                     bool bessel) {
  const auto rho = data.proportions();
  double total = 0.0;
  for (std::size_t k = 0; k < data.num_strata(); ++k) {
    if (data.size(k) == 0) throw std::invalid_argument("stratified variance with an empty stratum");
    std::vector<double> values;
    values.reserve(data.size(k));
    for (const auto& x : data.stratum(k)) values.push_back(score(x));
    total += rho[k] * sample_variance(values, bessel);
  }
  return total;
}

double empirical_variance_iid(const StratifiedDataset& data, const SampleScore& score,
                              bool bessel) {
  std::vector<double> values;
  values.reserve(data.total());
  data.for_each([&](const LoggedSample& x) { values.push_back(score(x)); });
  return sample_variance(values, bessel);
}

double efficiency_bound(const DiscreteEnvironment& env, const Policy& pi_e,
                        std::span<const PolicyPtr> loggers, std::span<const double> rho) {
  return efficiency_bound(env, pi_e, *marginal_policy(loggers, rho));
}

double efficiency_bound(const DiscreteEnvironment& env, const Policy& pi_e, const Policy& pi_star) {
  const auto e = env.policy_table(pi_e);
  const auto b = env.policy_table(pi_star);
  double noise = 0.0;
  double mean = 0.0;
  double second = 0.0;
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    const double p = env.context_prob(s);
    double v = 0.0;
    for (std::size_t a = 0; a < env.num_actions(); ++a) {
      if (e[s][a] == 0.0) continue;
      if (!(b[s][a] > 0.0)) {
        throw OverlapError("efficiency bound undefined: pi_* has no mass at context " +
                           std::to_string(s) + ", action " + std::to_string(a));
      }
      noise += p * e[s][a] * e[s][a] / b[s][a] * env.reward_variance(s, a);
      v += e[s][a] * env.q(s, a);
    }
    mean += p * v;
    second += p * v * v;
  }
  return noise + std::max(0.0, second - mean * mean);
}

// VarianceObjective ----------------------------------------------------------

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

VarianceObjective::VarianceObjective(const StratifiedDataset& data, const QClass& qclass,
                                     const Policy& pi_e, const Policy& pi_star,
                                     VarianceObjectiveKind kind)
    : qclass_(qclass), kind_(kind) {
  if (data.empty()) throw std::invalid_argument("variance objective on an empty dataset");
  if (qclass_.num_actions != pi_e.num_actions()) {
    throw std::invalid_argument("control variate class and policy disagree on the action count");
  }
  const bool stratified = kind_ == VarianceObjectiveKind::kStratified;
  const std::size_t strata = stratified ? data.num_strata() : 1;
  stratum_count_.assign(strata, 0.0);
  stratum_weight_.assign(strata, 1.0);
  if (stratified) {
    stratum_weight_ = data.proportions();
    for (std::size_t k = 0; k < strata; ++k) {
      if (data.size(k) == 0) throw std::invalid_argument("stratified objective with an empty stratum");
    }
  }

  struct Group {
    const Context* context;
    double ratio;
    double reward;
    double count;
  };
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, double>, std::size_t> index;
  std::vector<Group> groups;
  data.for_each([&](const LoggedSample& x) {
    if (x.context.features.size() != qclass_.dim) {
      throw std::invalid_argument("context feature length differs from the class dimension");
    }
    const std::size_t k = stratified ? x.logger : 0;
    stratum_count_[k] += 1.0;
    const auto [it, inserted] = index.try_emplace(std::make_tuple(k, x.context.id, x.action, x.reward), groups.size());
    if (!inserted) {
      groups[it->second].count += 1.0;
      return;
    }
    groups.push_back({&x.context, importance_ratio(pi_e, pi_star, x.context, x.action), x.reward, 1.0});
    action_.push_back(x.action);
    stratum_.push_back(k);
  });

  const auto m = static_cast<Eigen::Index>(groups.size());
  const auto A = static_cast<Eigen::Index>(qclass_.num_actions);
  x_.resize(m, static_cast<Eigen::Index>(qclass_.dim + 1));
  pi_e_.resize(m, A);
  ratio_.resize(m);
  reward_.resize(m);
  count_.resize(m);
  std::vector<double> pe(qclass_.num_actions);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Group& g = groups[static_cast<std::size_t>(i)];
    x_(i, 0) = 1.0;
    for (std::size_t j = 0; j < qclass_.dim; ++j) x_(i, static_cast<Eigen::Index>(j + 1)) = g.context->features[j];
    pi_e.fill_probabilities(*g.context, pe);
    for (Eigen::Index a = 0; a < A; ++a) pi_e_(i, a) = pe[static_cast<std::size_t>(a)];
    ratio_(i) = g.ratio;
    reward_(i) = g.reward;
    count_(i) = g.count;
  }
}

double VarianceObjective::evaluate(const Eigen::MatrixXd& theta, Eigen::MatrixXd* gradient) const {
  const std::size_t strata = stratum_count_.size();
  const Eigen::Index m = x_.rows();
  const Eigen::MatrixXd sig = (x_ * theta.transpose()).unaryExpr([](double z) { return sigmoid(z); });
  Eigen::VectorXd phi = qclass_.r_max * (pi_e_.cwiseProduct(sig)).rowwise().sum();
  std::vector<double> sum(strata, 0.0);
  std::vector<double> sum_sq(strata, 0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (ratio_(i) != 0.0) {
      phi(i) += ratio_(i) * (reward_(i) - qclass_.r_max * sig(i, static_cast<Eigen::Index>(action_[static_cast<std::size_t>(i)])));
    }
    const std::size_t k = stratum_[static_cast<std::size_t>(i)];
    sum[k] += count_(i) * phi(i);
    sum_sq[k] += count_(i) * phi(i) * phi(i);
  }

  std::vector<double> mean(strata, 0.0);
  double value = 0.0;
  for (std::size_t k = 0; k < strata; ++k) {
    if (stratum_count_[k] == 0.0) continue;
    mean[k] = sum[k] / stratum_count_[k];
    value += stratum_weight_[k] * std::max(0.0, sum_sq[k] / stratum_count_[k] - mean[k] * mean[k]);
  }

  if (gradient) {
    // d phi_i / d z_ib = (pi_e(b|s_i) - ratio_i 1{b = a_i}) r_max sig (1 - sig).
    Eigen::MatrixXd d = pi_e_;
    for (Eigen::Index i = 0; i < m; ++i) {
      const std::size_t k = stratum_[static_cast<std::size_t>(i)];
      d(i, static_cast<Eigen::Index>(action_[static_cast<std::size_t>(i)])) -= ratio_(i);
      const double coef = 2.0 * stratum_weight_[k] * count_(i) * (phi(i) - mean[k]) / stratum_count_[k];
      d.row(i) *= coef * qclass_.r_max;
    }
    d.array() *= sig.array() * (1.0 - sig.array());
    *gradient = d.transpose() * x_;
  }
  return value;
}

double VarianceObjective::value(const Eigen::MatrixXd& theta) const {
  return evaluate(theta, nullptr);
}

Eigen::MatrixXd VarianceObjective::gradient(const Eigen::MatrixXd& theta) const {
  Eigen::MatrixXd grad;
  evaluate(theta, &grad);
  return grad;
}

// Fitting --------------------------------------------------------------------

namespace {

double penalised(const VarianceObjective& objective, const Eigen::MatrixXd& theta, double l2,
                 Eigen::MatrixXd* grad) {
  double value = objective.evaluate(theta, grad);
  if (l2 > 0.0) {
    const auto cols = theta.cols() - 1;
    value += 0.5 * l2 * theta.rightCols(cols).squaredNorm();
    if (grad) grad->rightCols(cols) += l2 * theta.rightCols(cols);
  }
  return value;
}

// Gradient descent with Armijo backtracking; the objective never increases.
std::pair<Eigen::MatrixXd, std::vector<double>> descend(const VarianceObjective& objective,
                                                        Eigen::MatrixXd theta,
                                                        const FitConfig& fit) {
  Eigen::MatrixXd grad;
  double value = penalised(objective, theta, fit.l2_penalty, &grad);
  std::vector<double> trace{value};
  double step = fit.learning_rate;
  for (std::size_t it = 0; it < fit.iterations; ++it) {
    const double gnorm2 = grad.squaredNorm();
    if (!(gnorm2 > 1e-24)) break;
    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd candidate = theta - step * grad;
      const double cand_value = penalised(objective, candidate, fit.l2_penalty, nullptr);
      if (cand_value <= value - 1e-4 * step * gnorm2) {
        theta = std::move(candidate);
        value = penalised(objective, theta, fit.l2_penalty, &grad);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    trace.push_back(value);
    if (!accepted) break;
    step = std::min(step * 2.0, fit.learning_rate * 64.0);
  }
  return {std::move(theta), std::move(trace)};
}

}  // namespace

ControlVariateFit fit_control_variate(const VarianceObjective& objective,
                                      const ControlVariateFitConfig& config) {
  config.fit.validate();
  if (config.starts == 0) throw std::invalid_argument("at least one start is required");
  const QClass& qc = objective.qclass();
  const auto rows = static_cast<Eigen::Index>(qc.num_actions);
  const auto cols = static_cast<Eigen::Index>(qc.dim + 1);
  Rng root(config.fit.seed);

  std::optional<Eigen::MatrixXd> best_theta;
  std::vector<double> best_trace;
  double best_value = 0.0;
  for (std::size_t start = 0; start < config.starts; ++start) {
    Eigen::MatrixXd init = Eigen::MatrixXd::Zero(rows, cols);
    if (start > 0) {
      Rng rng = root.split(start);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) init(i, j) = config.init_scale * rng.normal();
      }
    }
    auto [theta, trace] = descend(objective, std::move(init), config.fit);
    const double final_value = trace.back();
    if (!best_theta || final_value < best_value) {
      best_value = final_value;
      best_theta = std::move(theta);
      best_trace = std::move(trace);
    }
  }
  const double unpenalised = objective.value(*best_theta);
  return ControlVariateFit{QModel(std::move(*best_theta), Link::kLogistic, qc.r_max), unpenalised,
                           std::move(best_trace)};
}

ControlVariateFit smrdr_fit(const StratifiedDataset& data, const QClass& qclass,
                            const Policy& pi_e, const Policy& pi_star,
                            const ControlVariateFitConfig& config) {
  return fit_control_variate(
      VarianceObjective(data, qclass, pi_e, pi_star, VarianceObjectiveKind::kStratified), config);
}

ControlVariateFit mrdr_fit(const StratifiedDataset& data, const QClass& qclass,
                           const Policy& pi_e, const Policy& pi_star,
                           const ControlVariateFitConfig& config) {
  return fit_control_variate(
      VarianceObjective(data, qclass, pi_e, pi_star, VarianceObjectiveKind::kIid), config);
}

namespace {

double variance_cross_fit(const StratifiedDataset& data, const QClass& qclass, const Policy& pi_e,
                          PolicyPtr pi_star, const ControlVariateFitConfig& config,
                          const CrossFitOptions& options, VarianceObjectiveKind kind) {
  const WeightFunction h = inverse_propensity_weights(pi_star, 0.0, options.max_weight);
  return cross_fit_estimate(
      data, options.folds,
      [&](std::size_t, const StratifiedDataset& train) {
        const VarianceObjective objective(train, qclass, pi_e, *pi_star, kind);
        return Nuisances{h, fit_control_variate(objective, config).model.as_control_variate()};
      },
      pi_e, options.seed);
}

}  // namespace

double smrdr_estimate(const StratifiedDataset& data, const QClass& qclass, const Policy& pi_e,
                      PolicyPtr pi_star, const ControlVariateFitConfig& config,
                      const CrossFitOptions& options) {
  return variance_cross_fit(data, qclass, pi_e, std::move(pi_star), config, options,
                            VarianceObjectiveKind::kStratified);
}

double mrdr_estimate(const StratifiedDataset& data, const QClass& qclass, const Policy& pi_e,
                     PolicyPtr pi_star, const ControlVariateFitConfig& config,
                     const CrossFitOptions& options) {
  return variance_cross_fit(data, qclass, pi_e, std::move(pi_star), config, options,
                            VarianceObjectiveKind::kIid);
}

}  // namespace stratope
