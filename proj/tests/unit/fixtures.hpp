#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "stratope/environment.hpp"
#include "stratope/policy.hpp"

namespace fixtures {

// Two equiprobable contexts, two actions, q = [[0.8, 0.2], [0.4, 0.6]].
inline stratope::DiscreteEnvironment toy_env(
    stratope::RewardModel model = stratope::RewardModel::kScaledBernoulli) {
  return stratope::DiscreteEnvironment::with_one_hot_contexts({0.5, 0.5}, {{0.8, 0.2}, {0.4, 0.6}},
                                                              model);
}

inline stratope::PolicyPtr uniform(std::size_t actions = 2) {
  return std::make_shared<const stratope::UniformPolicy>(actions);
}

inline stratope::PolicyPtr table(std::vector<std::vector<double>> t) {
  return std::make_shared<const stratope::TabularPolicy>(std::move(t));
}

// Hand-checked mean and variance of a finite list.
inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace fixtures

#include "stratope/estimators.hpp"

namespace fixtures {

// Per-cell mean reward on the training part, 0.5 where a cell is unseen.
inline stratope::QFitter tabular_q_fitter(std::size_t contexts, std::size_t actions) {
  return [contexts, actions](const stratope::StratifiedDataset& train) {
    std::vector<std::vector<double>> sum(contexts, std::vector<double>(actions, 0.0));
    auto count = sum;
    train.for_each([&](const stratope::LoggedSample& x) {
      sum[x.context.id][x.action] += x.reward;
      count[x.context.id][x.action] += 1.0;
    });
    for (std::size_t s = 0; s < contexts; ++s) {
      for (std::size_t a = 0; a < actions; ++a) {
        sum[s][a] = count[s][a] > 0.0 ? sum[s][a] / count[s][a] : 0.5;
      }
    }
    return stratope::ControlVariate::from_table(std::move(sum));
  };
}

inline stratope::QFitter fixed_q_fitter(stratope::ControlVariate g) {
  return [g = std::move(g)](const stratope::StratifiedDataset&) { return g; };
}

struct RunningStats {
  double n = 0.0, mean = 0.0, m2 = 0.0;
  void add(double x) {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double variance() const { return m2 / (n - 1.0); }
  double se() const { return std::sqrt(variance() / n); }
};

}  // namespace fixtures
