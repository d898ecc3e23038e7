#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "stratope/environment.hpp"
#include "stratope/estimators.hpp"
#include "stratope/nuisance.hpp"
#include "stratope/policy.hpp"

namespace stratope {

using SampleScore = std::function<double(const LoggedSample&)>;

/// sum_k rho_k var_{n_k}[score]. Throws std::invalid_argument on an empty stratum.
double empirical_variance_stratified(const StratifiedDataset& data, const SampleScore& score,
                                     bool bessel = false);

/// var_n[score] over the pooled samples.
double empirical_variance_iid(const StratifiedDataset& data, const SampleScore& score,
                              bool bessel = false);

/// V* = E_{pi_*}[(pi_e/pi_*)^2 sigma_r^2] + var_{p_S}[v], by enumeration.
/// Throws OverlapError when pi_e puts mass where pi_* has none.
double efficiency_bound(const DiscreteEnvironment& env, const Policy& pi_e,
                        std::span<const PolicyPtr> loggers, std::span<const double> rho);
double efficiency_bound(const DiscreteEnvironment& env, const Policy& pi_e, const Policy& pi_star);

/// Hypothesis class for control variates: g(s, a) = r_max * sigmoid(theta_a . [1, x]).
struct QClass {
  std::size_t num_actions = 0;
  std::size_t dim = 0;
  double r_max = 1.0;
};

enum class VarianceObjectiveKind { kStratified, kIid };

/// Empirical variance of phi(.; g_theta) as a function of theta (A x (d+1)).
/// Samples with identical (k, context id, a, r) are aggregated.
class VarianceObjective {
 public:
  VarianceObjective(const StratifiedDataset& data, const QClass& qclass, const Policy& pi_e,
                    const Policy& pi_star, VarianceObjectiveKind kind);

  double value(const Eigen::MatrixXd& theta) const;
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& theta) const;
  /// Value and gradient in one pass.
  double evaluate(const Eigen::MatrixXd& theta, Eigen::MatrixXd* gradient) const;

  const QClass& qclass() const noexcept { return qclass_; }
  VarianceObjectiveKind kind() const noexcept { return kind_; }

 private:
  QClass qclass_;
  VarianceObjectiveKind kind_;
  // One row per aggregated (stratum, context, action, reward) group.
  Eigen::MatrixXd x_;      // groups x (d + 1)
  Eigen::MatrixXd pi_e_;   // groups x A
  Eigen::VectorXd ratio_;
  Eigen::VectorXd reward_;
  Eigen::VectorXd count_;
  std::vector<std::size_t> action_;
  std::vector<std::size_t> stratum_;
  std::vector<double> stratum_weight_;  // rho_k (stratified) or 1 (iid)
  std::vector<double> stratum_count_;
};

struct ControlVariateFit {
  QModel model;
  double objective = 0.0;
  /// Objective per iteration of the winning start.
  std::vector<double> trace;
};

struct ControlVariateFitConfig {
  FitConfig fit{0.1, 300, 0.0, 0, false};
  /// Zero init plus `starts - 1` seeded random inits; the best objective wins.
  std::size_t starts = 3;
  double init_scale = 0.5;
};

/// Minimises the stratified empirical variance of phi over the class.
ControlVariateFit smrdr_fit(const StratifiedDataset& data, const QClass& qclass,
                            const Policy& pi_e, const Policy& pi_star,
                            const ControlVariateFitConfig& config = {});

/// Same optimiser against the pooled (iid) variance.
ControlVariateFit mrdr_fit(const StratifiedDataset& data, const QClass& qclass,
                           const Policy& pi_e, const Policy& pi_star,
                           const ControlVariateFitConfig& config = {});

ControlVariateFit fit_control_variate(const VarianceObjective& objective,
                                      const ControlVariateFitConfig& config);

/// Cross-fit estimate with h = 1/pi_* and g fit on U_z by smrdr_fit.
double smrdr_estimate(const StratifiedDataset& data, const QClass& qclass, const Policy& pi_e,
                      PolicyPtr pi_star, const ControlVariateFitConfig& config = {},
                      const CrossFitOptions& options = {});
double mrdr_estimate(const StratifiedDataset& data, const QClass& qclass, const Policy& pi_e,
                     PolicyPtr pi_star, const ControlVariateFitConfig& config = {},
                     const CrossFitOptions& options = {});

}  // namespace stratope
