#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stratope/environment.hpp"
#include "stratope/policy.hpp"
#include "stratope/types.hpp"

namespace stratope {

/// Weights h(k, s, a).
using WeightFunction = std::function<double(std::size_t, const Context&, std::size_t)>;

/// Control variate g(s, a), evaluated for all actions at once.
class ControlVariate {
 public:
  using Evaluator = std::function<void(const Context&, std::span<double>)>;

  ControlVariate(std::size_t num_actions, Evaluator evaluator);

  static ControlVariate zero(std::size_t num_actions);
  static ControlVariate constant(std::size_t num_actions, double value);
  /// `table[s][a]` indexed by context id.
  static ControlVariate from_table(std::vector<std::vector<double>> table);

  std::size_t num_actions() const noexcept { return num_actions_; }
  void values(const Context& s, std::span<double> out) const { evaluator_(s, out); }
  double operator()(const Context& s, std::size_t a) const;
  /// g(s, pi) = sum_a pi(a|s) g(s, a).
  double expected(const Context& s, const Policy& pi) const;

 private:
  std::size_t num_actions_;
  Evaluator evaluator_;
};

class SimplexWeights {
 public:
  /// Throws std::invalid_argument unless lambda_k >= 0 and sum = 1 (1e-9).
  explicit SimplexWeights(std::vector<double> lambda);
  const std::vector<double>& values() const noexcept { return lambda_; }
  double operator[](std::size_t k) const { return lambda_.at(k); }
  std::size_t size() const noexcept { return lambda_.size(); }

 private:
  std::vector<double> lambda_;
};

struct VarianceOptions {
  /// Divide by n_k - 1 instead of n_k.
  bool bessel = false;
  /// Per-stratum variances are floored here before forming precision weights.
  double floor = 1e-12;
};

/// Population (or Bessel-corrected) variance of a sample.
double sample_variance(std::span<const double> values, bool bessel = false);

/// lambda_k proportional to n_k / max(var_k, floor); strata with n_k == 0
/// receive zero weight.
std::vector<double> precision_weights(std::span<const std::size_t> sizes,
                                      std::span<const double> variances, double floor = 1e-12);

/// pi_e(a|s) / pi(a|s); zero when pi_e(a|s) == 0. Throws OverlapError when
/// pi(a|s) == 0 < pi_e(a|s).
double importance_ratio(const Policy& pi_e, const Policy& pi, const Context& s, std::size_t a);

/// phi(s,a,r;g) = pi_e/pi_* (r - g(s,a)) + g(s, pi_e).
double phi(const LoggedSample& sample, const ControlVariate& g, const Policy& pi_e,
           const Policy& pi_star);

/// E_n[pi_e r / pi_*].
double is_estimate(const StratifiedDataset& data, const Policy& pi_e, const Policy& pi_star);

/// sum_k lambda_k E_{n_k}[pi_e r / pi_k]. Throws std::invalid_argument when a
/// stratum with positive weight is empty.
double weighted_is(const StratifiedDataset& data, const SimplexWeights& lambda,
                   const Policy& pi_e, std::span<const PolicyPtr> loggers);

/// weighted_is with lambda = (n_1/n, ..., n_K/n).
double is_avg(const StratifiedDataset& data, const Policy& pi_e,
              std::span<const PolicyPtr> loggers);

/// Per-stratum empirical variances of pi_e r / pi_k.
std::vector<double> per_stratum_is_variances(const StratifiedDataset& data, const Policy& pi_e,
                                             std::span<const PolicyPtr> loggers,
                                             bool bessel = false);

/// Precision-weighted IS with plug-in weights computed on the same data.
double is_pw_feasible(const StratifiedDataset& data, const Policy& pi_e,
                      std::span<const PolicyPtr> loggers, const VarianceOptions& options = {});

/// Gamma(D; h, g) = E_n[h(k,s,a) pi_e(a|s) (r - g(s,a)) + g(s, pi_e)].
/// h is not evaluated where pi_e(a|s) == 0. Throws std::domain_error on a
/// nonfinite h or g at a logged point.
double gamma_estimate(const StratifiedDataset& data, const WeightFunction& h,
                      const ControlVariate& g, const Policy& pi_e);

/// True iff sum_k n_k pi_k(a|s) h(k,s,a) = n within `tol` wherever pi_e(a|s) > 0.
bool check_constraint(const WeightFunction& h, std::span<const PolicyPtr> loggers,
                      std::span<const std::size_t> sizes, const DiscreteEnvironment& env,
                      const Policy& pi_e, double tol = 1e-9);

/// h = 1 / max(pi(a|s), floor), optionally capped at `max_weight`.
WeightFunction inverse_propensity_weights(PolicyPtr pi, double floor = 0.0,
                                          std::optional<double> max_weight = std::nullopt);

/// h(k, s, a) = 1 / max(pi_k(a|s), floor).
WeightFunction per_logger_weights(std::vector<PolicyPtr> loggers, double floor = 0.0,
                                  std::optional<double> max_weight = std::nullopt);

/// h(k, s, a) = n lambda_k / (n_k max(pi_k(a|s), floor)).
WeightFunction simplex_logger_weights(std::vector<double> lambda, std::vector<std::size_t> sizes,
                                      std::vector<PolicyPtr> loggers, double floor = 0.0,
                                      std::optional<double> max_weight = std::nullopt);

// ---------------------------------------------------------------------------
// Cross-fitting

/// Per-stratum Z-fold partition: each stratum is permuted and cut into
/// contiguous chunks whose sizes differ from n_k / Z by less than one.
class FoldPlan {
 public:
  FoldPlan(std::size_t folds, std::vector<std::vector<std::size_t>> fold_of);

  std::size_t folds() const noexcept { return folds_; }
  /// fold_of()[k][i] is the fold of sample i in stratum k.
  const std::vector<std::vector<std::size_t>>& fold_of() const noexcept { return fold_of_; }
  std::size_t fold_size(std::size_t k, std::size_t z) const;

  /// L_z: samples in fold z.
  StratifiedDataset eval_part(const StratifiedDataset& data, std::size_t z) const;
  /// U_z: samples outside fold z.
  StratifiedDataset train_part(const StratifiedDataset& data, std::size_t z) const;

 private:
  std::size_t folds_;
  std::vector<std::vector<std::size_t>> fold_of_;
};

/// Builds a plan with `folds` folds. When a nonempty stratum has fewer than
/// `folds` samples the fold count is reduced to the smallest such size and a
/// warning is logged; a resulting fold count below 2 throws std::invalid_argument.
FoldPlan make_fold_plan(const StratifiedDataset& data, std::size_t folds, std::uint64_t seed);

struct Nuisances {
  WeightFunction h;
  ControlVariate g;
};

/// Fits (h^(z), g^(z)) from the training part U_z of fold z.
using NuisanceFitter = std::function<Nuisances(std::size_t fold, const StratifiedDataset& train)>;
using QFitter = std::function<ControlVariate(const StratifiedDataset& train)>;
/// Estimates the marginal logging policy from pooled training data.
using BehaviorFitter = std::function<PolicyPtr(const StratifiedDataset& train)>;

/// (1/n) sum_z |L_z| Gamma(L_z; h^(z), g^(z)).
double cross_fit_estimate(const StratifiedDataset& data, const FoldPlan& plan,
                          const NuisanceFitter& fitter, const Policy& pi_e);

double cross_fit_estimate(const StratifiedDataset& data, std::size_t folds,
                          const NuisanceFitter& fitter, const Policy& pi_e, std::uint64_t seed);

struct CrossFitOptions {
  std::size_t folds = 2;
  std::uint64_t seed = 0;
  /// Lower clip applied to estimated propensities before inversion.
  double propensity_floor = 1e-6;
  std::optional<double> max_weight;
  VarianceOptions variance;
};

/// Cross-fit DR with known pi_*: h = 1/pi_*, g = q-hat fit on U_z.
double dr_estimate(const StratifiedDataset& data, const Policy& pi_e, PolicyPtr pi_star,
                   const QFitter& q_fitter, const CrossFitOptions& options = {});

/// h(k,s,a) = 1/pi_k(a|s), g = q-hat.
double dr_avg(const StratifiedDataset& data, const Policy& pi_e,
              std::span<const PolicyPtr> loggers, const QFitter& q_fitter,
              const CrossFitOptions& options = {});

/// Per-stratum DR scores pi_e/pi_k (r - g) + g(s, pi_e) and their variances.
std::vector<double> per_stratum_dr_variances(const StratifiedDataset& data, const Policy& pi_e,
                                             std::span<const PolicyPtr> loggers,
                                             const ControlVariate& g, bool bessel = false,
                                             double propensity_floor = 0.0);

/// h(k,s,a) = n lambda_k / (n_k pi_k(a|s)) with lambda precision weights of the
/// per-stratum DR score variances on U_z.
double dr_pw(const StratifiedDataset& data, const Policy& pi_e, std::span<const PolicyPtr> loggers,
             const QFitter& q_fitter, const CrossFitOptions& options = {});

/// h = 1/max(pi_*-hat, floor), g = q-hat; both nuisances fit on U_z.
double dr_estimated_propensity(const StratifiedDataset& data, const Policy& pi_e,
                               const BehaviorFitter& behavior_fitter, const QFitter& q_fitter,
                               const CrossFitOptions& options = {});

/// A serialisable estimate.
struct EstimateRecord {
  std::string estimator;
  double value = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

}  // namespace stratope
