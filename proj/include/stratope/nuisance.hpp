#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "stratope/estimators.hpp"
#include "stratope/policy.hpp"
#include "stratope/types.hpp"

namespace stratope {

struct FitConfig {
  double learning_rate = 0.1;
  std::size_t iterations = 2000;
  /// Ridge strength on the summed loss; intercepts are not penalised.
  double l2_penalty = 1e-4;
  std::uint64_t seed = 0;
  /// Standardise features during fitting; coefficients are mapped back to the
  /// raw scale afterwards.
  bool standardize = false;

  void validate() const;
};

enum class Link { kLogistic, kIdentity };

/// Design row with a leading 1 for the intercept.
struct BinaryRow {
  Eigen::VectorXd x;
  double target = 0.0;  // mean target in [0, 1] (logistic) or mean response
  double weight = 0.0;  // number of samples aggregated into the row
};

struct MultinomialRow {
  Eigen::VectorXd x;
  Eigen::VectorXd counts;  // per-action counts
  double weight = 0.0;     // counts.sum()
};

/// Weighted mean log-loss (or half squared error) plus l2/(2W) |w|^2 with W the
/// total weight.
class BinaryLoss {
 public:
  BinaryLoss(std::vector<BinaryRow> rows, Link link, double l2_penalty);

  double value(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  std::size_t dim() const noexcept { return dim_; }
  double total_weight() const noexcept { return total_weight_; }

 private:
  Eigen::MatrixXd x_;       // rows x dim
  Eigen::VectorXd target_;
  Eigen::VectorXd weight_;
  Link link_;
  double l2_;
  double total_weight_ = 0.0;
  std::size_t dim_ = 0;
};

/// Weighted mean softmax cross-entropy over actions plus l2/(2W) |W|^2.
/// Parameters are A x (d + 1) with the intercept in column 0.
class MultinomialLoss {
 public:
  MultinomialLoss(std::vector<MultinomialRow> rows, std::size_t num_actions, double l2_penalty);

  double value(const Eigen::MatrixXd& theta) const;
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& theta) const;
  std::size_t num_actions() const noexcept { return num_actions_; }

 private:
  Eigen::MatrixXd x_;       // rows x (d + 1)
  Eigen::MatrixXd counts_;  // rows x A
  Eigen::VectorXd weight_;
  std::size_t num_actions_;
  double l2_;
  double total_weight_ = 0.0;
};

/// Per-action regression q-hat(s, a) = link(theta_a . [1, x]).
class QModel {
 public:
  /// `params` is A x (d + 1) with intercepts in column 0.
  QModel(Eigen::MatrixXd params, Link link, double r_max = 1.0,
         std::vector<bool> fallback_actions = {});

  std::size_t num_actions() const noexcept { return static_cast<std::size_t>(params_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(params_.cols()) - 1; }
  Link link() const noexcept { return link_; }
  double r_max() const noexcept { return r_max_; }
  const Eigen::MatrixXd& params() const noexcept { return params_; }
  /// Actions without training data, set to the global mean reward.
  const std::vector<bool>& fallback_actions() const noexcept { return fallback_; }

  double predict(const Context& s, std::size_t a) const;
  void predict_all(const Context& s, std::span<double> out) const;
  ControlVariate as_control_variate() const;

 private:
  Eigen::MatrixXd params_;
  Link link_;
  double r_max_;
  std::vector<bool> fallback_;
};

/// Multinomial-logit estimate of an action distribution.
class BehaviorModel {
 public:
  explicit BehaviorModel(LinearScorer scorer);

  const LinearScorer& scorer() const noexcept { return policy_->scorer(); }
  std::shared_ptr<const LinearSoftmaxPolicy> policy() const noexcept { return policy_; }

 private:
  std::shared_ptr<const LinearSoftmaxPolicy> policy_;
};

/// Collapses samples sharing (context id, action) into weighted rows for one
/// action's regression. Rewards are divided by r_max under the logistic link.
std::vector<BinaryRow> q_design(std::span<const LoggedSample> samples, std::size_t action,
                                Link link, double r_max);
/// Collapses samples sharing a context id into per-action count rows.
std::vector<MultinomialRow> behavior_design(std::span<const LoggedSample> samples,
                                            std::size_t num_actions);

/// Full-batch gradient descent with a fixed step. Optional trace receives the
/// loss before the first step and after every step.
Eigen::VectorXd gradient_descent(const BinaryLoss& loss, Eigen::VectorXd theta,
                                 const FitConfig& config, std::vector<double>* trace = nullptr);
Eigen::MatrixXd gradient_descent(const MultinomialLoss& loss, Eigen::MatrixXd theta,
                                 const FitConfig& config, std::vector<double>* trace = nullptr);

/// Per-action regularised regression of reward on context features.
/// Throws std::invalid_argument when `samples` is empty.
QModel fit_q(std::span<const LoggedSample> samples, std::size_t num_actions,
             const FitConfig& config = {}, Link link = Link::kLogistic, double r_max = 1.0);
QModel fit_q(const StratifiedDataset& data, std::size_t num_actions, const FitConfig& config = {},
             Link link = Link::kLogistic, double r_max = 1.0);

/// Multinomial logistic regression of action on context over the pooled
/// samples. On stratified data this estimates the marginal logging policy.
BehaviorModel fit_behavior(std::span<const LoggedSample> samples, std::size_t num_actions,
                           const FitConfig& config = {});
BehaviorModel fit_behavior(const StratifiedDataset& data, std::size_t num_actions,
                           const FitConfig& config = {});

/// Fits a multinomial logit on labelled feature rows; used to train the
/// deterministic classification policy.
LinearScorer fit_multinomial(std::span<const std::vector<double>> features,
                             std::span<const std::size_t> labels, std::size_t num_classes,
                             const FitConfig& config = {});

QFitter make_q_fitter(std::size_t num_actions, FitConfig config = {},
                      Link link = Link::kLogistic, double r_max = 1.0);
BehaviorFitter make_behavior_fitter(std::size_t num_actions, FitConfig config = {});

/// Header `qmodel <A> <d> <r_max> <link>` followed by A rows of d + 1 reals.
void write_q_model(std::ostream& os, const QModel& model);
QModel read_q_model(std::istream& is);

}  // namespace stratope
