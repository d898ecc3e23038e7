#include "stratope/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>

#include "stratope/errors.hpp"

namespace stratope {

void FitConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive and finite");
  }
  if (iterations == 0) throw ConfigError("iteration count must be positive");
  if (!(l2_penalty >= 0.0) || !std::isfinite(l2_penalty)) {
    throw ConfigError("l2 penalty must be nonnegative and finite");
  }
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Eigen::VectorXd design_vector(const Context& s) {
  Eigen::VectorXd x(s.features.size() + 1);
  x(0) = 1.0;
  for (std::size_t j = 0; j < s.features.size(); ++j) x(j + 1) = s.features[j];
  return x;
}

std::size_t feature_dim(std::span<const LoggedSample> samples) {
  const std::size_t d = samples.front().context.features.size();
  for (const auto& x : samples) {
    if (x.context.features.size() != d) {
      throw std::invalid_argument("samples carry feature vectors of different lengths");
    }
  }
  return d;
}

// Column means and scales of the non-intercept design columns.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer identity(std::size_t d) {
    return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)),
            Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d))};
  }

  template <typename Row>
  static Standardizer from_rows(const std::vector<Row>& rows, std::size_t d) {
    Standardizer out = identity(d);
    double total = 0.0;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (const auto& r : rows) {
      const auto f = r.x.tail(static_cast<Eigen::Index>(d));
      sum += r.weight * f;
      sq += r.weight * f.cwiseProduct(f);
      total += r.weight;
    }
    if (total <= 0.0) return out;
    out.mean = sum / total;
    for (Eigen::Index j = 0; j < out.mean.size(); ++j) {
      const double var = sq(j) / total - out.mean(j) * out.mean(j);
      out.scale(j) = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return out;
  }

  template <typename Row>
  void apply(std::vector<Row>& rows) const {
    const auto d = mean.size();
    for (auto& r : rows) {
      r.x.tail(d) = (r.x.tail(d) - mean).cwiseQuotient(scale);
    }
  }

  // Maps coefficients fit on standardised columns back to raw features.
  void unapply(Eigen::MatrixXd& theta) const {
    const auto d = mean.size();
    for (Eigen::Index a = 0; a < theta.rows(); ++a) {
      Eigen::VectorXd w = theta.row(a).tail(d).transpose().cwiseQuotient(scale);
      theta(a, 0) -= w.dot(mean);
      theta.row(a).tail(d) = w.transpose();
    }
  }
};

}  // namespace

// Losses ---------------------------------------------------------------------

BinaryLoss::BinaryLoss(std::vector<BinaryRow> rows, Link link, double l2_penalty)
    : link_(link), l2_(l2_penalty) {
  if (rows.empty()) throw std::invalid_argument("BinaryLoss needs at least one row");
  dim_ = static_cast<std::size_t>(rows.front().x.size());
  const auto m = static_cast<Eigen::Index>(rows.size());
  x_.resize(m, static_cast<Eigen::Index>(dim_));
  target_.resize(m);
  weight_.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<std::size_t>(r.x.size()) != dim_) {
      throw std::invalid_argument("BinaryLoss rows differ in dimension");
    }
    x_.row(i) = r.x.transpose();
    target_(i) = r.target;
    weight_(i) = r.weight;
  }
  total_weight_ = weight_.sum();
  if (!(total_weight_ > 0.0)) throw std::invalid_argument("BinaryLoss needs positive weight");
}

double BinaryLoss::value(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd z = x_ * theta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (link_ == Link::kLogistic) {
      total += weight_(i) * (softplus(z(i)) - target_(i) * z(i));
    } else {
      total += weight_(i) * 0.5 * (z(i) - target_(i)) * (z(i) - target_(i));
    }
  }
  const double penalty = theta.tail(theta.size() - 1).squaredNorm();
  return (total + 0.5 * l2_ * penalty) / total_weight_;
}

Eigen::VectorXd BinaryLoss::gradient(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd residual = x_ * theta;
  if (link_ == Link::kLogistic) residual = residual.unaryExpr([](double z) { return sigmoid(z); });
  residual = (residual - target_).cwiseProduct(weight_);
  Eigen::VectorXd grad = x_.transpose() * residual;
  grad.tail(theta.size() - 1) += l2_ * theta.tail(theta.size() - 1);
  return grad / total_weight_;
}

MultinomialLoss::MultinomialLoss(std::vector<MultinomialRow> rows, std::size_t num_actions,
                                 double l2_penalty)
    : num_actions_(num_actions), l2_(l2_penalty) {
  if (rows.empty()) throw std::invalid_argument("MultinomialLoss needs at least one row");
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto p = rows.front().x.size();
  x_.resize(m, p);
  counts_.resize(m, static_cast<Eigen::Index>(num_actions_));
  weight_.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<std::size_t>(r.counts.size()) != num_actions_ || r.x.size() != p) {
      throw std::invalid_argument("MultinomialLoss rows have inconsistent shapes");
    }
    x_.row(i) = r.x.transpose();
    counts_.row(i) = r.counts.transpose();
    weight_(i) = r.weight;
  }
  total_weight_ = weight_.sum();
  if (!(total_weight_ > 0.0)) throw std::invalid_argument("MultinomialLoss needs positive weight");
}

namespace {

// Row-wise softmax of Z in place; returns the row log-sum-exps.
Eigen::VectorXd softmax_rows(Eigen::MatrixXd& z) {
  Eigen::VectorXd lse(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp().matrix();
    const double sum = z.row(i).sum();
    z.row(i) /= sum;
    lse(i) = m + std::log(sum);
  }
  return lse;
}

}  // namespace

double MultinomialLoss::value(const Eigen::MatrixXd& theta) const {
  Eigen::MatrixXd z = x_ * theta.transpose();
  const double linear = (counts_.array() * z.array()).sum();
  const Eigen::VectorXd lse = softmax_rows(z);
  const double total = weight_.dot(lse) - linear;
  const double penalty = theta.rightCols(theta.cols() - 1).squaredNorm();
  return (total + 0.5 * l2_ * penalty) / total_weight_;
}

Eigen::MatrixXd MultinomialLoss::gradient(const Eigen::MatrixXd& theta) const {
  Eigen::MatrixXd p = x_ * theta.transpose();
  softmax_rows(p);
  const Eigen::MatrixXd residual = weight_.asDiagonal() * p - counts_;
  Eigen::MatrixXd grad = residual.transpose() * x_;
  grad.rightCols(theta.cols() - 1) += l2_ * theta.rightCols(theta.cols() - 1);
  return grad / total_weight_;
}

// Models ---------------------------------------------------------------------

QModel::QModel(Eigen::MatrixXd params, Link link, double r_max, std::vector<bool> fallback_actions)
    : params_(std::move(params)), link_(link), r_max_(r_max), fallback_(std::move(fallback_actions)) {
  if (params_.rows() == 0 || params_.cols() == 0) throw std::invalid_argument("empty QModel");
  if (!(r_max_ > 0.0)) throw std::invalid_argument("QModel r_max must be positive");
  if (fallback_.empty()) fallback_.assign(static_cast<std::size_t>(params_.rows()), false);
  if (fallback_.size() != static_cast<std::size_t>(params_.rows())) {
    throw std::invalid_argument("QModel fallback flags have the wrong length");
  }
}

double QModel::predict(const Context& s, std::size_t a) const {
  if (s.features.size() != dim()) {
    throw std::invalid_argument("QModel: context has " + std::to_string(s.features.size()) +
                                " features, expected " + std::to_string(dim()));
  }
  const auto row = params_.row(static_cast<Eigen::Index>(a));
  double z = row(0);
  for (std::size_t j = 0; j < s.features.size(); ++j) z += row(static_cast<Eigen::Index>(j + 1)) * s.features[j];
  return link_ == Link::kLogistic ? r_max_ * sigmoid(z) : z;
}

void QModel::predict_all(const Context& s, std::span<double> out) const {
  for (std::size_t a = 0; a < num_actions(); ++a) out[a] = predict(s, a);
}

ControlVariate QModel::as_control_variate() const {
  return ControlVariate(num_actions(), [model = *this](const Context& s, std::span<double> out) {
    model.predict_all(s, out);
  });
}

BehaviorModel::BehaviorModel(LinearScorer scorer)
    : policy_(std::make_shared<const LinearSoftmaxPolicy>(std::move(scorer))) {}

// Design ---------------------------------------------------------------------

std::vector<BinaryRow> q_design(std::span<const LoggedSample> samples, std::size_t action,
                                Link link, double r_max) {
  std::map<std::size_t, BinaryRow> by_context;
  for (const auto& x : samples) {
    if (x.action != action) continue;
    auto [it, inserted] = by_context.try_emplace(x.context.id);
    if (inserted) it->second.x = design_vector(x.context);
    const double y = link == Link::kLogistic ? x.reward / r_max : x.reward;
    it->second.target += y;
    it->second.weight += 1.0;
  }
  std::vector<BinaryRow> rows;
  rows.reserve(by_context.size());
  for (auto& [id, row] : by_context) {
    row.target /= row.weight;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<MultinomialRow> behavior_design(std::span<const LoggedSample> samples,
                                            std::size_t num_actions) {
  std::map<std::size_t, MultinomialRow> by_context;
  for (const auto& x : samples) {
    if (x.action >= num_actions) throw std::invalid_argument("action index out of range");
    auto [it, inserted] = by_context.try_emplace(x.context.id);
    if (inserted) {
      it->second.x = design_vector(x.context);
      it->second.counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_actions));
    }
    it->second.counts(static_cast<Eigen::Index>(x.action)) += 1.0;
    it->second.weight += 1.0;
  }
  std::vector<MultinomialRow> rows;
  rows.reserve(by_context.size());
  for (auto& [id, row] : by_context) rows.push_back(std::move(row));
  return rows;
}

// Optimisation ---------------------------------------------------------------

Eigen::VectorXd gradient_descent(const BinaryLoss& loss, Eigen::VectorXd theta,
                                 const FitConfig& config, std::vector<double>* trace) {
  config.validate();
  if (trace) trace->push_back(loss.value(theta));
  for (std::size_t it = 0; it < config.iterations; ++it) {
    theta -= config.learning_rate * loss.gradient(theta);
    if (trace) trace->push_back(loss.value(theta));
  }
  return theta;
}

Eigen::MatrixXd gradient_descent(const MultinomialLoss& loss, Eigen::MatrixXd theta,
                                 const FitConfig& config, std::vector<double>* trace) {
  config.validate();
  if (trace) trace->push_back(loss.value(theta));
  for (std::size_t it = 0; it < config.iterations; ++it) {
    theta -= config.learning_rate * loss.gradient(theta);
    if (trace) trace->push_back(loss.value(theta));
  }
  return theta;
}

// Fitting --------------------------------------------------------------------

QModel fit_q(std::span<const LoggedSample> samples, std::size_t num_actions,
             const FitConfig& config, Link link, double r_max) {
  if (samples.empty()) throw std::invalid_argument("fit_q needs at least one sample");
  config.validate();
  const std::size_t d = feature_dim(samples);
  double mean_reward = 0.0;
  for (const auto& x : samples) mean_reward += x.reward;
  mean_reward /= static_cast<double>(samples.size());

  auto link_inverse = [&](double target) {
    if (link == Link::kIdentity) return target;
    const double p = std::clamp(target / r_max, 1e-6, 1.0 - 1e-6);
    return std::log(p / (1.0 - p));
  };

  Eigen::MatrixXd params = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_actions),
                                                 static_cast<Eigen::Index>(d + 1));
  std::vector<bool> fallback(num_actions, false);
  for (std::size_t a = 0; a < num_actions; ++a) {
    auto rows = q_design(samples, a, link, r_max);
    if (rows.empty()) {
      fallback[a] = true;
      params(static_cast<Eigen::Index>(a), 0) = link_inverse(mean_reward);
      continue;
    }
    const Standardizer st = config.standardize ? Standardizer::from_rows(rows, d)
                                               : Standardizer::identity(d);
    if (config.standardize) st.apply(rows);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d + 1));
    BinaryLoss loss(std::move(rows), link, config.l2_penalty);
    theta = gradient_descent(loss, std::move(theta), config);
    Eigen::MatrixXd row = theta.transpose();
    if (config.standardize) st.unapply(row);
    params.row(static_cast<Eigen::Index>(a)) = row.row(0);
  }
  return QModel(std::move(params), link, r_max, std::move(fallback));
}

QModel fit_q(const StratifiedDataset& data, std::size_t num_actions, const FitConfig& config,
             Link link, double r_max) {
  const auto pooled = data.pooled();
  return fit_q(std::span<const LoggedSample>(pooled), num_actions, config, link, r_max);
}

namespace {

LinearScorer fit_multinomial_rows(std::vector<MultinomialRow> rows, std::size_t num_actions,
                                  std::size_t d, const FitConfig& config) {
  config.validate();
  const Standardizer st = config.standardize ? Standardizer::from_rows(rows, d)
                                             : Standardizer::identity(d);
  if (config.standardize) st.apply(rows);
  MultinomialLoss loss(std::move(rows), num_actions, config.l2_penalty);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_actions),
                                                static_cast<Eigen::Index>(d + 1));
  theta = gradient_descent(loss, std::move(theta), config);
  if (config.standardize) st.unapply(theta);
  LinearScorer scorer;
  scorer.bias = theta.col(0);
  scorer.weights = theta.rightCols(static_cast<Eigen::Index>(d));
  return scorer;
}

}  // namespace

BehaviorModel fit_behavior(std::span<const LoggedSample> samples, std::size_t num_actions,
                           const FitConfig& config) {
  if (samples.empty()) throw std::invalid_argument("fit_behavior needs at least one sample");
  const std::size_t d = feature_dim(samples);
  return BehaviorModel(fit_multinomial_rows(behavior_design(samples, num_actions), num_actions, d,
                                            config));
}

BehaviorModel fit_behavior(const StratifiedDataset& data, std::size_t num_actions,
                           const FitConfig& config) {
  const auto pooled = data.pooled();
  return fit_behavior(std::span<const LoggedSample>(pooled), num_actions, config);
}

LinearScorer fit_multinomial(std::span<const std::vector<double>> features,
                             std::span<const std::size_t> labels, std::size_t num_classes,
                             const FitConfig& config) {
  if (features.empty() || features.size() != labels.size()) {
    throw std::invalid_argument("fit_multinomial needs matching nonempty features and labels");
  }
  const std::size_t d = features.front().size();
  std::vector<MultinomialRow> rows;
  rows.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != d) throw std::invalid_argument("feature rows differ in length");
    if (labels[i] >= num_classes) throw std::invalid_argument("label out of range");
    MultinomialRow row;
    row.x = design_vector(Context{i, features[i]});
    row.counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_classes));
    row.counts(static_cast<Eigen::Index>(labels[i])) = 1.0;
    row.weight = 1.0;
    rows.push_back(std::move(row));
  }
  return fit_multinomial_rows(std::move(rows), num_classes, d, config);
}

QFitter make_q_fitter(std::size_t num_actions, FitConfig config, Link link, double r_max) {
  return [=](const StratifiedDataset& train) {
    return fit_q(train, num_actions, config, link, r_max).as_control_variate();
  };
}

BehaviorFitter make_behavior_fitter(std::size_t num_actions, FitConfig config) {
  return [=](const StratifiedDataset& train) -> PolicyPtr {
    return fit_behavior(train, num_actions, config).policy();
  };
}

// Serialisation --------------------------------------------------------------

void write_q_model(std::ostream& os, const QModel& model) {
  const auto old_precision = os.precision(17);
  os << "qmodel " << model.num_actions() << ' ' << model.dim() << ' ' << model.r_max() << ' '
     << (model.link() == Link::kLogistic ? "logistic" : "identity") << '\n';
  for (Eigen::Index a = 0; a < model.params().rows(); ++a) {
    for (Eigen::Index j = 0; j < model.params().cols(); ++j) {
      if (j) os << ' ';
      os << model.params()(a, j);
    }
    os << '\n';
  }
  os.precision(old_precision);
}

QModel read_q_model(std::istream& is) {
  std::string tag;
  std::string link_name;
  std::size_t actions = 0;
  std::size_t d = 0;
  double r_max = 0.0;
  if (!(is >> tag >> actions >> d >> r_max >> link_name) || tag != "qmodel") {
    throw ParseError(0, "expected a qmodel header");
  }
  Link link;
  if (link_name == "logistic") {
    link = Link::kLogistic;
  } else if (link_name == "identity") {
    link = Link::kIdentity;
  } else {
    throw ParseError(0, "unknown link '" + link_name + "'");
  }
  Eigen::MatrixXd params(static_cast<Eigen::Index>(actions), static_cast<Eigen::Index>(d + 1));
  for (std::size_t a = 0; a < actions; ++a) {
    for (std::size_t j = 0; j <= d; ++j) {
      if (!(is >> params(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)))) {
        throw ParseError(a + 1, "truncated qmodel parameters");
      }
    }
  }
  return QModel(std::move(params), link, r_max);
}

}  // namespace stratope
