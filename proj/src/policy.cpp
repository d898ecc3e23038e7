#include "stratope/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "stratope/environment.hpp"
#include "stratope/errors.hpp"

namespace stratope {

namespace {

constexpr double kSimplexTol = 1e-9;

void check_row(std::span<const double> row, const char* what) {
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw InvalidPolicyError(std::string(what) + ": negative or nonfinite probability");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSimplexTol) {
    throw InvalidPolicyError(std::string(what) + ": probabilities sum to " + std::to_string(sum));
  }
}

}  // namespace

void validate_simplex(std::span<const double> weights, double tol) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("simplex weights must be finite and nonnegative");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw std::invalid_argument("simplex weights sum to " + std::to_string(sum));
  }
}

// Policy ---------------------------------------------------------------------

std::vector<double> Policy::probabilities(const Context& s) const {
  std::vector<double> out(num_actions());
  fill_probabilities(s, out);
  return out;
}

double Policy::action_probability(const Context& s, std::size_t a) const {
  if (a >= num_actions()) throw std::out_of_range("action index out of range");
  return probabilities(s)[a];
}

std::size_t Policy::sample_action(const Context& s, Rng& rng) const {
  const auto probs = probabilities(s);
  return rng.categorical(probs);
}

UniformPolicy::UniformPolicy(std::size_t num_actions) : num_actions_(num_actions) {
  if (num_actions == 0) throw InvalidPolicyError("uniform policy needs at least one action");
}

void UniformPolicy::fill_probabilities(const Context&, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(num_actions_));
}

TabularPolicy::TabularPolicy(std::vector<std::vector<double>> table) : table_(std::move(table)) {
  if (table_.empty() || table_.front().empty()) throw InvalidPolicyError("empty policy table");
  num_actions_ = table_.front().size();
  for (const auto& row : table_) {
    if (row.size() != num_actions_) throw InvalidPolicyError("ragged policy table");
    check_row(row, "tabular policy");
  }
}

TabularPolicy TabularPolicy::point_mass(std::size_t num_contexts, std::size_t num_actions,
                                        std::span<const std::size_t> action_per_context) {
  if (action_per_context.size() != num_contexts) {
    throw InvalidPolicyError("point mass needs one action per context");
  }
  std::vector<std::vector<double>> table(num_contexts, std::vector<double>(num_actions, 0.0));
  for (std::size_t s = 0; s < num_contexts; ++s) table[s].at(action_per_context[s]) = 1.0;
  return TabularPolicy(std::move(table));
}

void TabularPolicy::fill_probabilities(const Context& s, std::span<double> out) const {
  if (s.id >= table_.size()) {
    throw InvalidPolicyError("tabular policy has no row for context " + std::to_string(s.id));
  }
  std::copy(table_[s.id].begin(), table_[s.id].end(), out.begin());
}

void LinearScorer::scores(const Context& s, std::span<double> out) const {
  if (s.features.size() != dim()) {
    throw InvalidPolicyError("context has " + std::to_string(s.features.size()) +
                             " features, scorer expects " + std::to_string(dim()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(s.features.data(),
                                            static_cast<Eigen::Index>(s.features.size()));
  Eigen::Map<Eigen::VectorXd> result(out.data(), static_cast<Eigen::Index>(out.size()));
  result.noalias() = weights * x;
  result += bias;
}

LinearSoftmaxPolicy::LinearSoftmaxPolicy(LinearScorer scorer, double temperature)
    : scorer_(std::move(scorer)), temperature_(temperature) {
  if (!(temperature_ > 0.0)) throw InvalidPolicyError("softmax temperature must be positive");
  if (scorer_.bias.size() != scorer_.weights.rows()) {
    throw InvalidPolicyError("bias length must equal the number of actions");
  }
  if (scorer_.num_actions() == 0) throw InvalidPolicyError("softmax policy needs actions");
}

void LinearSoftmaxPolicy::fill_probabilities(const Context& s, std::span<double> out) const {
  scorer_.scores(s, out);
  const double top = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp((v - top) / temperature_);
    total += v;
  }
  for (double& v : out) v /= total;
}

GreedyPolicy::GreedyPolicy(LinearScorer scorer)
    : num_actions_(scorer.num_actions()),
      linear_(std::make_shared<const LinearScorer>(std::move(scorer))) {
  if (num_actions_ == 0) throw InvalidPolicyError("greedy policy needs actions");
  scorer_ = [lin = linear_](const Context& s, std::span<double> out) { lin->scores(s, out); };
}

GreedyPolicy::GreedyPolicy(std::size_t num_actions, ScoreFn scorer)
    : num_actions_(num_actions), scorer_(std::move(scorer)) {
  if (num_actions_ == 0) throw InvalidPolicyError("greedy policy needs actions");
}

std::size_t GreedyPolicy::greedy_action(const Context& s) const {
  std::vector<double> scores(num_actions_);
  scorer_(s, scores);
  std::size_t best = 0;
  for (std::size_t a = 1; a < num_actions_; ++a) {
    if (scores[a] > scores[best]) best = a;
  }
  return best;
}

void GreedyPolicy::fill_probabilities(const Context& s, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  out[greedy_action(s)] = 1.0;
}

MixturePolicy::MixturePolicy(double alpha, PolicyPtr base) : alpha_(alpha), base_(std::move(base)) {
  if (!base_) throw InvalidPolicyError("mixture needs a base policy");
  if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) throw InvalidPolicyError("mixture alpha outside [0, 1]");
}

void MixturePolicy::fill_probabilities(const Context& s, std::span<double> out) const {
  base_->fill_probabilities(s, out);
  const double floor = (1.0 - alpha_) / static_cast<double>(out.size());
  for (double& p : out) p = alpha_ * p + floor;
}

MarginalPolicy::MarginalPolicy(std::vector<PolicyPtr> components, std::vector<double> rho)
    : components_(std::move(components)), rho_(std::move(rho)) {
  if (components_.empty()) throw InvalidPolicyError("marginal policy needs components");
  if (components_.size() != rho_.size()) {
    throw std::invalid_argument("one proportion per logger required");
  }
  validate_simplex(rho_, kSimplexTol);
  num_actions_ = components_.front()->num_actions();
  for (const auto& c : components_) {
    if (!c || c->num_actions() != num_actions_) {
      throw InvalidPolicyError("loggers disagree on the action count");
    }
  }
}

void MarginalPolicy::fill_probabilities(const Context& s, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> buf(num_actions_);
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (rho_[k] == 0.0) continue;
    components_[k]->fill_probabilities(s, buf);
    for (std::size_t a = 0; a < num_actions_; ++a) out[a] += rho_[k] * buf[a];
  }
}

PolicyPtr marginal_policy(std::span<const PolicyPtr> loggers, std::span<const double> rho) {
  if (loggers.size() != rho.size()) {
    throw std::invalid_argument("one proportion per logger required");
  }
  validate_simplex(rho, kSimplexTol);
  if (loggers.size() == 1) return loggers.front();
  return std::make_shared<MarginalPolicy>(std::vector<PolicyPtr>(loggers.begin(), loggers.end()),
                                          std::vector<double>(rho.begin(), rho.end()));
}

OverlapReport check_weak_overlap(const Policy& pi_e, const Policy& pi_star,
                                 const DiscreteEnvironment& env) {
  const auto e = env.policy_table(pi_e);
  const auto b = env.policy_table(pi_star);
  OverlapReport report;
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) {
      if (e[s][a] > 0.0 && !(b[s][a] > 0.0)) report.violations.emplace_back(s, a);
    }
  }
  report.holds = report.violations.empty();
  return report;
}

// Text format ----------------------------------------------------------------

namespace {

void write_linear_rows(std::ostream& os, const LinearScorer& scorer) {
  for (Eigen::Index a = 0; a < scorer.weights.rows(); ++a) {
    os << scorer.bias[a];
    for (Eigen::Index j = 0; j < scorer.weights.cols(); ++j) os << ' ' << scorer.weights(a, j);
    os << '\n';
  }
}

std::string next_line(std::istream& is) {
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) return line;
  }
  throw ParseError(0, "unexpected end of policy stream");
}

std::vector<double> read_reals(std::istream& is, std::size_t count) {
  std::istringstream row(next_line(is));
  std::vector<double> values;
  double v = 0.0;
  while (row >> v) values.push_back(v);
  if (values.size() != count) {
    throw ParseError(0, "expected " + std::to_string(count) + " values, found " +
                            std::to_string(values.size()));
  }
  return values;
}

LinearScorer read_linear_rows(std::istream& is, std::size_t actions, std::size_t dim) {
  LinearScorer scorer{Eigen::MatrixXd(actions, dim), Eigen::VectorXd(actions)};
  for (std::size_t a = 0; a < actions; ++a) {
    const auto row = read_reals(is, dim + 1);
    scorer.bias[static_cast<Eigen::Index>(a)] = row[0];
    for (std::size_t j = 0; j < dim; ++j) {
      scorer.weights(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) = row[j + 1];
    }
  }
  return scorer;
}

}  // namespace

void write_policy(std::ostream& os, const Policy& policy) {
  const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
  const std::size_t actions = policy.num_actions();
  if (dynamic_cast<const UniformPolicy*>(&policy) != nullptr) {
    os << "uniform " << actions << " 0 0\n";
  } else if (const auto* soft = dynamic_cast<const LinearSoftmaxPolicy*>(&policy)) {
    os << "softmax " << actions << ' ' << soft->scorer().dim() << ' ' << soft->temperature()
       << '\n';
    write_linear_rows(os, soft->scorer());
  } else if (const auto* greedy = dynamic_cast<const GreedyPolicy*>(&policy)) {
    const LinearScorer* scorer = greedy->linear_scorer();
    if (scorer == nullptr) throw std::invalid_argument("only linear greedy policies serialise");
    os << "greedy " << actions << ' ' << scorer->dim() << " 0\n";
    write_linear_rows(os, *scorer);
  } else if (const auto* mix = dynamic_cast<const MixturePolicy*>(&policy)) {
    os << "mixture " << actions << " 0 " << mix->alpha() << '\n';
    write_policy(os, *mix->base());
  } else if (const auto* marg = dynamic_cast<const MarginalPolicy*>(&policy)) {
    os << "marginal " << actions << " 0 " << marg->components().size() << '\n';
    for (std::size_t k = 0; k < marg->rho().size(); ++k) os << (k ? " " : "") << marg->rho()[k];
    os << '\n';
    for (const auto& c : marg->components()) write_policy(os, *c);
  } else if (const auto* tab = dynamic_cast<const TabularPolicy*>(&policy)) {
    os << "tabular " << actions << ' ' << tab->num_contexts() << " 0\n";
    for (std::size_t a = 0; a < actions; ++a) {
      for (std::size_t s = 0; s < tab->num_contexts(); ++s) {
        os << (s ? " " : "") << tab->table()[s][a];
      }
      os << '\n';
    }
  } else {
    throw std::invalid_argument("policy type has no text form");
  }
  os.precision(old_precision);
}

PolicyPtr read_policy(std::istream& is) {
  std::istringstream header(next_line(is));
  std::string tag;
  std::size_t actions = 0;
  std::size_t dim = 0;
  double param = 0.0;
  if (!(header >> tag >> actions >> dim >> param)) throw ParseError(0, "malformed policy header");
  if (tag == "uniform") return std::make_shared<UniformPolicy>(actions);
  if (tag == "softmax") {
    return std::make_shared<LinearSoftmaxPolicy>(read_linear_rows(is, actions, dim), param);
  }
  if (tag == "greedy") return std::make_shared<GreedyPolicy>(read_linear_rows(is, actions, dim));
  if (tag == "mixture") return std::make_shared<MixturePolicy>(param, read_policy(is));
  if (tag == "marginal") {
    const auto k = static_cast<std::size_t>(param);
    auto rho = read_reals(is, k);
    std::vector<PolicyPtr> components;
    for (std::size_t i = 0; i < k; ++i) components.push_back(read_policy(is));
    return std::make_shared<MarginalPolicy>(std::move(components), std::move(rho));
  }
  if (tag == "tabular") {
    std::vector<std::vector<double>> table(dim, std::vector<double>(actions));
    for (std::size_t a = 0; a < actions; ++a) {
      const auto row = read_reals(is, dim);
      for (std::size_t s = 0; s < dim; ++s) table[s][a] = row[s];
    }
    return std::make_shared<TabularPolicy>(std::move(table));
  }
  throw ParseError(0, "unknown policy tag '" + tag + "'");
}

}  // namespace stratope
