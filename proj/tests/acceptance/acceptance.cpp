// Acceptance suite. Each criterion prints one PASS/FAIL line; the exit code is
// nonzero when any selected criterion fails. Criterion numbers given on the
// command line restrict the run to those criteria.
//
// Exact means and variances are recomputed here by direct enumeration rather
// than through the library oracle, so the library is checked against an
// independent implementation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <Eigen/Dense>
#include <json.hpp>

#include "stratope/environment.hpp"
#include "stratope/estimators.hpp"
#include "stratope/nuisance.hpp"
#include "stratope/oracle.hpp"
#include "stratope/policy.hpp"
#include "stratope/rng.hpp"
#include "stratope/serialization.hpp"
#include "stratope/variance.hpp"

using namespace stratope;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// Independent exact analysis of stratified sample means.

using Table = std::vector<std::vector<double>>;
using Score = std::function<double(std::size_t k, std::size_t s, std::size_t a, double r)>;

struct Exact {
  double mean = 0.0;
  double variance = 0.0;
};

Table table_of(const DiscreteEnvironment& env, const Policy& pi) {
  Table t(env.num_contexts());
  for (std::size_t s = 0; s < env.num_contexts(); ++s) t[s] = pi.probabilities(env.context(s));
  return t;
}

// Bernoulli rewards on {0, r_max} or a point mass at q.
std::vector<std::pair<double, double>> rewards_of(const DiscreteEnvironment& env, std::size_t s,
                                                  std::size_t a) {
  const double q = env.q(s, a);
  if (env.reward_model() == RewardModel::kDeterministic) return {{q, 1.0}};
  const double p = q / env.r_max();
  return {{env.r_max(), p}, {0.0, 1.0 - p}};
}

// First and second moment of f(k, .) under p_S x pi_k x p_R.
std::pair<double, double> logger_moments(const DiscreteEnvironment& env, const Table& pi_k,
                                         std::size_t k, const Score& f) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) {
      const double w = env.context_prob(s) * pi_k[s][a];
      if (w == 0.0) continue;
      for (const auto& [r, pr] : rewards_of(env, s, a)) {
        if (pr == 0.0) continue;
        const double v = f(k, s, a, r);
        m1 += w * pr * v;
        m2 += w * pr * v * v;
      }
    }
  }
  return {m1, m2};
}

struct Problem {
  const FiniteInstance* instance;
  std::vector<Table> loggers;
  Table pi_e;
  Table pi_star;
  std::vector<double> rho;
  double n = 0.0;
};

Problem make_problem(const FiniteInstance& inst) {
  Problem p;
  p.instance = &inst;
  for (const auto& l : inst.loggers) p.loggers.push_back(table_of(inst.env, *l));
  p.pi_e = table_of(inst.env, *inst.pi_e);
  for (std::size_t k = 0; k < inst.sizes.size(); ++k) p.n += static_cast<double>(inst.sizes[k]);
  for (std::size_t k = 0; k < inst.sizes.size(); ++k) p.rho.push_back(static_cast<double>(inst.sizes[k]) / p.n);
  p.pi_star = Table(inst.env.num_contexts(), std::vector<double>(inst.env.num_actions(), 0.0));
  for (std::size_t k = 0; k < p.loggers.size(); ++k) {
    for (std::size_t s = 0; s < p.pi_star.size(); ++s) {
      for (std::size_t a = 0; a < p.pi_star[s].size(); ++a) p.pi_star[s][a] += p.rho[k] * p.loggers[k][s][a];
    }
  }
  return p;
}

// E_n[f] with n_k draws from logger k.
Exact stratified(const Problem& p, const Score& f) {
  Exact e;
  for (std::size_t k = 0; k < p.loggers.size(); ++k) {
    const auto [m1, m2] = logger_moments(p.instance->env, p.loggers[k], k, f);
    const double nk = static_cast<double>(p.instance->sizes[k]);
    e.mean += nk / p.n * m1;
    e.variance += nk / (p.n * p.n) * (m2 - m1 * m1);
  }
  return e;
}

// E_n[f] with n draws whose logger is ~ rho.
Exact iid(const Problem& p, const Score& f) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < p.loggers.size(); ++k) {
    const auto [a1, a2] = logger_moments(p.instance->env, p.loggers[k], k, f);
    m1 += p.rho[k] * a1;
    m2 += p.rho[k] * a2;
  }
  return {m1, (m2 - m1 * m1) / p.n};
}

double true_value(const Problem& p) {
  const auto& env = p.instance->env;
  double j = 0.0;
  for (std::size_t s = 0; s < env.num_contexts(); ++s) {
    for (std::size_t a = 0; a < env.num_actions(); ++a) j += env.context_prob(s) * p.pi_e[s][a] * env.q(s, a);
  }
  return j;
}

double ratio(double num, double den) { return num == 0.0 ? 0.0 : num / den; }

Score is_score(const Problem& p) {
  return [&p](std::size_t, std::size_t s, std::size_t a, double r) {
    return ratio(p.pi_e[s][a], p.pi_star[s][a]) * r;
  };
}

// Upsilon(lambda) written as a stratified mean: n lambda_k / n_k pi_e r / pi_k.
Score upsilon_score(const Problem& p, std::vector<double> lambda) {
  return [&p, lambda = std::move(lambda)](std::size_t k, std::size_t s, std::size_t a, double r) {
    const double nk = static_cast<double>(p.instance->sizes[k]);
    return p.n * lambda[k] / nk * ratio(p.pi_e[s][a], p.loggers[k][s][a]) * r;
  };
}

Score gamma_score_of(const Problem& p, WeightTable h, Table g) {
  return [&p, h = std::move(h), g = std::move(g)](std::size_t k, std::size_t s, std::size_t a, double r) {
    double gpe = 0.0;
    for (std::size_t b = 0; b < g[s].size(); ++b) gpe += p.pi_e[s][b] * g[s][b];
    const double term = p.pi_e[s][a] == 0.0 ? 0.0 : h[k][s][a] * p.pi_e[s][a] * (r - g[s][a]);
    return term + gpe;
  };
}

WeightTable inverse_star(const Problem& p) {
  WeightTable h(p.loggers.size(), p.pi_star);
  for (auto& hk : h) {
    for (auto& row : hk) {
      for (double& v : row) v = v > 0.0 ? 1.0 / v : 0.0;
    }
  }
  return h;
}

// Exact precision weights lambda*_k proportional to n_k / var_k[pi_e r / pi_k].
std::vector<double> lambda_star(const Problem& p) {
  std::vector<double> lam(p.loggers.size());
  double total = 0.0;
  for (std::size_t k = 0; k < p.loggers.size(); ++k) {
    const auto [m1, m2] = logger_moments(p.instance->env, p.loggers[k], k,
                                         [&](std::size_t kk, std::size_t s, std::size_t a, double r) {
                                           return ratio(p.pi_e[s][a], p.loggers[kk][s][a]) * r;
                                         });
    lam[k] = static_cast<double>(p.instance->sizes[k]) / std::max(m2 - m1 * m1, 1e-12);
    total += lam[k];
  }
  for (double& l : lam) l /= total;
  return lam;
}

std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> w(k);
  double total = 0.0;
  for (double& x : w) {
    x = -std::log(1.0 - rng.uniform());
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

// sum_k n_k pi_k h = n wherever pi_e > 0.
double constraint_violation(const Problem& p, const WeightTable& h) {
  double worst = 0.0;
  for (std::size_t s = 0; s < p.pi_e.size(); ++s) {
    for (std::size_t a = 0; a < p.pi_e[s].size(); ++a) {
      if (p.pi_e[s][a] == 0.0) continue;
      double lhs = 0.0;
      for (std::size_t k = 0; k < p.loggers.size(); ++k) {
        lhs += static_cast<double>(p.instance->sizes[k]) * p.loggers[k][s][a] * h[k][s][a];
      }
      worst = std::max(worst, std::abs(lhs - p.n) / p.n);
    }
  }
  return worst;
}

double data_mean(const StratifiedDataset& data, const Score& f) {
  double total = 0.0;
  data.for_each([&](const LoggedSample& x) { total += f(x.logger, x.context.id, x.action, x.reward); });
  return total / static_cast<double>(data.total());
}

WeightFunction weight_function(WeightTable h) {
  return [h = std::move(h)](std::size_t k, const Context& s, std::size_t a) { return h[k][s.id][a]; };
}

std::vector<FiniteInstance> instances(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<FiniteInstance> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_instance(rng));
  return out;
}

bool distinct_loggers(const Problem& p) {
  for (std::size_t k = 1; k < p.loggers.size(); ++k) {
    for (std::size_t s = 0; s < p.pi_e.size(); ++s) {
      for (std::size_t a = 0; a < p.pi_e[s].size(); ++a) {
        if (std::abs(p.loggers[k][s][a] - p.loggers[0][s][a]) > 1e-9) return true;
      }
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Monte Carlo helpers.

struct Running {
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

std::string run_command(const std::string& cmd, int* status) {
  const int rc = std::system(cmd.c_str());
  *status = rc == -1 ? -1 : WEXITSTATUS(rc);
  return cmd;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("stratope_acceptance_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Criteria.

constexpr std::uint64_t kInstanceSeed = 20240601;

Outcome criterion_unbiasedness() {
  const auto insts = instances(kInstanceSeed, 50);
  Rng rng(11);
  double worst = 0.0, worst_data = 0.0;
  for (const auto& inst : insts) {
    const auto p = make_problem(inst);
    const double J = true_value(p);
    const auto track = [&](double m) { worst = std::max(worst, std::abs(m - J)); };
    const auto data = sample_stratified(inst.env, inst.loggers, inst.sizes, rng.next());
    const auto track_data = [&](double lib, double own) { worst_data = std::max(worst_data, std::abs(lib - own)); };

    const auto f_is = is_score(p);
    track(stratified(p, f_is).mean);
    track_data(is_estimate(data, *inst.pi_e, *inst.pi_star()), data_mean(data, f_is));

    const auto f_avg = upsilon_score(p, p.rho);
    track(stratified(p, f_avg).mean);
    track_data(is_avg(data, *inst.pi_e, inst.loggers), data_mean(data, f_avg));

    for (int i = 0; i < 5; ++i) {
      const auto lambda = random_simplex(rng, p.loggers.size());
      const auto f = upsilon_score(p, lambda);
      track(stratified(p, f).mean);
      track_data(weighted_is(data, SimplexWeights(lambda), *inst.pi_e, inst.loggers), data_mean(data, f));
    }
    for (int i = 0; i < 20; ++i) {
      const auto h = random_constraint_weights(inst, rng);
      if (constraint_violation(p, h) > 1e-12) return {false, "random_constraint_weights violates the constraint"};
      const auto g = random_value_table(inst.env, rng);
      const auto f = gamma_score_of(p, h, g);
      track(stratified(p, f).mean);
      track_data(gamma_estimate(data, weight_function(h), ControlVariate::from_table(g), *inst.pi_e),
                 data_mean(data, f));
    }
  }
  const bool ok = worst <= 1e-10 && worst_data <= 1e-10;
  return {ok, "max |E - J| = " + fmt(worst) + ", max |estimator - score mean| = " + fmt(worst_data)};
}

Outcome criterion_orderings() {
  const auto insts = instances(kInstanceSeed, 50);
  double margin = std::numeric_limits<double>::infinity();
  double worst_lib_lambda = 0.0;
  for (const auto& inst : insts) {
    const auto p = make_problem(inst);
    const double v_is = stratified(p, is_score(p)).variance;
    const double v_avg = stratified(p, upsilon_score(p, p.rho)).variance;
    const auto lam = lambda_star(p);
    const double v_pw = stratified(p, upsilon_score(p, lam)).variance;
    margin = std::min({margin, v_avg - v_is, v_avg - v_pw});
    const auto lib = oracle_lambda_star(inst.env, *inst.pi_e, inst.loggers, inst.sizes);
    for (std::size_t k = 0; k < lam.size(); ++k) worst_lib_lambda = std::max(worst_lib_lambda, std::abs(lib[k] - lam[k]));
  }
  const bool ok = margin >= -1e-12 && worst_lib_lambda <= 1e-10;
  return {ok, "min margin = " + fmt(margin) + ", library lambda* deviation = " + fmt(worst_lib_lambda)};
}

Outcome criterion_dilemma() {
  const auto dir = scratch_dir("dilemma");
  const auto config = dir / "config.json";
  const auto out = dir / "dilemma.json";
  std::ofstream(config) << R"({"dilemma_replications": 1000000, "seed": 5})";
  int status = 0;
  run_command(std::string(STRATOPE_CLI_PATH) + " dilemma --config " + config.string() + " --out " +
                  out.string() + " > " + (dir / "stdout.txt").string(),
              &status);
  if (status != 0) return {false, "dilemma exited with status " + std::to_string(status)};
  const auto j = nlohmann::json::parse(slurp(out));
  std::string detail;
  bool ok = true;
  for (const char* key : {"is_better", "is_pw_better"}) {
    const auto inst = instance_from_json(j.at(key).at("instance"));
    const auto p = make_problem(inst);
    const double v_is = stratified(p, is_score(p)).variance;
    const double v_pw = stratified(p, upsilon_score(p, lambda_star(p))).variance;
    const double mc_is = j.at("monte_carlo").at(key).at("var_is").get<double>();
    const double mc_pw = j.at("monte_carlo").at(key).at("var_is_pw").get<double>();
    const bool is_wins = std::string(key) == "is_better";
    ok = ok && (is_wins ? v_is < v_pw : v_pw < v_is) && (is_wins ? mc_is < mc_pw : mc_pw < mc_is);
    detail += std::string(key) + ": exact " + fmt(v_is) + " vs " + fmt(v_pw) + ", MC " + fmt(mc_is) +
              " vs " + fmt(mc_pw) + "; ";
  }
  ok = ok && j.at("monte_carlo").at("replications").get<std::size_t>() == 1000000;
  return {ok, detail + "(IS vs IS-PW variances)"};
}

Outcome criterion_optimality() {
  const auto insts = instances(kInstanceSeed, 50);
  Rng rng(13);
  double worst_bound = 0.0, worst_lib = 0.0;
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& inst : insts) {
    const auto p = make_problem(inst);
    const auto& env = inst.env;
    // V* by enumeration: E_{pi_*}[(pi_e/pi_*)^2 sigma^2] + var[v].
    double noise = 0.0, v1 = 0.0, v2 = 0.0;
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      double vs = 0.0;
      for (std::size_t a = 0; a < env.num_actions(); ++a) {
        vs += p.pi_e[s][a] * env.q(s, a);
        if (p.pi_e[s][a] == 0.0) continue;
        const double w = p.pi_e[s][a] / p.pi_star[s][a];
        noise += env.context_prob(s) * p.pi_star[s][a] * w * w * env.q(s, a) * (env.r_max() - env.q(s, a));
      }
      v1 += env.context_prob(s) * vs;
      v2 += env.context_prob(s) * vs * vs;
    }
    const double v_star = noise + v2 - v1 * v1;
    const double best = stratified(p, gamma_score_of(p, inverse_star(p), env.q_table())).variance;
    worst_bound = std::max(worst_bound, std::abs(best - v_star / p.n));
    worst_lib = std::max(worst_lib, std::abs(efficiency_bound(env, *inst.pi_e, inst.loggers, p.rho) - v_star));
    for (int i = 0; i < 100; ++i) {
      const auto h = random_constraint_weights(inst, rng);
      const auto g = random_value_table(env, rng);
      margin = std::min(margin, stratified(p, gamma_score_of(p, h, g)).variance - best);
    }
  }
  const bool ok = worst_bound <= 1e-10 && worst_lib <= 1e-10 && margin >= -1e-12;
  return {ok, "|var - V*/n| = " + fmt(worst_bound) + ", library V* deviation = " + fmt(worst_lib) +
                  ", min var gap over random (h,g) = " + fmt(margin)};
}

Outcome criterion_stratified_vs_iid() {
  const auto insts = instances(kInstanceSeed, 50);
  Rng rng(17);
  double margin = std::numeric_limits<double>::infinity();
  double worst_equal = 0.0;
  std::size_t without_strict = 0, with_distinct = 0;
  for (const auto& inst : insts) {
    const auto p = make_problem(inst);
    const auto h = inverse_star(p);
    double best_gap = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto f = gamma_score_of(p, h, random_value_table(inst.env, rng));
      const double gap = iid(p, f).variance - stratified(p, f).variance;
      margin = std::min(margin, gap);
      best_gap = std::max(best_gap, gap);
    }
    const auto fq = gamma_score_of(p, h, inst.env.q_table());
    worst_equal = std::max(worst_equal, std::abs(iid(p, fq).variance - stratified(p, fq).variance));
    if (distinct_loggers(p)) {
      ++with_distinct;
      if (best_gap <= 1e-6) ++without_strict;
    }
  }
  const bool ok = margin >= -1e-12 && worst_equal <= 1e-10 && without_strict == 0;
  return {ok, "min(iid - stratified) = " + fmt(margin) + ", |gap| at g=q = " + fmt(worst_equal) + ", " +
                  std::to_string(with_distinct - without_strict) + "/" + std::to_string(with_distinct) +
                  " instances with a strict gap"};
}

// Four one-hot contexts and three actions: logistic per-action regression and a
// multinomial logit over one-hot features both contain the truth.
struct SmoothProblem {
  DiscreteEnvironment env = DiscreteEnvironment::with_one_hot_contexts(
      {0.2, 0.3, 0.25, 0.25},
      {{0.7, 0.3, 0.5}, {0.2, 0.6, 0.4}, {0.5, 0.8, 0.3}, {0.35, 0.45, 0.9}});
  std::vector<PolicyPtr> loggers{
      std::make_shared<const TabularPolicy>(Table{{0.6, 0.2, 0.2}, {0.3, 0.4, 0.3}, {0.5, 0.25, 0.25}, {0.2, 0.2, 0.6}}),
      std::make_shared<const TabularPolicy>(Table{{0.2, 0.5, 0.3}, {0.5, 0.2, 0.3}, {0.15, 0.7, 0.15}, {0.4, 0.35, 0.25}})};
  PolicyPtr pi_e = std::make_shared<const TabularPolicy>(
      Table{{0.8, 0.1, 0.1}, {0.1, 0.7, 0.2}, {0.2, 0.6, 0.2}, {0.1, 0.1, 0.8}});
};

FitConfig well_specified_fit() { return FitConfig{1.5, 3000, 1e-6, 0, false}; }

Outcome criterion_efficiency() {
  const SmoothProblem sp;
  const std::vector<std::size_t> sizes{8000, 12000};
  const std::vector<double> rho{0.4, 0.6};
  const double n = 20000.0;
  const double J = policy_value_exact(sp.env, *sp.pi_e);
  const double v_star = efficiency_bound(sp.env, *sp.pi_e, sp.loggers, rho);
  const auto q_fitter = make_q_fitter(3, well_specified_fit());
  const auto b_fitter = make_behavior_fitter(3, well_specified_fit());
  double sq = 0.0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    const auto data = sample_stratified(sp.env, sp.loggers, sizes, 600000 + static_cast<std::uint64_t>(rep));
    CrossFitOptions options;
    options.seed = static_cast<std::uint64_t>(rep);
    const double e = dr_estimated_propensity(data, *sp.pi_e, b_fitter, q_fitter, options) - J;
    sq += e * e;
  }
  const double scaled = n * sq / reps;
  const double rel = scaled / v_star - 1.0;
  return {std::abs(rel) <= 0.15, "n*MSE = " + fmt(scaled) + ", V* = " + fmt(v_star) + ", relative deviation " + fmt(rel)};
}

Outcome criterion_double_robustness() {
  const SmoothProblem sp;
  const std::vector<std::size_t> sizes{2000, 3000};
  const double J = policy_value_exact(sp.env, *sp.pi_e);
  const auto star = marginal_policy(sp.loggers, std::vector<double>{0.4, 0.6});
  const PolicyPtr wrong_star = std::make_shared<const UniformPolicy>(3);
  const auto good_q = make_q_fitter(3, well_specified_fit());
  const QFitter wrong_q = [](const StratifiedDataset&) { return ControlVariate::constant(3, 0.9); };
  const BehaviorFitter true_b = [&](const StratifiedDataset&) { return star; };
  const BehaviorFitter wrong_b = [&](const StratifiedDataset&) { return wrong_star; };
  const auto bias = [&](const BehaviorFitter& b, const QFitter& q) {
    Running st;
    for (int rep = 0; rep < 500; ++rep) {
      const auto data = sample_stratified(sp.env, sp.loggers, sizes, 700000 + static_cast<std::uint64_t>(rep));
      CrossFitOptions options;
      options.seed = static_cast<std::uint64_t>(rep);
      st.add(dr_estimated_propensity(data, *sp.pi_e, b, q, options));
    }
    return std::pair{st.mean - J, st.se()};
  };
  const auto [b_q, se_q] = bias(true_b, wrong_q);
  const auto [b_pi, se_pi] = bias(wrong_b, good_q);
  const auto [b_both, se_both] = bias(wrong_b, wrong_q);
  const bool ok = std::abs(b_q) < 3.0 * se_q && std::abs(b_pi) < 3.0 * se_pi && std::abs(b_both) > 5.0 * se_both;
  return {ok, "bias/SE: wrong q " + fmt(b_q / se_q) + ", wrong pi_* " + fmt(b_pi / se_pi) + ", both wrong " +
                  fmt(b_both / se_both)};
}

// Three featureless contexts, two loggers at ratio 0.1 and an intercept-only
// class that cannot represent q. Pooling the strata and stratifying them lead
// to different best constants.
struct SmrdrFixture {
  DiscreteEnvironment env{std::vector<Context>(3), {0.02, 0.9, 0.08}, {{0.05, 0.95}, {0.95, 0.05}, {0.05, 0.95}}};
  std::vector<PolicyPtr> loggers{
      std::make_shared<const TabularPolicy>(Table{{0.02, 0.98}, {0.02, 0.98}, {0.02, 0.98}}),
      std::make_shared<const TabularPolicy>(Table{{0.02, 0.98}, {0.98, 0.02}, {0.98, 0.02}})};
  PolicyPtr pi_e = std::make_shared<const TabularPolicy>(Table{{0.5, 0.5}, {0.8, 0.2}, {0.0, 1.0}});
  QClass qclass{2, 0, 1.0};
};

Outcome criterion_smrdr() {
  std::string detail;
  // (a) Stratified objective at the SMRDR and MRDR solutions on several fixtures.
  struct Case {
    DiscreteEnvironment env;
    std::vector<PolicyPtr> loggers;
    PolicyPtr pi_e;
    QClass qclass;
    std::vector<std::size_t> sizes;
  };
  std::vector<Case> cases;
  const SmrdrFixture fx;
  for (const auto& sizes : std::vector<std::vector<std::size_t>>{{100, 1000}, {200, 2000}, {50, 500}}) {
    cases.push_back({fx.env, fx.loggers, fx.pi_e, fx.qclass, sizes});
  }
  {
    // One-dimensional features with a logistic class that misses the curvature of q.
    std::vector<Context> ctx(5);
    Table q(5, std::vector<double>(2));
    for (std::size_t s = 0; s < 5; ++s) {
      const double x = -1.0 + 0.5 * static_cast<double>(s);
      ctx[s].features = {x};
      q[s] = {0.3 + 0.4 * x * x, 0.7 - 0.3 * x * x};
    }
    DiscreteEnvironment env(ctx, {0.2, 0.2, 0.2, 0.2, 0.2}, q);
    std::vector<PolicyPtr> loggers{
        std::make_shared<const TabularPolicy>(Table(5, std::vector<double>{0.25, 0.75})),
        std::make_shared<const TabularPolicy>(Table(5, std::vector<double>{0.7, 0.3}))};
    PolicyPtr pe = std::make_shared<const TabularPolicy>(Table(5, std::vector<double>{0.6, 0.4}));
    for (const auto& sizes : std::vector<std::vector<std::size_t>>{{100, 1000}, {300, 300}}) {
      cases.push_back({env, loggers, pe, QClass{2, 1, 1.0}, sizes});
    }
  }
  // The comparison concerns the minimisers, so both fits get a long budget.
  ControlVariateFitConfig long_fit;
  long_fit.fit.iterations = 3000;
  long_fit.starts = 5;
  double worst_a = std::numeric_limits<double>::infinity();
  std::size_t fixtures_a = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& cs = cases[c];
    double total = 0.0;
    for (auto sz : cs.sizes) total += static_cast<double>(sz);
    std::vector<double> rho;
    for (auto sz : cs.sizes) rho.push_back(static_cast<double>(sz) / total);
    const auto star = marginal_policy(cs.loggers, rho);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto data = sample_stratified(cs.env, cs.loggers, cs.sizes, 31000 + 10 * c + seed);
      const auto s_fit = smrdr_fit(data, cs.qclass, *cs.pi_e, *star, long_fit);
      const auto m_fit = mrdr_fit(data, cs.qclass, *cs.pi_e, *star, long_fit);
      const VarianceObjective strat(data, cs.qclass, *cs.pi_e, *star, VarianceObjectiveKind::kStratified);
      const double gap = strat.value(m_fit.model.params()) - strat.value(s_fit.model.params());
      worst_a = std::min(worst_a, gap / std::max(1e-300, std::abs(strat.value(m_fit.model.params()))));
      ++fixtures_a;
    }
  }
  const bool ok_a = worst_a >= -1e-9;
  detail += "(a) " + std::to_string(fixtures_a) + " fixtures, min relative objective gap " + fmt(worst_a);

  // (b) Replication RMSE at ratio 0.1 on the hand fixture.
  const std::vector<std::size_t> sizes{100, 1000};
  const std::vector<double> rho{100.0 / 1100.0, 1000.0 / 1100.0};
  const auto star = marginal_policy(fx.loggers, rho);
  const double J = policy_value_exact(fx.env, *fx.pi_e);
  const int reps = 1000;
  std::vector<double> es, em;
  for (int rep = 0; rep < reps; ++rep) {
    const auto data = sample_stratified(fx.env, fx.loggers, sizes, 41000 + static_cast<std::uint64_t>(rep));
    CrossFitOptions options;
    options.seed = static_cast<std::uint64_t>(rep);
    es.push_back(smrdr_estimate(data, fx.qclass, *fx.pi_e, star, {}, options) - J);
    em.push_back(mrdr_estimate(data, fx.qclass, *fx.pi_e, star, {}, options) - J);
  }
  double ms = 0.0, mm = 0.0;
  for (int i = 0; i < reps; ++i) {
    ms += es[i] * es[i] / reps;
    mm += em[i] * em[i] / reps;
  }
  const double rs = std::sqrt(ms), rm = std::sqrt(mm);
  // Paired delta-method standard error of rmse_MRDR - rmse_SMRDR.
  Running diff;
  for (int i = 0; i < reps; ++i) diff.add(em[i] * em[i] / (2.0 * rm) - es[i] * es[i] / (2.0 * rs));
  const double se = diff.se();
  const bool ok_b = rs + 2.0 * se <= rm;
  detail += "; (b) RMSE SMRDR " + fmt(rs) + " vs MRDR " + fmt(rm) + " (SE of difference " + fmt(se) + ")";
  return {ok_a && ok_b, detail};
}

double relative_gradient_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  return (analytic - numeric).norm() / std::max({1e-8, analytic.norm(), numeric.norm()});
}

Outcome criterion_gradients() {
  Rng rng(23);
  std::map<std::string, double> worst;
  const auto check = [&](const std::string& name, Eigen::VectorXd theta,
                         const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& g) {
    Eigen::VectorXd fd(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd hi = theta, lo = theta;
      const double step = 1e-5 * std::max(1.0, std::abs(theta(i)));
      hi(i) += step;
      lo(i) -= step;
      fd(i) = (f(hi) - f(lo)) / (2.0 * step);
    }
    worst[name] = std::max(worst[name], relative_gradient_error(g, fd));
  };
  const auto flat = [](const Eigen::MatrixXd& m) { return Eigen::VectorXd(m.reshaped()); };

  const std::size_t d = 3, A = 3;
  std::vector<BinaryRow> brows(25);
  for (auto& r : brows) {
    r.x = Eigen::VectorXd(d + 1);
    r.x(0) = 1.0;
    for (std::size_t j = 1; j <= d; ++j) r.x(static_cast<Eigen::Index>(j)) = rng.normal();
    r.target = rng.uniform();
    r.weight = 1.0 + static_cast<double>(rng.below(4));
  }
  std::vector<MultinomialRow> mrows(25);
  for (auto& r : mrows) {
    r.x = Eigen::VectorXd(d + 1);
    r.x(0) = 1.0;
    for (std::size_t j = 1; j <= d; ++j) r.x(static_cast<Eigen::Index>(j)) = rng.normal();
    r.counts = Eigen::VectorXd(A);
    for (std::size_t a = 0; a < A; ++a) r.counts(static_cast<Eigen::Index>(a)) = static_cast<double>(rng.below(5));
    r.counts(0) += 1.0;
    r.weight = r.counts.sum();
  }
  const BinaryLoss logistic(brows, Link::kLogistic, 0.5);
  const BinaryLoss squared(brows, Link::kIdentity, 0.5);
  const MultinomialLoss multinomial(mrows, A, 0.5);

  // A featured stratified dataset for the variance objectives.
  std::vector<Context> ctx(6);
  Table q(6, std::vector<double>(A));
  for (std::size_t s = 0; s < 6; ++s) {
    ctx[s].features = {rng.normal(), rng.normal()};
    for (std::size_t a = 0; a < A; ++a) q[s][a] = rng.uniform(0.1, 0.9);
  }
  DiscreteEnvironment env(ctx, std::vector<double>(6, 1.0 / 6.0), q);
  std::vector<PolicyPtr> loggers;
  for (int k = 0; k < 3; ++k) {
    Table t(6);
    for (auto& row : t) row = random_simplex(rng, A);
    for (auto& row : t) {
      for (double& v : row) v = 0.05 + 0.85 * v;
    }
    loggers.push_back(std::make_shared<const TabularPolicy>(t));
  }
  Table pe_t(6);
  for (auto& row : pe_t) row = random_simplex(rng, A);
  const TabularPolicy pe(pe_t);
  const std::vector<std::size_t> sizes{30, 50, 20};
  const auto star = marginal_policy(loggers, std::vector<double>{0.3, 0.5, 0.2});
  const auto data = sample_stratified(env, loggers, sizes, 99);
  const QClass qclass{A, 2, 1.0};
  const VarianceObjective strat(data, qclass, pe, *star, VarianceObjectiveKind::kStratified);
  const VarianceObjective pooled(data, qclass, pe, *star, VarianceObjectiveKind::kIid);

  for (int point = 0; point < 20; ++point) {
    Eigen::VectorXd t(static_cast<Eigen::Index>(d + 1));
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = 1.5 * rng.normal();
    check("logistic loss", t, [&](const Eigen::VectorXd& x) { return logistic.value(x); }, logistic.gradient(t));
    check("squared loss", t, [&](const Eigen::VectorXd& x) { return squared.value(x); }, squared.gradient(t));

    Eigen::MatrixXd tm(A, d + 1);
    for (Eigen::Index i = 0; i < tm.size(); ++i) tm.data()[i] = 1.5 * rng.normal();
    check("multinomial loss", flat(tm),
          [&](const Eigen::VectorXd& x) { return multinomial.value(x.reshaped(tm.rows(), tm.cols())); },
          flat(multinomial.gradient(tm)));

    Eigen::MatrixXd tv(A, 3);
    for (Eigen::Index i = 0; i < tv.size(); ++i) tv.data()[i] = 1.5 * rng.normal();
    for (const auto* obj : {&strat, &pooled}) {
      const std::string name = obj == &strat ? "stratified objective" : "iid objective";
      check(name, flat(tv), [&](const Eigen::VectorXd& x) { return obj->value(x.reshaped(tv.rows(), tv.cols())); },
            flat(obj->gradient(tv)));
    }
  }
  bool ok = worst.size() == 5;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err <= 1e-4;
    detail += name + " " + fmt(err) + "; ";
  }
  return {ok, detail + "(max relative error over 20 points)"};
}

Outcome criterion_pipeline() {
  const auto dir = scratch_dir("bench");
  const auto config = dir / "config.json";
  std::ofstream(config) << R"({"replications": 200, "seed": 1})";
  std::vector<std::filesystem::path> outs{dir / "run1", dir / "run2"};
  for (const auto& out : outs) {
    int status = 0;
    run_command(std::string(STRATOPE_CLI_PATH) + " bench --no-timing --config " + config.string() + " --out " +
                    out.string() + " > " + (dir / "stdout.txt").string(),
                &status);
    if (status != 0) return {false, "bench exited with status " + std::to_string(status)};
  }
  std::size_t compared = 0;
  for (const auto& entry : std::filesystem::directory_iterator(outs[0])) {
    if (entry.path().extension() != ".csv") continue;
    if (slurp(entry.path()) != slurp(outs[1] / entry.path().filename())) {
      return {false, entry.path().filename().string() + " differs between runs"};
    }
    ++compared;
  }

  // estimator -> (relative RMSE, SE) at ratio 0.1.
  std::map<std::string, std::pair<double, double>> at_low;
  std::set<double> ratios;
  std::set<std::string> names;
  std::ifstream in(outs[0] / "results.csv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const double r = std::stod(cells.at(1));
    ratios.insert(r);
    names.insert(cells.at(0));
    if (std::stoul(cells.at(4)) != 200) return {false, cells.at(0) + " has failed replications"};
    if (std::abs(r - 0.1) < 1e-12) at_low[cells.at(0)] = {std::stod(cells.at(2)), std::stod(cells.at(3))};
  }
  const std::vector<std::string> is_family{"IS", "IS-Avg", "IS-PW"};
  const std::vector<std::string> dr_family{"DR", "DR-Avg", "DR-PW", "SMRDR", "MRDR"};
  if (names.size() != 8 || ratios.size() != 7 || at_low.size() != 8) return {false, "unexpected results.csv layout"};
  double worst = std::numeric_limits<double>::infinity();
  std::string worst_pair;
  for (const auto& d : dr_family) {
    for (const auto& i : is_family) {
      const auto [rd, sd] = at_low.at(d);
      const auto [ri, si] = at_low.at(i);
      const double slack = (ri - rd) - 2.0 * std::hypot(sd, si);
      if (slack < worst) {
        worst = slack;
        worst_pair = d + " vs " + i;
      }
    }
  }
  return {worst > 0.0, std::to_string(compared) + " CSVs byte-identical; tightest pair at ratio 0.1 " + worst_pair +
                           " with slack " + fmt(worst) + " beyond 2 SE"};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "oracle unbiasedness", criterion_unbiasedness},
      {2, "variance orderings of IS, IS-Avg and IS-PW", criterion_orderings},
      {3, "dilemma reproduction", criterion_dilemma},
      {4, "optimality of (1/pi_*, q)", criterion_optimality},
      {5, "stratified versus iid variance", criterion_stratified_vs_iid},
      {6, "efficiency of DR with estimated pi_*", criterion_efficiency},
      {7, "double robustness", criterion_double_robustness},
      {8, "SMRDR versus MRDR", criterion_smrdr},
      {9, "gradient checks", criterion_gradients},
      {10, "benchmark pipeline end to end", criterion_pipeline},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all_passed = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all_passed = all_passed && out.passed;
    std::cout << (out.passed ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << out.detail
              << " [" << fmt(secs) << " s]" << std::endl;
  }
  return all_passed ? 0 : 1;
}
