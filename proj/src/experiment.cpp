#include "stratope/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <Eigen/Core>

#include "stratope/errors.hpp"
#include "stratope/rng.hpp"
#include "stratope/serialization.hpp"

#ifndef STRATOPE_GIT_DESCRIBE
#define STRATOPE_GIT_DESCRIBE "unknown"
#endif

namespace stratope {

using nlohmann::json;

const std::vector<std::string>& standard_estimators() {
  static const std::vector<std::string> names{"IS", "IS-Avg", "IS-PW", "DR",
                                              "DR-Avg", "DR-PW", "SMRDR", "MRDR"};
  return names;
}

bool is_known_estimator(const std::string& name) {
  const auto& names = standard_estimators();
  return name == "Oracle" || std::find(names.begin(), names.end(), name) != names.end();
}

void ExperimentConfig::validate() const {
  if (dataset_path && synthetic) throw ConfigError("give either a dataset path or a synthetic fixture");
  if (ratios.empty()) throw ConfigError("ratio grid is empty");
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("ratios must be positive and finite");
  }
  if (replications < 1) throw ConfigError("replications must be at least 1");
  if (estimators.empty()) throw ConfigError("estimator list is empty");
  for (const auto& e : estimators) {
    if (!is_known_estimator(e)) throw ConfigError("unknown estimator '" + e + "'");
  }
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (!(propensity_floor >= 0.0 && propensity_floor < 1.0)) throw ConfigError("propensity_floor must lie in [0, 1)");
  if (max_weight && !(*max_weight > 0.0)) throw ConfigError("max_weight must be positive");
  if (!(variance.floor >= 0.0)) throw ConfigError("variance floor must be nonnegative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (cv_fit.starts < 1) throw ConfigError("cv_fit.starts must be at least 1");
  try {
    policy_fit.validate();
    q_fit.validate();
    behavior_fit.validate();
    cv_fit.fit.validate();
  } catch (const ConfigError& e) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

// JSON config ----------------------------------------------------------------

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

std::string path_of(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

void read_uint(const json& obj, const char* key, std::uint64_t& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(path_of(where, key) + ": expected a nonnegative integer");
  out = v.get<std::uint64_t>();
}

void read_size(const json& obj, const char* key, std::size_t& out, const std::string& where) {
  std::uint64_t v = out;
  read_uint(obj, key, v, where);
  out = static_cast<std::size_t>(v);
}

void read_double(const json& obj, const char* key, double& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(path_of(where, key) + ": expected a number");
  out = v.get<double>();
}

void read_bool(const json& obj, const char* key, bool& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(path_of(where, key) + ": expected a boolean");
  out = v.get<bool>();
}

std::vector<double> read_doubles(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(where + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<std::size_t> read_sizes(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (const auto& x : v) {
    if (!x.is_number_unsigned()) throw ConfigError(where + ": expected an array of nonnegative integers");
    out.push_back(x.get<std::size_t>());
  }
  return out;
}

std::vector<std::string> read_strings(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (!x.is_string()) throw ConfigError(where + ": expected an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

FitConfig read_fit(const json& obj, FitConfig fit, const std::string& where) {
  check_keys(obj, {"learning_rate", "iterations", "l2_penalty", "seed", "standardize"}, where);
  read_double(obj, "learning_rate", fit.learning_rate, where);
  read_size(obj, "iterations", fit.iterations, where);
  read_double(obj, "l2_penalty", fit.l2_penalty, where);
  read_uint(obj, "seed", fit.seed, where);
  read_bool(obj, "standardize", fit.standardize, where);
  return fit;
}

json fit_to_json(const FitConfig& fit) {
  return {{"learning_rate", fit.learning_rate},
          {"iterations", fit.iterations},
          {"l2_penalty", fit.l2_penalty},
          {"seed", fit.seed},
          {"standardize", fit.standardize}};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& value) {
  check_keys(value,
             {"dataset", "synthetic", "ratios", "replications", "seed", "estimators", "folds",
              "train_fraction", "known_loggers", "policy_fit", "q_fit", "behavior_fit", "cv_fit",
              "propensity_floor", "max_weight", "variance", "timing", "threads", "output_dir"},
             "config");
  ExperimentConfig c;
  const std::string w;
  if (value.contains("dataset")) {
    const auto& d = value.at("dataset");
    check_keys(d, {"path", "label_column"}, "dataset");
    if (!d.contains("path") || !d.at("path").is_string()) throw ConfigError("dataset.path: expected a string");
    c.dataset_path = d.at("path").get<std::string>();
    if (d.contains("label_column")) {
      const auto& l = d.at("label_column");
      if (l.is_string()) {
        c.label_column = l.get<std::string>();
      } else if (l.is_number_unsigned()) {
        c.label_column = l.get<std::size_t>();
      } else {
        throw ConfigError("dataset.label_column: expected a name or a zero-based index");
      }
    }
  }
  if (value.contains("synthetic")) {
    const auto& s = value.at("synthetic");
    check_keys(s, {"classes", "dim", "rows", "separation", "seed"}, "synthetic");
    SyntheticFixtureSpec spec;
    read_size(s, "classes", spec.classes, "synthetic");
    read_size(s, "dim", spec.dim, "synthetic");
    read_size(s, "rows", spec.rows, "synthetic");
    read_double(s, "separation", spec.separation, "synthetic");
    read_uint(s, "seed", spec.seed, "synthetic");
    c.synthetic = spec;
  }
  if (value.contains("ratios")) c.ratios = read_doubles(value.at("ratios"), "ratios");
  read_size(value, "replications", c.replications, w);
  read_uint(value, "seed", c.seed, w);
  if (value.contains("estimators")) c.estimators = read_strings(value.at("estimators"), "estimators");
  read_size(value, "folds", c.folds, w);
  read_double(value, "train_fraction", c.train_fraction, w);
  read_bool(value, "known_loggers", c.known_loggers, w);
  if (value.contains("policy_fit")) c.policy_fit = read_fit(value.at("policy_fit"), c.policy_fit, "policy_fit");
  if (value.contains("q_fit")) c.q_fit = read_fit(value.at("q_fit"), c.q_fit, "q_fit");
  if (value.contains("behavior_fit")) {
    c.behavior_fit = read_fit(value.at("behavior_fit"), c.behavior_fit, "behavior_fit");
  }
  if (value.contains("cv_fit")) {
    const auto& cv = value.at("cv_fit");
    check_keys(cv, {"learning_rate", "iterations", "l2_penalty", "seed", "standardize", "starts", "init_scale"},
               "cv_fit");
    json fit_part = json::object();
    for (const char* key : {"learning_rate", "iterations", "l2_penalty", "seed", "standardize"}) {
      if (cv.contains(key)) fit_part[key] = cv.at(key);
    }
    c.cv_fit.fit = read_fit(fit_part, c.cv_fit.fit, "cv_fit");
    read_size(cv, "starts", c.cv_fit.starts, "cv_fit");
    read_double(cv, "init_scale", c.cv_fit.init_scale, "cv_fit");
  }
  read_double(value, "propensity_floor", c.propensity_floor, w);
  if (value.contains("max_weight") && !value.at("max_weight").is_null()) {
    double m = 0.0;
    read_double(value, "max_weight", m, w);
    c.max_weight = m;
  }
  if (value.contains("variance")) {
    const auto& v = value.at("variance");
    check_keys(v, {"bessel", "floor"}, "variance");
    read_bool(v, "bessel", c.variance.bessel, "variance");
    read_double(v, "floor", c.variance.floor, "variance");
  }
  read_bool(value, "timing", c.timing, w);
  read_size(value, "threads", c.threads, w);
  if (value.contains("output_dir")) {
    if (!value.at("output_dir").is_string()) throw ConfigError("output_dir: expected a string");
    c.output_dir = value.at("output_dir").get<std::string>();
  }
  c.validate();
  return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json out;
  if (c.dataset_path) {
    json label = std::holds_alternative<std::string>(c.label_column)
                     ? json(std::get<std::string>(c.label_column))
                     : json(std::get<std::size_t>(c.label_column));
    out["dataset"] = {{"path", c.dataset_path->string()}, {"label_column", label}};
  }
  const SyntheticFixtureSpec spec = c.synthetic.value_or(SyntheticFixtureSpec{});
  if (!c.dataset_path) {
    out["synthetic"] = {{"classes", spec.classes},
                        {"dim", spec.dim},
                        {"rows", spec.rows},
                        {"separation", spec.separation},
                        {"seed", spec.seed}};
  }
  out["ratios"] = c.ratios;
  out["replications"] = c.replications;
  out["seed"] = c.seed;
  out["estimators"] = c.estimators;
  out["folds"] = c.folds;
  out["train_fraction"] = c.train_fraction;
  out["known_loggers"] = c.known_loggers;
  out["policy_fit"] = fit_to_json(c.policy_fit);
  out["q_fit"] = fit_to_json(c.q_fit);
  out["behavior_fit"] = fit_to_json(c.behavior_fit);
  json cv = fit_to_json(c.cv_fit.fit);
  cv["starts"] = c.cv_fit.starts;
  cv["init_scale"] = c.cv_fit.init_scale;
  out["cv_fit"] = cv;
  out["propensity_floor"] = c.propensity_floor;
  out["max_weight"] = c.max_weight ? json(*c.max_weight) : json(nullptr);
  out["variance"] = {{"bessel", c.variance.bessel}, {"floor", c.variance.floor}};
  out["timing"] = c.timing;
  out["threads"] = c.threads;
  out["output_dir"] = c.output_dir.string();
  return out;
}

// Metrics --------------------------------------------------------------------

double relative_rmse(double true_value, std::span<const double> estimates) {
  if (true_value == 0.0) throw std::domain_error("relative RMSE is undefined for a zero true value");
  if (estimates.empty()) throw std::invalid_argument("relative RMSE needs at least one estimate");
  double ss = 0.0;
  for (double e : estimates) ss += (true_value - e) * (true_value - e);
  return std::sqrt(ss) / (std::abs(true_value) * std::sqrt(static_cast<double>(estimates.size())));
}

double relative_rmse_se(double true_value, std::span<const double> estimates) {
  if (true_value == 0.0) throw std::domain_error("relative RMSE is undefined for a zero true value");
  if (estimates.empty()) throw std::invalid_argument("relative RMSE needs at least one estimate");
  const double m = static_cast<double>(estimates.size());
  if (estimates.size() < 2) return 0.0;
  double mse = 0.0;
  for (double e : estimates) mse += (true_value - e) * (true_value - e);
  mse /= m;
  if (mse == 0.0) return 0.0;
  double var = 0.0;
  for (double e : estimates) {
    const double sq = (true_value - e) * (true_value - e);
    var += (sq - mse) * (sq - mse);
  }
  var /= m - 1.0;
  const double se_mse = std::sqrt(var / m);
  return se_mse / (2.0 * std::sqrt(mse) * std::abs(true_value));
}

std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t ratio_index,
                               std::size_t replication) {
  return splitmix64(splitmix64(base_seed ^ splitmix64(ratio_index + 1)) + replication);
}

// Benchmark ------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct BenchSetup {
  const ExperimentConfig* config;
  ClassificationDataset eval;
  PolicySuite suite;
  double true_value;
  std::size_t num_actions;
  std::size_t dim;
};

struct Outcome {
  double value = 0.0;
  bool ok = false;
  std::string error;
  double ms = 0.0;
};

bool is_family(const std::string& name) { return name == "IS" || name == "IS-Avg" || name == "IS-PW"; }

// One replication: a fresh stratified dataset, one fold plan shared by every
// estimator, nuisances fit once per fold and reused.
std::vector<Outcome> run_replication(const BenchSetup& st, double ratio, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  const ExperimentConfig& cfg = *st.config;
  const std::size_t E = cfg.estimators.size();
  std::vector<Outcome> out(E);
  const Rng seeds(seed);

  StratifiedDataset data;
  std::optional<FoldPlan> plan;
  try {
    data = partition_eval_by_ratio(st.eval, ratio, *st.suite.logger1, *st.suite.logger2,
                                   seeds.split(0).split(0).next());
    plan = make_fold_plan(data, cfg.folds, seeds.split(1).split(0).next());
  } catch (const std::exception& e) {
    for (auto& o : out) o.error = e.what();
    return out;
  }
  const Policy& pi_e = *st.suite.evaluation;
  const auto sizes = data.sizes();
  const std::vector<PolicyPtr> true_loggers{st.suite.logger1, st.suite.logger2};
  const PolicyPtr true_star = marginal_policy(true_loggers, data.proportions());
  const double n = static_cast<double>(data.total());
  const QClass qclass{st.num_actions, st.dim, 1.0};

  std::vector<double> weighted(E, 0.0);
  std::vector<bool> failed(E, false);

  auto timed = [&](std::size_t e, auto&& body) {
    const auto t0 = Clock::now();
    try {
      body();
    } catch (const std::exception& ex) {
      failed[e] = true;
      if (out[e].error.empty()) out[e].error = ex.what();
    }
    out[e].ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  // With known loggers the IS family has no nuisance and is computed on the full data.
  for (std::size_t e = 0; e < E; ++e) {
    const auto& name = cfg.estimators[e];
    if (name == "Oracle") {
      out[e].value = st.true_value;
      out[e].ok = true;
    } else if (cfg.known_loggers && is_family(name)) {
      timed(e, [&] {
        if (name == "IS") {
          out[e].value = is_estimate(data, pi_e, *true_star);
        } else if (name == "IS-Avg") {
          out[e].value = is_avg(data, pi_e, true_loggers);
        } else {
          out[e].value = is_pw_feasible(data, pi_e, true_loggers, cfg.variance);
        }
      });
      out[e].ok = !failed[e];
    }
  }

  for (std::size_t z = 0; z < plan->folds(); ++z) {
    const StratifiedDataset eval = plan->eval_part(data, z);
    const StratifiedDataset train = plan->train_part(data, z);
    const double fold_n = static_cast<double>(eval.total());

    std::optional<ControlVariate> q_hat;
    std::optional<std::vector<PolicyPtr>> logger_hat;
    PolicyPtr star_hat;
    auto q = [&]() -> const ControlVariate& {
      if (!q_hat) q_hat = fit_q(train, st.num_actions, cfg.q_fit).as_control_variate();
      return *q_hat;
    };
    auto loggers = [&]() -> const std::vector<PolicyPtr>& {
      if (cfg.known_loggers) return true_loggers;
      if (!logger_hat) {
        std::vector<PolicyPtr> fitted;
        for (std::size_t k = 0; k < train.num_strata(); ++k) {
          fitted.push_back(fit_behavior(train.stratum(k), st.num_actions, cfg.behavior_fit).policy());
        }
        logger_hat = std::move(fitted);
      }
      return *logger_hat;
    };
    auto star = [&]() -> PolicyPtr {
      if (cfg.known_loggers) return true_star;
      if (!star_hat) star_hat = fit_behavior(train, st.num_actions, cfg.behavior_fit).policy();
      return star_hat;
    };
    const double floor = cfg.known_loggers ? 0.0 : cfg.propensity_floor;
    const ControlVariate zero = ControlVariate::zero(st.num_actions);

    for (std::size_t e = 0; e < E; ++e) {
      const auto& name = cfg.estimators[e];
      if (failed[e] || name == "Oracle" || (cfg.known_loggers && is_family(name))) continue;
      timed(e, [&] {
        WeightFunction h;
        std::optional<ControlVariate> g;
        if (name == "IS" || name == "DR") {
          h = inverse_propensity_weights(star(), floor, cfg.max_weight);
          g = name == "IS" ? zero : q();
        } else if (name == "IS-Avg" || name == "DR-Avg") {
          h = per_logger_weights(loggers(), floor, cfg.max_weight);
          g = name == "IS-Avg" ? zero : q();
        } else if (name == "IS-PW") {
          const auto var = per_stratum_is_variances(train, pi_e, loggers(), cfg.variance.bessel);
          h = simplex_logger_weights(precision_weights(train.sizes(), var, cfg.variance.floor), sizes,
                                     loggers(), floor, cfg.max_weight);
          g = zero;
        } else if (name == "DR-PW") {
          const auto var = per_stratum_dr_variances(train, pi_e, loggers(), q(), cfg.variance.bessel, floor);
          h = simplex_logger_weights(precision_weights(train.sizes(), var, cfg.variance.floor), sizes,
                                     loggers(), floor, cfg.max_weight);
          g = q();
        } else {
          const auto kind = name == "SMRDR" ? VarianceObjectiveKind::kStratified : VarianceObjectiveKind::kIid;
          ControlVariateFitConfig cv = cfg.cv_fit;
          cv.fit.seed = seeds.split(2).split(z).next() ^ cfg.cv_fit.fit.seed;
          const VarianceObjective objective(train, qclass, pi_e, *star(), kind);
          h = inverse_propensity_weights(star(), floor, cfg.max_weight);
          g = fit_control_variate(objective, cv).model.as_control_variate();
        }
        const double value = gamma_estimate(eval, h, *g, pi_e);
        if (!std::isfinite(value)) throw std::domain_error("nonfinite estimate");
        weighted[e] += fold_n * value;
      });
    }
  }

  for (std::size_t e = 0; e < E; ++e) {
    const auto& name = cfg.estimators[e];
    if (name == "Oracle" || (cfg.known_loggers && is_family(name))) continue;
    out[e].ok = !failed[e];
    if (out[e].ok) out[e].value = weighted[e] / n;
  }
  return out;
}

ClassificationDataset load_benchmark_data(const ExperimentConfig& config) {
  if (config.dataset_path) {
    try {
      return load_csv_dataset(*config.dataset_path, config.label_column);
    } catch (const std::exception& e) {
      throw ConfigError("cannot load dataset: " + std::string(e.what()));
    }
  }
  return make_synthetic_fixture(config.synthetic.value_or(SyntheticFixtureSpec{}));
}

}  // namespace

BenchmarkResult run_benchmark(const ExperimentConfig& config) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const ClassificationDataset data = load_benchmark_data(config);
  if (data.num_classes() < 2) throw ConfigError("dataset needs at least two classes");

  const Rng root(config.seed);
  const std::uint64_t split_seed = root.split(0xA11).next();
  ExperimentSplit split = split_train_eval(data, split_seed, config.train_fraction);
  FitConfig policy_fit = config.policy_fit;
  const auto det = train_det_policy(split.train, policy_fit);

  BenchSetup st{&config, std::move(split.eval), build_policy_suite(det), 0.0, data.num_classes(),
                data.dim()};
  st.true_value = policy_accuracy(*det, st.eval);
  if (st.true_value == 0.0) throw ConfigError("evaluation policy has zero accuracy; relative RMSE undefined");
  for (double ratio : config.ratios) {
    const std::size_t n1 = stratum_one_size(st.eval.size(), ratio);
    if (n1 == 0 || n1 >= st.eval.size()) {
      throw ConfigError("ratio " + fmt(ratio) + " leaves an empty stratum on " +
                        std::to_string(st.eval.size()) + " evaluation rows");
    }
  }

  const std::size_t R = config.ratios.size();
  const std::size_t M = config.replications;
  const std::size_t tasks = R * M;
  std::vector<std::vector<Outcome>> outcomes(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t i = t / M;
      const std::size_t m = t % M;
      outcomes[t] = run_replication(st, config.ratios[i], replication_seed(config.seed, i, m));
    }
  };
  const std::size_t threads = std::min(config.threads, tasks);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  BenchmarkResult result;
  result.true_value = st.true_value;
  const std::size_t E = config.estimators.size();
  json seed_list = json::array();
  for (std::size_t i = 0; i < R; ++i) {
    json per_ratio = json::array();
    for (std::size_t m = 0; m < M; ++m) per_ratio.push_back(replication_seed(config.seed, i, m));
    seed_list.push_back({{"ratio", config.ratios[i]}, {"seeds", per_ratio}});
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> values;
      ResultRow row;
      row.estimator = config.estimators[e];
      row.ratio = config.ratios[i];
      for (std::size_t m = 0; m < M; ++m) {
        const Outcome& o = outcomes[i * M + m][e];
        result.records.push_back(ReplicationRecord{i, config.ratios[i], m, replication_seed(config.seed, i, m),
                                                   row.estimator, o.value, o.ok, o.error});
        row.wall_ms += o.ms;
        if (o.ok) {
          values.push_back(o.value);
        } else {
          ++row.failures;
        }
      }
      row.replications = values.size();
      row.wall_ms /= static_cast<double>(M);
      if (values.empty()) {
        row.relative_rmse = std::numeric_limits<double>::quiet_NaN();
        row.rmse_se = std::numeric_limits<double>::quiet_NaN();
        if (std::find(result.total_failures.begin(), result.total_failures.end(), row.estimator) ==
            result.total_failures.end()) {
          result.total_failures.push_back(row.estimator);
        }
      } else {
        row.relative_rmse = relative_rmse(st.true_value, values);
        row.rmse_se = relative_rmse_se(st.true_value, values);
      }
      result.rows.push_back(std::move(row));
    }
  }

  const json config_json = experiment_config_to_json(config);
  result.manifest = {{"config", config_json},
                     {"config_hash", json_hash(config_json)},
                     {"git_describe", STRATOPE_GIT_DESCRIBE},
                     {"versions",
                      {{"compiler", __VERSION__},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                     "." + std::to_string(EIGEN_MINOR_VERSION)},
                       {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                     {"split_seed", split_seed},
                     {"train_rows", split.train.size()},
                     {"eval_rows", st.eval.size()},
                     {"true_value", st.true_value},
                     {"replication_seeds", seed_list},
                     {"total_failures", result.total_failures}};
  if (config.timing) {
    result.manifest["wall_ms_total"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  }
  return result;
}

void write_result_csv(std::ostream& os, std::span<const ResultRow> rows, bool timing) {
  os << "estimator,ratio,relative_rmse,rmse_se,M,wall_ms\n";
  for (const auto& r : rows) {
    os << r.estimator << ',' << fmt(r.ratio) << ',' << fmt(r.relative_rmse) << ',' << fmt(r.rmse_se) << ','
       << r.replications << ',' << (timing ? fmt(r.wall_ms) : std::string("0")) << '\n';
  }
}

void write_benchmark_outputs(const BenchmarkResult& result, const std::filesystem::path& dir,
                             bool timing) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    return os;
  };
  auto subset = [&](std::initializer_list<const char*> names) {
    std::vector<ResultRow> rows;
    for (const auto& r : result.rows) {
      if (std::any_of(names.begin(), names.end(), [&](const char* n) { return r.estimator == n; })) {
        rows.push_back(r);
      }
    }
    return rows;
  };
  {
    auto os = open("results.csv");
    write_result_csv(os, result.rows, timing);
  }
  {
    auto os = open("fig_dr_vs_is.csv");
    write_result_csv(os, subset({"IS", "IS-Avg", "IS-PW", "DR", "DR-Avg", "DR-PW"}), timing);
  }
  {
    auto os = open("fig_smrdr_vs_mrdr.csv");
    write_result_csv(os, subset({"DR", "SMRDR", "MRDR"}), timing);
  }
  {
    auto os = open("replications.csv");
    os << "ratio_index,ratio,replication,seed,estimator,value,ok,error\n";
    for (const auto& r : result.records) {
      std::string error = r.error;
      std::replace(error.begin(), error.end(), '"', '\'');
      os << r.ratio_index << ',' << fmt(r.ratio) << ',' << r.replication << ',' << r.seed << ','
         << r.estimator << ',' << fmt(r.value) << ',' << (r.ok ? 1 : 0) << ",\"" << error << "\"\n";
    }
  }
  {
    auto os = open("manifest.json");
    os << result.manifest.dump(2) << '\n';
  }
}

// Theorem suite --------------------------------------------------------------

const std::vector<std::string>& all_theorem_checks() {
  static const std::vector<std::string> names{"unbiasedness", "orderings", "optimality",
                                              "stratified_vs_iid", "efficiency_bound", "dilemma"};
  return names;
}

TheoremSuiteConfig theorem_suite_config_from_json(const json& value) {
  check_keys(value,
             {"checks", "instances", "seed", "random_weights", "random_control_variates",
              "random_lambdas", "corrupt_weights", "dilemma", "dilemma_replications", "instance"},
             "config");
  TheoremSuiteConfig c;
  const std::string w;
  if (value.contains("checks")) {
    c.checks = read_strings(value.at("checks"), "checks");
    const auto& known = all_theorem_checks();
    for (const auto& name : c.checks) {
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        throw ConfigError("unknown check '" + name + "'");
      }
    }
  }
  read_size(value, "instances", c.instances, w);
  read_uint(value, "seed", c.seed, w);
  read_size(value, "random_weights", c.random_weights, w);
  read_size(value, "random_control_variates", c.random_control_variates, w);
  read_size(value, "random_lambdas", c.random_lambdas, w);
  read_bool(value, "corrupt_weights", c.corrupt_weights, w);
  read_size(value, "dilemma_replications", c.dilemma_replications, w);
  if (value.contains("dilemma")) {
    const auto& d = value.at("dilemma");
    check_keys(d, {"context_counts", "num_actions", "q_grid", "logger_alphas", "size_grid", "margin",
                   "min_relative_gap"},
               "dilemma");
    if (d.contains("context_counts")) c.dilemma.context_counts = read_sizes(d.at("context_counts"), "dilemma.context_counts");
    read_size(d, "num_actions", c.dilemma.num_actions, "dilemma");
    if (d.contains("q_grid")) c.dilemma.q_grid = read_doubles(d.at("q_grid"), "dilemma.q_grid");
    if (d.contains("logger_alphas")) c.dilemma.logger_alphas = read_doubles(d.at("logger_alphas"), "dilemma.logger_alphas");
    if (d.contains("size_grid")) {
      if (!d.at("size_grid").is_array()) throw ConfigError("dilemma.size_grid: expected an array");
      c.dilemma.size_grid.clear();
      for (const auto& s : d.at("size_grid")) c.dilemma.size_grid.push_back(read_sizes(s, "dilemma.size_grid"));
    }
    read_double(d, "margin", c.dilemma.margin, "dilemma");
    read_double(d, "min_relative_gap", c.dilemma.min_relative_gap, "dilemma");
  }
  if (value.contains("instance")) {
    const auto& d = value.at("instance");
    check_keys(d, {"max_contexts", "max_actions", "min_loggers", "max_loggers", "max_stratum_size",
                   "point_mass_prob"},
               "instance");
    read_size(d, "max_contexts", c.instance.max_contexts, "instance");
    read_size(d, "max_actions", c.instance.max_actions, "instance");
    read_size(d, "min_loggers", c.instance.min_loggers, "instance");
    read_size(d, "max_loggers", c.instance.max_loggers, "instance");
    read_size(d, "max_stratum_size", c.instance.max_stratum_size, "instance");
    read_double(d, "point_mass_prob", c.instance.point_mass_prob, "instance");
  }
  return c;
}

bool TheoremReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

constexpr double kExactTol = 1e-10;
constexpr double kOrderTol = 1e-12;

std::vector<double> random_lambda(Rng& rng, std::size_t K) {
  std::vector<double> w(K);
  double total = 0.0;
  for (double& x : w) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    x = -std::log(u);
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

ValueTable q_table_of(const DiscreteEnvironment& env) { return env.q_table(); }

bool loggers_distinct(const FiniteInstance& inst) {
  const auto first = inst.env.policy_table(*inst.loggers.front());
  for (std::size_t k = 1; k < inst.loggers.size(); ++k) {
    const auto t = inst.env.policy_table(*inst.loggers[k]);
    for (std::size_t s = 0; s < t.size(); ++s) {
      for (std::size_t a = 0; a < t[s].size(); ++a) {
        if (std::abs(t[s][a] - first[s][a]) > 1e-12) return true;
      }
    }
  }
  return false;
}

double stratified_variance(const FiniteInstance& inst, const ScoreFunction& f) {
  return exact_moments_stratified(inst.env, inst.loggers, inst.sizes, f).variance;
}

double stratified_mean(const FiniteInstance& inst, const ScoreFunction& f) {
  return exact_moments_stratified(inst.env, inst.loggers, inst.sizes, f).mean;
}

WeightTable corrupted(WeightTable h, bool corrupt) {
  if (!corrupt) return h;
  for (auto& per_k : h) {
    for (auto& row : per_k) {
      for (double& v : row) v *= 1.1;
    }
  }
  return h;
}

CheckResult check_unbiasedness(const std::vector<FiniteInstance>& instances, const TheoremSuiteConfig& c,
                               const Rng& root) {
  double worst = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    Rng rng = root.split(i).split(1);
    const double J = policy_value_exact(inst.env, *inst.pi_e);
    const auto rho = inst.rho();
    const auto zero = zero_table(inst.env);
    auto record = [&](const WeightTable& h, const ValueTable& g) {
      const double mean = stratified_mean(inst, gamma_score(inst.env, *inst.pi_e, h, g));
      worst = std::max(worst, std::abs(mean - J));
      ++evaluated;
    };
    record(marginal_inverse_table(inst.env, inst.loggers, rho), zero);
    record(simplex_weight_table(inst.env, inst.loggers, inst.sizes, rho), zero);
    for (std::size_t l = 0; l < c.random_lambdas; ++l) {
      const auto lambda = random_lambda(rng, inst.loggers.size());
      record(simplex_weight_table(inst.env, inst.loggers, inst.sizes, lambda), zero);
    }
    for (std::size_t w = 0; w < c.random_weights; ++w) {
      WeightTable h = corrupted(random_constraint_weights(inst, rng), c.corrupt_weights);
      record(h, random_value_table(inst.env, rng));
    }
  }
  CheckResult r{"unbiasedness", worst <= kExactTol, kExactTol - worst, ""};
  std::ostringstream os;
  os << evaluated << " estimators on " << instances.size() << " instances; max |E - J| = " << worst;
  r.detail = os.str();
  return r;
}

CheckResult check_orderings(const std::vector<FiniteInstance>& instances) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& inst : instances) {
    const auto rho = inst.rho();
    const auto zero = zero_table(inst.env);
    const double v_is = stratified_variance(
        inst, gamma_score(inst.env, *inst.pi_e, marginal_inverse_table(inst.env, inst.loggers, rho), zero));
    const double v_avg = stratified_variance(
        inst, gamma_score(inst.env, *inst.pi_e, simplex_weight_table(inst.env, inst.loggers, inst.sizes, rho), zero));
    const auto lambda = oracle_lambda_star(inst.env, *inst.pi_e, inst.loggers, inst.sizes);
    const double v_pw = stratified_variance(
        inst,
        gamma_score(inst.env, *inst.pi_e, simplex_weight_table(inst.env, inst.loggers, inst.sizes, lambda), zero));
    worst = std::min({worst, v_avg - v_is, v_avg - v_pw});
  }
  if (instances.empty()) worst = 0.0;
  CheckResult r{"orderings", worst >= -kOrderTol, worst, ""};
  std::ostringstream os;
  os << "min over instances of var[IS-Avg] - max(var[IS], var[IS-PW]) = " << worst;
  r.detail = os.str();
  return r;
}

CheckResult check_optimality(const std::vector<FiniteInstance>& instances, const TheoremSuiteConfig& c,
                             const Rng& root) {
  double worst_match = 0.0;
  double worst_order = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    Rng rng = root.split(i).split(2);
    const auto rho = inst.rho();
    const double n = static_cast<double>(inst.total());
    const double v_opt = stratified_variance(
        inst, gamma_score(inst.env, *inst.pi_e, marginal_inverse_table(inst.env, inst.loggers, rho),
                          q_table_of(inst.env)));
    const double bound = efficiency_bound(inst.env, *inst.pi_e, *inst.pi_star());
    worst_match = std::max(worst_match, std::abs(v_opt - bound / n));
    for (std::size_t w = 0; w < c.random_weights; ++w) {
      WeightTable h = random_constraint_weights(inst, rng);
      const double v = stratified_variance(inst, gamma_score(inst.env, *inst.pi_e, h, random_value_table(inst.env, rng)));
      worst_order = std::min(worst_order, v - v_opt);
    }
  }
  if (!std::isfinite(worst_order)) worst_order = 0.0;
  CheckResult r{"optimality", worst_match <= kExactTol && worst_order >= -kOrderTol,
                std::min(kExactTol - worst_match, worst_order), ""};
  std::ostringstream os;
  os << "max |var(q) - V*/n| = " << worst_match << "; min var(h,g) - var(q) = " << worst_order;
  r.detail = os.str();
  return r;
}

CheckResult check_stratified_vs_iid(const std::vector<FiniteInstance>& instances, const TheoremSuiteConfig& c,
                                    const Rng& root) {
  double worst_order = std::numeric_limits<double>::infinity();
  double worst_equal = 0.0;
  std::size_t missing_strict = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    Rng rng = root.split(i).split(3);
    const auto rho = inst.rho();
    const auto h = marginal_inverse_table(inst.env, inst.loggers, rho);
    auto gap_of = [&](const ValueTable& g) {
      const ScoreFunction f = gamma_score(inst.env, *inst.pi_e, h, g);
      const double strat = stratified_variance(inst, f);
      const double iid = exact_moments_iid(inst.env, inst.loggers, rho, inst.total(), f).variance;
      return iid - strat;
    };
    worst_equal = std::max(worst_equal, std::abs(gap_of(q_table_of(inst.env))));
    double best_gap = 0.0;
    for (std::size_t w = 0; w < c.random_control_variates; ++w) {
      const double gap = gap_of(random_value_table(inst.env, rng));
      worst_order = std::min(worst_order, gap);
      best_gap = std::max(best_gap, gap);
    }
    if (c.random_control_variates > 0 && loggers_distinct(inst) && !(best_gap > 1e-6)) ++missing_strict;
  }
  if (!std::isfinite(worst_order)) worst_order = 0.0;
  CheckResult r{"stratified_vs_iid",
                worst_order >= -kOrderTol && worst_equal <= kExactTol && missing_strict == 0,
                std::min(worst_order, kExactTol - worst_equal), ""};
  std::ostringstream os;
  os << "min iid - stratified = " << worst_order << "; max gap at g = q: " << worst_equal
     << "; instances without a strict gap: " << missing_strict;
  r.detail = os.str();
  return r;
}

CheckResult check_efficiency_bound(const std::vector<FiniteInstance>& instances) {
  double worst = 0.0;
  for (const auto& inst : instances) {
    const auto rho = inst.rho();
    const double bound = efficiency_bound(inst.env, *inst.pi_e, inst.loggers, rho);
    const ScoreFunction f = gamma_score(inst.env, *inst.pi_e, marginal_inverse_table(inst.env, inst.loggers, rho),
                                        q_table_of(inst.env));
    const double per_draw = exact_moments_iid(inst.env, inst.loggers, rho, 1, f).variance;
    worst = std::max(worst, std::abs(bound - per_draw));
  }
  CheckResult r{"efficiency_bound", worst <= kExactTol, kExactTol - worst, ""};
  std::ostringstream os;
  os << "max |V* - var_mix[phi(q)]| = " << worst;
  r.detail = os.str();
  return r;
}

CheckResult check_dilemma(const TheoremSuiteConfig& c) {
  CheckResult r{"dilemma", false, 0.0, ""};
  try {
    const auto [is_wins, pw_wins] = find_dilemma_instances(c.dilemma);
    std::ostringstream os;
    os << "IS wins: " << is_wins.description << " (" << is_wins.var_is << " < " << is_wins.var_is_pw
       << "); IS-PW wins: " << pw_wins.description << " (" << pw_wins.var_is_pw << " < " << pw_wins.var_is << ")";
    r.passed = true;
    r.margin = std::min(is_wins.var_is_pw - is_wins.var_is, pw_wins.var_is - pw_wins.var_is_pw);
    if (c.dilemma_replications > 0) {
      const Rng root(c.seed);
      const auto a = simulate_dilemma(is_wins, c.dilemma_replications, root.split(0xD1).next());
      const auto b = simulate_dilemma(pw_wins, c.dilemma_replications, root.split(0xD2).next());
      r.passed = a.var_is < a.var_is_pw && b.var_is_pw < b.var_is;
      r.margin = std::min(a.var_is_pw - a.var_is, b.var_is - b.var_is_pw);
      os << "; Monte Carlo (" << c.dilemma_replications << " reps): " << a.var_is << " vs " << a.var_is_pw
         << ", " << b.var_is_pw << " vs " << b.var_is;
    }
    r.detail = os.str();
  } catch (const std::exception& e) {
    r.detail = e.what();
  }
  return r;
}

}  // namespace

TheoremReport run_theorem_suite(const TheoremSuiteConfig& config) {
  TheoremReport report;
  if (config.checks.empty()) return report;
  const auto& known = all_theorem_checks();
  for (const auto& name : config.checks) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("unknown check '" + name + "'");
    }
  }
  const Rng root(config.seed);
  std::vector<FiniteInstance> instances;
  const bool needs_instances = std::any_of(config.checks.begin(), config.checks.end(),
                                           [](const std::string& n) { return n != "dilemma"; });
  if (needs_instances) {
    for (std::size_t i = 0; i < config.instances; ++i) {
      Rng rng = root.split(i).split(0);
      instances.push_back(random_instance(rng, config.instance));
    }
  }
  for (const auto& name : config.checks) {
    if (name == "unbiasedness") {
      report.checks.push_back(check_unbiasedness(instances, config, root));
    } else if (name == "orderings") {
      report.checks.push_back(check_orderings(instances));
    } else if (name == "optimality") {
      report.checks.push_back(check_optimality(instances, config, root));
    } else if (name == "stratified_vs_iid") {
      report.checks.push_back(check_stratified_vs_iid(instances, config, root));
    } else if (name == "efficiency_bound") {
      report.checks.push_back(check_efficiency_bound(instances));
    } else {
      report.checks.push_back(check_dilemma(config));
    }
  }
  return report;
}

}  // namespace stratope
