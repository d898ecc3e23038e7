#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stratope/data_pipeline.hpp"
#include "stratope/errors.hpp"
#include "stratope/experiment.hpp"
#include "stratope/oracle.hpp"
#include "stratope/rng.hpp"
#include "stratope/serialization.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

nlohmann::json load_json(const std::optional<std::string>& path) {
  if (!path) return nlohmann::json::object();
  std::ifstream in(*path);
  if (!in) throw stratope::ConfigError("cannot open config '" + *path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw stratope::ConfigError("config '" + *path + "' is not valid JSON: " + e.what());
  }
}

struct CommonOptions {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON configuration file");
  cmd->add_option("--out", o.out, "output location");
  cmd->add_option("--seed", o.seed, "base seed (overrides the config)");
  cmd->add_option("--threads", o.threads, "worker threads (overrides the config)");
}

int run_bench(const CommonOptions& o, bool no_timing) {
  auto config = stratope::experiment_config_from_json(load_json(o.config));
  if (o.seed) config.seed = *o.seed;
  if (o.threads) config.threads = *o.threads;
  if (o.out) config.output_dir = *o.out;
  if (no_timing) config.timing = false;
  config.validate();
  const auto result = stratope::run_benchmark(config);
  stratope::write_benchmark_outputs(result, config.output_dir, config.timing);
  std::cout << "true value " << result.true_value << '\n';
  stratope::write_result_csv(std::cout, result.rows, config.timing);
  if (!result.total_failures.empty()) {
    for (const auto& name : result.total_failures) {
      std::cerr << "estimator " << name << " failed in every replication of some ratio\n";
    }
    return kExitFailure;
  }
  return kExitOk;
}

int run_verify(const CommonOptions& o) {
  stratope::TheoremSuiteConfig config;
  if (o.config) {
    config = stratope::theorem_suite_config_from_json(load_json(o.config));
  } else {
    config.checks = stratope::all_theorem_checks();
  }
  if (o.seed) config.seed = *o.seed;
  const auto report = stratope::run_theorem_suite(config);
  if (report.checks.empty()) std::cout << "no checks configured\n";
  for (const auto& c : report.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " margin=" << c.margin << "  " << c.detail << '\n';
  }
  return report.passed() ? kExitOk : kExitFailure;
}

int run_gen_fixture(const CommonOptions& o) {
  const auto j = load_json(o.config);
  nlohmann::json wrapped = {{"synthetic", j}};
  const auto config = stratope::experiment_config_from_json(wrapped);
  auto spec = *config.synthetic;
  if (o.seed) spec.seed = *o.seed;
  const auto data = stratope::make_synthetic_fixture(spec);
  const std::filesystem::path path = o.out.value_or("fixture.csv");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  stratope::write_csv_dataset(os, data);
  std::cout << "wrote " << data.size() << " rows to " << path.string() << '\n';
  return kExitOk;
}

int run_dilemma(const CommonOptions& o) {
  auto config = stratope::theorem_suite_config_from_json(load_json(o.config));
  if (o.seed) config.seed = *o.seed;
  const auto [is_wins, pw_wins] = stratope::find_dilemma_instances(config.dilemma);
  nlohmann::json out = {{"is_better", stratope::dilemma_to_json(is_wins)},
                        {"is_pw_better", stratope::dilemma_to_json(pw_wins)}};
  std::cout << "IS beats IS-PW: " << is_wins.description << "  var " << is_wins.var_is << " vs "
            << is_wins.var_is_pw << '\n';
  std::cout << "IS-PW beats IS: " << pw_wins.description << "  var " << pw_wins.var_is_pw << " vs "
            << pw_wins.var_is << '\n';
  bool consistent = true;
  if (config.dilemma_replications > 0) {
    const stratope::Rng root(config.seed);
    const auto a = stratope::simulate_dilemma(is_wins, config.dilemma_replications, root.split(0xD1).next());
    const auto b = stratope::simulate_dilemma(pw_wins, config.dilemma_replications, root.split(0xD2).next());
    consistent = a.var_is < a.var_is_pw && b.var_is_pw < b.var_is;
    out["monte_carlo"] = {{"replications", config.dilemma_replications},
                          {"is_better", {{"var_is", a.var_is}, {"var_is_pw", a.var_is_pw}}},
                          {"is_pw_better", {{"var_is", b.var_is}, {"var_is_pw", b.var_is_pw}}},
                          {"consistent", consistent}};
    std::cout << "Monte Carlo (" << config.dilemma_replications << " replications): " << a.var_is << " vs "
              << a.var_is_pw << ", " << b.var_is_pw << " vs " << b.var_is
              << (consistent ? "  consistent\n" : "  INCONSISTENT\n");
  }
  if (o.out) {
    const std::filesystem::path path = *o.out;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << out.dump(2) << '\n';
  }
  return consistent ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy evaluation under stratified sampling"};
  app.require_subcommand(1);

  CommonOptions bench_opts, verify_opts, fixture_opts, dilemma_opts;
  bool no_timing = false;
  auto* bench = app.add_subcommand("bench", "run the classification benchmark");
  add_common(bench, bench_opts);
  bench->add_flag("--no-timing", no_timing, "write wall_ms as 0 for byte-reproducible CSVs");
  auto* verify = app.add_subcommand("verify", "run the exact theorem checks");
  add_common(verify, verify_opts);
  auto* fixture = app.add_subcommand("gen-fixture", "write a synthetic multiclass CSV");
  add_common(fixture, fixture_opts);
  auto* dilemma = app.add_subcommand("dilemma", "search instances where IS and IS-PW each win");
  add_common(dilemma, dilemma_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*bench) return run_bench(bench_opts, no_timing);
    if (*verify) return run_verify(verify_opts);
    if (*fixture) return run_gen_fixture(fixture_opts);
    return run_dilemma(dilemma_opts);
  } catch (const stratope::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
