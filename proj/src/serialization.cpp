#include "stratope/serialization.hpp"

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace stratope {

using nlohmann::json;

std::string json_hash(const json& value) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : value.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json environment_to_json(const DiscreteEnvironment& env) {
  json contexts = json::array();
  for (const auto& c : env.contexts()) contexts.push_back({{"id", c.id}, {"features", c.features}});
  return {{"contexts", contexts},
          {"context_probs", env.context_probs()},
          {"q", env.q_table()},
          {"reward_model",
           env.reward_model() == RewardModel::kScaledBernoulli ? "scaled_bernoulli" : "deterministic"},
          {"r_max", env.r_max()}};
}

DiscreteEnvironment environment_from_json(const json& value) {
  std::vector<Context> contexts;
  for (const auto& c : value.at("contexts")) {
    contexts.push_back(Context{c.at("id").get<std::size_t>(), c.at("features").get<std::vector<double>>()});
  }
  const auto model_name = value.value("reward_model", std::string("scaled_bernoulli"));
  RewardModel model;
  if (model_name == "scaled_bernoulli") {
    model = RewardModel::kScaledBernoulli;
  } else if (model_name == "deterministic") {
    model = RewardModel::kDeterministic;
  } else {
    throw std::invalid_argument("unknown reward model '" + model_name + "'");
  }
  return DiscreteEnvironment(std::move(contexts), value.at("context_probs").get<std::vector<double>>(),
                             value.at("q").get<std::vector<std::vector<double>>>(), model,
                             value.value("r_max", 1.0));
}

json instance_to_json(const FiniteInstance& instance) {
  json loggers = json::array();
  for (const auto& logger : instance.loggers) loggers.push_back(instance.env.policy_table(*logger));
  return {{"environment", environment_to_json(instance.env)},
          {"loggers", loggers},
          {"pi_e", instance.env.policy_table(*instance.pi_e)},
          {"sizes", instance.sizes}};
}

FiniteInstance instance_from_json(const json& value) {
  std::vector<PolicyPtr> loggers;
  for (const auto& table : value.at("loggers")) {
    loggers.push_back(std::make_shared<const TabularPolicy>(table.get<std::vector<std::vector<double>>>()));
  }
  return FiniteInstance{
      environment_from_json(value.at("environment")), std::move(loggers),
      std::make_shared<const TabularPolicy>(value.at("pi_e").get<std::vector<std::vector<double>>>()),
      value.at("sizes").get<std::vector<std::size_t>>()};
}

json dilemma_to_json(const DilemmaInstance& dilemma) {
  return {{"description", dilemma.description},
          {"instance", instance_to_json(dilemma.instance)},
          {"lambda_star", dilemma.lambda_star},
          {"var_is", dilemma.var_is},
          {"var_is_pw", dilemma.var_is_pw}};
}

json record_to_json(const EstimateRecord& record) {
  return {{"estimator", record.estimator},
          {"value", record.value},
          {"config_hash", record.config_hash},
          {"seed", record.seed}};
}

}  // namespace stratope
