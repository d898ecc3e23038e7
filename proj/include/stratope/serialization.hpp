#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "stratope/environment.hpp"
#include "stratope/estimators.hpp"
#include "stratope/oracle.hpp"

namespace stratope {

/// FNV-1a of the compact dump, as 16 hex digits.
std::string json_hash(const nlohmann::json& value);

nlohmann::json environment_to_json(const DiscreteEnvironment& env);
DiscreteEnvironment environment_from_json(const nlohmann::json& value);

/// Loggers and pi_e are written as probability tables over the environment's
/// contexts; reading yields TabularPolicy instances.
nlohmann::json instance_to_json(const FiniteInstance& instance);
FiniteInstance instance_from_json(const nlohmann::json& value);

nlohmann::json dilemma_to_json(const DilemmaInstance& dilemma);

nlohmann::json record_to_json(const EstimateRecord& record);

}  // namespace stratope
