#pragma once

#include <json.hpp>

#include "amodal/losses.hpp"
#include "amodal/net.hpp"

namespace amodal {

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json loss_config_to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

// Throws ConfigError on keys that the reference object does not contain.
void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& reference,
                         const std::string& scope);

}  // namespace amodal
