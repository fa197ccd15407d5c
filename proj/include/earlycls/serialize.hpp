#pragma once

#include <json.hpp>

#include "earlycls/model.hpp"

namespace earlycls {

nlohmann::json array_to_json(const Array& a);
Array array_from_json(const nlohmann::json& j, const std::string& name);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json parameters_to_json(const ParameterSet& params, const ModelConfig& cfg);
std::pair<ParameterSet, ModelConfig> parameters_from_json(const nlohmann::json& j);

}  // namespace earlycls
