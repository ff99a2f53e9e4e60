#pragma once

#include <string>

#include "json.hpp"
#include "ser/model.hpp"
#include "ser/train.hpp"
#include "ser/vtlp.hpp"

// JSON converters shared by the run config and the checkpoint header.
namespace ser {

std::string key_mode_name(KeyMode mode);
KeyMode key_mode_from_name(const std::string& name);
std::string value_mode_name(ValueMode mode);
ValueMode value_mode_from_name(const std::string& name);
std::string optimizer_name(OptAlgo algo);
OptAlgo optimizer_from_name(const std::string& name);

nlohmann::json to_json(const FeatureParams& p);
FeatureParams feature_params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AreaConfig& c);
AreaConfig area_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const VtlpConfig& c);
VtlpConfig vtlp_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SegmentationConfig& c);
SegmentationConfig segmentation_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Strict helper: throws ConfigError when `j` holds keys outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context);

}  // namespace ser
