#pragma once

// JSON checkpoints: model configuration plus every named parameter tensor.

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "times2d/model.hpp"

namespace times2d {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// FNV-1a over the compact dump of config_to_json(config).
std::uint64_t config_hash(const ModelConfig& config);

nlohmann::json checkpoint_to_json(const TimesNet& model);
/// Rebuilds the model and restores every parameter. Throws CheckpointError on
/// a wrong format, a hash that disagrees with the stored config, or a missing
/// or misshapen parameter.
TimesNet checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const TimesNet& model);
TimesNet load_checkpoint(const std::string& path);

}  // namespace times2d
