#pragma once

// JSON mapping of the configuration structs. Readers start from the struct
// defaults, reject unknown keys and validate the result.

#include <nlohmann/json.hpp>

#include "asap/data.hpp"
#include "asap/model.hpp"
#include "asap/nn.hpp"
#include "asap/training.hpp"

namespace asap {

void to_json(nlohmann::json& j, const EncoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void to_json(nlohmann::json& j, const SynthSpec& c);

EncoderConfig encoder_config_from_json(const nlohmann::json& j, const EncoderConfig& defaults = {});
/// Encoder d_model defaults to the top-level d_model when omitted.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

}  // namespace asap
