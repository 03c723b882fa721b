#pragma once

#include <nlohmann/json.hpp>

#include "flowsentry/encoder.hpp"
#include "flowsentry/model.hpp"
#include "flowsentry/sequencer.hpp"

namespace flowsentry {

// JSON mirrors of the configuration structs. Readers start from the struct
// defaults, so documents only need the fields they override. Malformed
// values raise InvalidConfig.

nlohmann::json to_json(const SequencerConfig& c);
nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const TrainConfig& c);

SequencerConfig sequencer_from_json(const nlohmann::json& j, SequencerConfig base = {});
EncoderConfig encoder_from_json(const nlohmann::json& j, EncoderConfig base = {});
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {});

}  // namespace flowsentry
