#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "flowsentry/model.hpp"
#include "flowsentry/predictor.hpp"

namespace flowsentry {

// Checkpoint layout: one line of JSON (format version, configs, normalizer,
// tensor names and shapes, total element count, caller metadata), a newline,
// then every tensor's elements in header order as little-endian IEEE-754
// doubles. Nothing time- or host-dependent is written, so saving the same
// model twice gives the same bytes.

inline constexpr const char* kCheckpointFormatVersion = "1";

void write_checkpoint(const TrainedModel& model, std::ostream& out, const nlohmann::json& metadata = {});
/// Throws FormatVersionMismatch or CorruptBlob.
TrainedModel read_checkpoint(std::istream& in);

void save_checkpoint(const TrainedModel& model, const std::string& path, const nlohmann::json& metadata = {});
TrainedModel load_checkpoint(const std::string& path);

struct PredictorCheckpoint {
  PredictorModel model;
  std::optional<AnomalyThreshold> threshold;
};

/// Same container with a "predictor" section holding the codebook and, once
/// calibrated, the threshold.
void write_predictor_checkpoint(const PredictorCheckpoint& ckpt, std::ostream& out,
                                const nlohmann::json& metadata = {});
PredictorCheckpoint read_predictor_checkpoint(std::istream& in);

void save_predictor_checkpoint(const PredictorCheckpoint& ckpt, const std::string& path,
                               const nlohmann::json& metadata = {});
PredictorCheckpoint load_predictor_checkpoint(const std::string& path);

/// Header of any checkpoint file, for inspection.
nlohmann::json read_checkpoint_header(std::istream& in);

}  // namespace flowsentry
