#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsentry/metrics.hpp"
#include "flowsentry/model.hpp"
#include "flowsentry/predictor.hpp"
#include "flowsentry/promptcls.hpp"
#include "flowsentry/synth.hpp"

namespace flowsentry {

/// malicious:benign
struct MixRatio {
  std::size_t malicious = 1;
  std::size_t benign = 1;
};

struct ExperimentConfig {
  std::string name = "encoder";
  std::vector<std::string> train_vectors{"DNS", "NTP", "SYN"};
  std::vector<std::string> test_vectors{"DNS", "NTP", "SYN"};
  /// Requires disjoint train/test vector sets.
  bool zero_shot = false;
  MixRatio train_ratio;
  MixRatio test_ratio;
  /// Requested malicious counts; truncated to a multiple of the ratio's
  /// malicious term so that benign = malicious * benign / malicious exactly.
  std::size_t train_malicious = 1500;
  std::size_t test_malicious = 1500;
  SequencerConfig sequencer;
  EncoderConfig encoder;
  TrainConfig train;
  std::uint64_t seed = 42;  // split subsampling
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});

struct Split {
  FlowDataset train;
  FlowDataset test;
};

/// Seeded subsampling from the pooled datasets. Train attacks come only from
/// train_vectors, test attacks only from test_vectors; no pooled flow is used
/// twice. Both outputs are ordered by first_ms. Throws InvalidConfig for
/// overlapping vector sets in zero-shot mode and InsufficientFlows naming the
/// class or vector that ran short.
Split build_split(std::span<const FlowDataset> pool, const ExperimentConfig& config);

struct FlowPrediction {
  std::size_t flow_index = 0;
  Label label = Label::Unlabeled;
  double score = 0.0;
  Label predicted = Label::Benign;
};

struct ExperimentResult {
  MetricsReport report;
  std::vector<FlowPrediction> predictions;
};

void write_predictions_csv(const FlowDataset& dataset, std::span<const FlowPrediction> predictions,
                           std::ostream& out);

/// Scores every flow of `test` with a trained model.
ExperimentResult evaluate_model(const TrainedModel& model, const FlowDataset& test, const std::string& name);

struct EncoderRun {
  TrainedModel model;
  ExperimentResult result;
};

/// Split, train the sequence encoder on the train side, evaluate on the test
/// side.
EncoderRun run_experiment(std::span<const FlowDataset> pool, const ExperimentConfig& config);

/// Context-free ablation: the same tokenizer and head applied to each flow
/// alone (length-1 sequences, no attention layers). Each step sees as many
/// flows as an encoder step on length-T sequences.
EncoderRun baseline_feature_mlp(const FlowDataset& train, const FlowDataset& test, const ExperimentConfig& config);

struct PredictorExperimentConfig {
  std::string name = "predictor";
  std::vector<std::string> attack_vectors{"DNS", "NTP", "SYN"};
  std::size_t train_sequences = 2000;        // benign
  std::size_t calibration_sequences = 2000;  // benign
  std::size_t test_sequences = 2000;         // benign
  std::size_t attack_flows = 3000;
  double quantile = 0.99;
  SequencerConfig sequencer{8, SortKey::Bytes, true, 64};
  PredictorConfig predictor;
  EncoderConfig encoder{32, 4, 2, 64, 32, MaskMode::Causal, 0.0};
  TrainConfig train{1e-3, 5, 32, 42};
  std::uint64_t seed = 42;  // scenario generation
};

nlohmann::json to_json(const PredictorExperimentConfig& c);
PredictorExperimentConfig predictor_experiment_from_json(const nlohmann::json& j, PredictorExperimentConfig base = {});

struct PredictorRun {
  PredictorModel model;
  AnomalyThreshold threshold;
  /// Benign test flows followed by the attack flows; per-flow predictions
  /// carry the score and verdict of the sequence holding the flow.
  FlowDataset test;
  ExperimentResult result;  // report counts are over sequences
  double benign_flag_rate = 0.0;
  std::size_t benign_test_sequences = 0;
  std::size_t attack_test_sequences = 0;
};

/// Benign-only training, nearest-rank calibration on a benign hold-out, and
/// detection over fresh benign windows plus attack-only windows. Each part
/// comes from its own seeded scenario.
PredictorRun run_predictor_experiment(const PredictorExperimentConfig& config);

/// Sequentializes each part on its own with the model's sequencer and scores
/// every sequence; the report counts sequences, as in
/// run_predictor_experiment. Predictions follow the parts in order.
ExperimentResult evaluate_predictor(const PredictorModel& model, const AnomalyThreshold& threshold,
                                    std::span<const FlowDataset> parts, const std::string& name);

enum class PromptClient { Stub, Remote };

struct PromptExperimentConfig {
  std::string name = "prompt";
  ScenarioConfig scenario;  // used when no dataset is supplied
  std::size_t max_queries = 200;
  std::size_t queries_per_prompt = 1;
  PromptTemplate prompt = default_prompt_template();
  PromptClient client = PromptClient::Stub;
  LlmClientConfig remote;
  std::uint64_t seed = 42;  // few-shot and query sampling

  PromptExperimentConfig();
};

nlohmann::json to_json(const PromptExperimentConfig& c);
/// `layout_path`, when present, names a template file to load.
PromptExperimentConfig prompt_experiment_from_json(const nlohmann::json& j, PromptExperimentConfig base = {});

struct PromptRun {
  FlowDataset queries;
  FewShotSet fewshots;
  std::vector<std::string> prompts;
  std::vector<std::string> responses;  // "" where the remote call failed
  std::vector<LlmVerdict> verdicts;    // one per query
  std::size_t unparseable = 0;
  std::size_t remote_failures = 0;     // infrastructure errors, counted apart
  ExperimentResult result;
};

/// Few-shot examples are drawn from `dataset` (or the configured scenario),
/// queries from the remaining flows. Unparseable answers and failed remote
/// calls count as Benign predictions with score 0.5.
PromptRun run_prompt_experiment(const PromptExperimentConfig& config, const FlowDataset* dataset = nullptr);

/// Scenario presets used by the harness and the acceptance suite.
ScenarioConfig default_scenario(std::uint64_t seed);
/// Builtin vectors other than DNS, NTP and SYN.
std::vector<std::string> held_out_vector_names();

/// Train on DNS/NTP/SYN at 1:1, test on the held-out vectors at 1:10.
ExperimentConfig zero_shot_config(std::uint64_t seed);
/// Two scenarios: the training vectors with enough benign traffic for both
/// sides of the split, and an attack-only scenario of the held-out vectors.
std::vector<FlowDataset> zero_shot_pool(std::uint64_t seed);

}  // namespace flowsentry
