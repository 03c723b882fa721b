#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowsentry/encoder.hpp"
#include "flowsentry/ingest.hpp"
#include "flowsentry/sequencer.hpp"

namespace flowsentry {

// ---------------------------------------------------------------------------
// Feature normalization

inline constexpr double kNormalizerEps = 1e-8;

/// Per-feature z-score with population standard deviation floored at eps.
struct Normalizer {
  FeatureVector mean{};
  FeatureVector std{};

  FeatureVector normalize(const FeatureVector& v) const;
  FeatureVector denormalize(const FeatureVector& z) const;
  bool operator==(const Normalizer&) const = default;
};

/// Throws EmptyFit.
Normalizer fit_normalizer(std::span<const FeatureVector> features);

/// Features of every valid position across the sequences.
std::vector<FeatureVector> valid_features(std::span<const FlowSequence> sequences);

// ---------------------------------------------------------------------------
// Parameters

/// Learnable flow tokenizer: normalized features -> d_model embedding.
struct TokenizerParams {
  Matrix projection;  // F x d_model
  Matrix bias;        // 1 x d_model
};

/// d_model -> d_model (ReLU) -> 1 logit per position.
struct HeadParams {
  Matrix hidden;       // d x d
  Matrix hidden_bias;  // 1 x d
  Matrix out;          // d x 1
  Matrix out_bias;     // 1 x 1
};

struct ClassifierParams {
  TokenizerParams tokenizer;
  EncoderParams encoder;
  HeadParams head;
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, TokenizerParams>
void for_each_tensor(P& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "projection", p.projection);
  fn(prefix + "bias", p.bias);
}

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, HeadParams>
void for_each_tensor(P& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "hidden", p.hidden);
  fn(prefix + "hidden_bias", p.hidden_bias);
  fn(prefix + "out", p.out);
  fn(prefix + "out_bias", p.out_bias);
}

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, ClassifierParams>
void for_each_tensor(P& p, const std::string& prefix, Fn&& fn) {
  for_each_tensor(p.tokenizer, prefix + "tokenizer.", fn);
  for_each_tensor(p.encoder, prefix + "encoder.", fn);
  for_each_tensor(p.head, prefix + "head.", fn);
}

ClassifierParams init_classifier(const EncoderConfig& config, Rng& rng);
ClassifierParams zero_classifier(const EncoderConfig& config);

// ---------------------------------------------------------------------------
// Forward pieces

/// Row i = normalize(features_i) * projection + bias. Throws DimensionMismatch.
Matrix tokenize_sequence(const Normalizer& norm, const TokenizerParams& tok, const FlowSequence& seq);

/// One logit per row of h.
std::vector<double> head_logits(const HeadParams& head, const Matrix& h);

double logistic(double logit);

// ---------------------------------------------------------------------------
// Training

struct LossAndGrads {
  double loss = 0.0;  // mean binary cross-entropy over labeled valid positions
  std::size_t positions = 0;
  ClassifierParams grads;
};

/// Exact reverse-mode gradients through head, encoder and tokenizer. Valid
/// positions labeled Unlabeled are skipped. Throws AllPositionsMasked when
/// no position contributes. Dropout is used only when `dropout_rng` is given.
LossAndGrads loss_and_grads(const EncoderConfig& config, const Normalizer& norm, const ClassifierParams& params,
                            std::span<const FlowSequence> batch, Rng* dropout_rng = nullptr);

/// Loss only (no gradients, no dropout).
double batch_loss(const EncoderConfig& config, const Normalizer& norm, const ClassifierParams& params,
                  std::span<const FlowSequence> batch);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;  // sequences per step
  std::uint64_t seed = 42;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainedModel {
  SequencerConfig sequencer;
  EncoderConfig config;
  Normalizer normalizer;
  ClassifierParams params;
  std::vector<double> history;  // mean training loss per epoch
};

/// Adam over shuffled mini-batches of sequences; bit-identical for a fixed
/// seed. Throws NoLabeledData.
TrainedModel train_sequences(std::span<const FlowSequence> sequences, const SequencerConfig& sequencer,
                             const EncoderConfig& config, const TrainConfig& train);

/// Sequentializes the datasets (each in its own windows) and trains.
TrainedModel train(std::span<const FlowDataset> datasets, const SequencerConfig& sequencer,
                   const EncoderConfig& config, const TrainConfig& train);

struct PositionPrediction {
  std::size_t position = 0;
  std::size_t flow_index = kNoFlow;
  double probability = 0.0;
  Label predicted = Label::Benign;  // Malicious iff probability > 0.5
};

/// Valid positions only.
std::vector<PositionPrediction> predict(const TrainedModel& model, const FlowSequence& sequence);

/// Per-flow scores for a whole dataset: sequentializes with the model's
/// sequencer config and maps every valid position back to its flow.
std::vector<double> predict_flow_probabilities(const TrainedModel& model, const FlowDataset& dataset);

}  // namespace flowsentry
