#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowsentry/encoder.hpp"
#include "flowsentry/model.hpp"
#include "flowsentry/sequencer.hpp"

namespace flowsentry {

// ---------------------------------------------------------------------------
// Vocabulary

/// V centroids, one per row, in whatever space the points were given in
/// (normalized feature space for flows).
struct DiscreteCodebook {
  Matrix centroids;  // V x dim

  std::size_t size() const { return static_cast<std::size_t>(centroids.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }
};

inline constexpr std::size_t kCodebookIterations = 25;

/// k-means with k-means++ seeding under the L2 metric. Clusters that go
/// empty are re-seeded at the point farthest from its current centroid.
/// Throws InsufficientDistinctPoints when fewer than V distinct rows exist
/// (or V < 2).
DiscreteCodebook fit_codebook(const Matrix& points, std::size_t vocab, std::uint64_t seed,
                              std::size_t max_iterations = kCodebookIterations);
DiscreteCodebook fit_codebook(std::span<const FeatureVector> features, std::size_t vocab, std::uint64_t seed);

/// Nearest centroid; ties go to the lowest index.
std::size_t quantize(const DiscreteCodebook& codebook, std::span<const double> point);

// ---------------------------------------------------------------------------
// Token model

enum class PredictorMode { NextToken, Masked };
enum class ScoreReduction { Mean, Max };

struct TokenSequence {
  std::vector<std::size_t> tokens;
  std::vector<std::uint8_t> valid;

  std::size_t length() const { return tokens.size(); }
};

/// Row V of `embedding` is the reserved mask token.
struct PredictorParams {
  Matrix embedding;    // (V + 1) x d
  EncoderParams encoder;
  Matrix output;       // d x V
  Matrix output_bias;  // 1 x V
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, PredictorParams>
void for_each_tensor(P& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "embedding", p.embedding);
  for_each_tensor(p.encoder, prefix + "encoder.", fn);
  fn(prefix + "output", p.output);
  fn(prefix + "output_bias", p.output_bias);
}

PredictorParams init_predictor(const EncoderConfig& config, std::size_t vocab, Rng& rng);
PredictorParams zero_predictor(const EncoderConfig& config, std::size_t vocab);

/// Attention mode each predictor mode trains with.
MaskMode mask_mode_for(PredictorMode mode);

/// T x V logits. Rows whose `masked` flag is set see the mask embedding
/// instead of their token. Row t predicts token t+1 in NextToken mode and
/// token t in Masked mode.
Matrix predictor_logits(const EncoderConfig& config, const PredictorParams& params, const TokenSequence& seq,
                        std::span<const std::uint8_t> masked = {});

/// Numerically stable softmax of one logit row.
std::vector<double> softmax_row(const Matrix& logits, Eigen::Index row);

struct PredictorLossAndGrads {
  double loss = 0.0;  // mean cross-entropy over predicted sites
  std::size_t sites = 0;
  PredictorParams grads;
};

/// Cross-entropy and exact gradients. NextToken: every position s >= 1 with
/// s and s-1 valid is a site. Masked: every valid position flagged in
/// `masks[b]` is a site (`masks` is ignored in NextToken mode). Throws
/// AllPositionsMasked when the batch has no site.
PredictorLossAndGrads predictor_loss_and_grads(const EncoderConfig& config, PredictorMode mode,
                                               const PredictorParams& params, std::span<const TokenSequence> batch,
                                               std::span<const std::vector<std::uint8_t>> masks,
                                               Rng* dropout_rng = nullptr);

struct PredictorConfig {
  PredictorMode mode = PredictorMode::NextToken;
  std::size_t vocab = 64;
  double mask_rate = 0.15;
  ScoreReduction reduction = ScoreReduction::Mean;

  bool operator==(const PredictorConfig&) const = default;
};

struct TokenTrainResult {
  PredictorParams params;
  std::vector<double> history;
};

/// Adam over shuffled batches of token sequences. In Masked mode each valid
/// position is masked with probability mask_rate (at least one per sequence)
/// from a seeded stream. The encoder's mask mode is forced to match the
/// predictor mode.
TokenTrainResult train_token_predictor(std::span<const TokenSequence> sequences, const PredictorConfig& predictor,
                                       EncoderConfig config, const TrainConfig& train);

struct PredictorModel {
  PredictorConfig predictor;
  SequencerConfig sequencer;
  EncoderConfig config;
  Normalizer normalizer;
  DiscreteCodebook codebook;
  PredictorParams params;
  std::vector<double> history;
};

TokenSequence tokenize_flows(const PredictorModel& model, const FlowSequence& seq);

/// Trains on benign sequences only: fits the normalizer and codebook on the
/// valid positions, quantizes, and trains the token model. Throws
/// MaliciousInTrainingSet if any valid position is labeled Malicious.
PredictorModel train_predictor(std::span<const FlowSequence> benign, const SequencerConfig& sequencer,
                               const PredictorConfig& predictor, const EncoderConfig& config,
                               const TrainConfig& train);

// ---------------------------------------------------------------------------
// Scoring

struct SequenceScore {
  std::vector<std::size_t> positions;  // scored positions
  std::vector<double> nll;             // -ln p(actual token), same order
  double mean = 0.0;
  double max = 0.0;
  double score = 0.0;  // mean or max according to the model's reduction
};

/// NextToken: positions with a valid predecessor. Masked: every valid
/// position, each masked on its own. A sequence with no scored position
/// gets score 0.
SequenceScore nll_scores(const EncoderConfig& config, PredictorMode mode, ScoreReduction reduction,
                         const PredictorParams& params, const TokenSequence& seq);
SequenceScore nll_scores(const PredictorModel& model, const FlowSequence& seq);

struct AnomalyThreshold {
  double score_threshold = 0.0;
  double quantile = 0.99;
};

/// Nearest-rank q-quantile: the ceil(q n)-th smallest score (at least the
/// first). Throws EmptyValidation, or InvalidConfig for q outside (0, 1].
AnomalyThreshold calibrate_threshold(std::span<const double> benign_scores, double q);
AnomalyThreshold calibrate_threshold(const PredictorModel& model, std::span<const FlowSequence> benign, double q);

enum class Verdict { Normal, Anomalous };

struct Detection {
  Verdict verdict = Verdict::Normal;
  double score = 0.0;
};

/// Anomalous iff score > threshold.
inline Verdict classify_score(double score, const AnomalyThreshold& threshold) {
  return score > threshold.score_threshold ? Verdict::Anomalous : Verdict::Normal;
}

Detection detect_anomaly(const PredictorModel& model, const AnomalyThreshold& threshold, const FlowSequence& seq);

}  // namespace flowsentry
