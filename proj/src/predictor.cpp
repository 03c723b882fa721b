#include "flowsentry/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "flowsentry/error.hpp"
#include "flowsentry/optim.hpp"

namespace flowsentry {

namespace {

double squared_distance(const Matrix& a, Eigen::Index ra, const Matrix& b, Eigen::Index rb) {
  return (a.row(ra) - b.row(rb)).squaredNorm();
}

std::size_t distinct_rows(const Matrix& points) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    rows.emplace_back(points.row(i).data(), points.row(i).data() + points.cols());
  }
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

std::size_t nearest(const Matrix& centroids, const Matrix& points, Eigen::Index row) {
  std::size_t best = 0;
  double best_d = squared_distance(centroids, 0, points, row);
  for (Eigen::Index k = 1; k < centroids.rows(); ++k) {
    const double d = squared_distance(centroids, k, points, row);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

/// k-means++: each new centroid drawn with probability proportional to the
/// squared distance to the nearest one already chosen.
Matrix seed_centroids(const Matrix& points, std::size_t vocab, Rng& rng) {
  const auto n = points.rows();
  Matrix centroids(static_cast<Eigen::Index>(vocab), points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points, i, centroids, 0);

  for (std::size_t k = 1; k < vocab; ++k) {
    double total = 0.0;
    for (double d : d2) total += d;
    const double target = rng.uniform() * total;
    double cumulative = 0.0;
    Eigen::Index chosen = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = d2[static_cast<std::size_t>(i)];
      if (d <= 0.0) continue;
      chosen = i;
      cumulative += d;
      if (cumulative > target) break;
    }
    const auto row = static_cast<Eigen::Index>(k);
    centroids.row(row) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, squared_distance(points, i, centroids, row));
    }
  }
  return centroids;
}

}  // namespace

DiscreteCodebook fit_codebook(const Matrix& points, std::size_t vocab, std::uint64_t seed,
                              std::size_t max_iterations) {
  if (vocab < 2) throw Error(Errc::InsufficientDistinctPoints, "codebook needs V >= 2");
  const std::size_t distinct = distinct_rows(points);
  if (distinct < vocab) {
    throw Error(Errc::InsufficientDistinctPoints,
                std::to_string(distinct) + " distinct points for V=" + std::to_string(vocab));
  }
  Rng rng(seed);
  Matrix centroids = seed_centroids(points, vocab, rng);
  const auto n = points.rows();
  std::vector<std::size_t> assignment(static_cast<std::size_t>(n), vocab);

  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t a = nearest(centroids, points, i);
      if (a != assignment[static_cast<std::size_t>(i)]) changed = true;
      assignment[static_cast<std::size_t>(i)] = a;
    }
    if (!changed) break;

    Matrix sums = Matrix::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(vocab, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = assignment[static_cast<std::size_t>(i)];
      sums.row(static_cast<Eigen::Index>(a)) += points.row(i);
      ++counts[a];
    }
    for (std::size_t k = 0; k < vocab; ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      if (counts[k] > 0) {
        centroids.row(row) = sums.row(row) / static_cast<double>(counts[k]);
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto a = static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)]);
        const double d = squared_distance(points, i, centroids, a);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids.row(row) = points.row(far);
      assignment[static_cast<std::size_t>(far)] = k;
    }
  }
  return DiscreteCodebook{std::move(centroids)};
}

DiscreteCodebook fit_codebook(std::span<const FeatureVector> features, std::size_t vocab, std::uint64_t seed) {
  Matrix points(static_cast<Eigen::Index>(features.size()), static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = features[i][f];
    }
  }
  return fit_codebook(points, vocab, seed);
}

std::size_t quantize(const DiscreteCodebook& codebook, std::span<const double> point) {
  if (point.size() != codebook.dim()) throw Error(Errc::DimensionMismatch, "point and codebook dimensions differ");
  Matrix p(1, static_cast<Eigen::Index>(point.size()));
  for (std::size_t f = 0; f < point.size(); ++f) p(0, static_cast<Eigen::Index>(f)) = point[f];
  return nearest(codebook.centroids, p, 0);
}

// ---------------------------------------------------------------------------

PredictorParams init_predictor(const EncoderConfig& config, std::size_t vocab, Rng& rng) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto v = static_cast<Eigen::Index>(vocab);
  PredictorParams p;
  p.embedding = gaussian_matrix(v + 1, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.encoder = init_encoder(config, rng);
  p.output = xavier_uniform(d, v, rng);
  p.output_bias = Matrix::Zero(1, v);
  return p;
}

PredictorParams zero_predictor(const EncoderConfig& config, std::size_t vocab) {
  Rng unused(0);
  PredictorParams p = init_predictor(config, vocab, unused);
  zero_tensors(p);
  return p;
}

MaskMode mask_mode_for(PredictorMode mode) {
  return mode == PredictorMode::NextToken ? MaskMode::Causal : MaskMode::Bidirectional;
}

namespace {

std::size_t vocab_of(const PredictorParams& params) { return static_cast<std::size_t>(params.output.cols()); }

Matrix embed(const PredictorParams& params, const TokenSequence& seq, std::span<const std::uint8_t> masked) {
  const std::size_t vocab = vocab_of(params);
  if (seq.valid.size() != seq.tokens.size()) throw Error(Errc::DimensionMismatch, "token mask length differs");
  if (!masked.empty() && masked.size() != seq.tokens.size()) {
    throw Error(Errc::DimensionMismatch, "masked-position flags length differs");
  }
  Matrix rows(static_cast<Eigen::Index>(seq.length()), params.embedding.cols());
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (seq.tokens[i] >= vocab) throw Error(Errc::DimensionMismatch, "token id outside the vocabulary");
    const std::size_t id = !masked.empty() && masked[i] ? vocab : seq.tokens[i];
    rows.row(static_cast<Eigen::Index>(i)) = params.embedding.row(static_cast<Eigen::Index>(id));
  }
  return rows;
}

double log_sum_exp(const Matrix& logits, Eigen::Index row) {
  const double m = logits.row(row).maxCoeff();
  return m + std::log((logits.row(row).array() - m).exp().sum());
}

/// (logit row, target position) pairs that carry loss or score.
std::vector<std::pair<std::size_t, std::size_t>> sites(PredictorMode mode, const TokenSequence& seq,
                                                       std::span<const std::uint8_t> masked) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < seq.length(); ++s) {
    if (!seq.valid[s]) continue;
    if (mode == PredictorMode::NextToken) {
      if (s >= 1 && seq.valid[s - 1]) out.emplace_back(s - 1, s);
    } else if (!masked.empty() && masked[s]) {
      out.emplace_back(s, s);
    }
  }
  return out;
}

}  // namespace

Matrix predictor_logits(const EncoderConfig& config, const PredictorParams& params, const TokenSequence& seq,
                        std::span<const std::uint8_t> masked) {
  const Matrix h = encode(config, params.encoder, embed(params, seq, masked), seq.valid);
  return (h * params.output).rowwise() + params.output_bias.row(0);
}

std::vector<double> softmax_row(const Matrix& logits, Eigen::Index row) {
  const double lse = log_sum_exp(logits, row);
  std::vector<double> p(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index k = 0; k < logits.cols(); ++k) p[static_cast<std::size_t>(k)] = std::exp(logits(row, k) - lse);
  return p;
}

PredictorLossAndGrads predictor_loss_and_grads(const EncoderConfig& config, PredictorMode mode,
                                               const PredictorParams& params, std::span<const TokenSequence> batch,
                                               std::span<const std::vector<std::uint8_t>> masks,
                                               Rng* dropout_rng) {
  auto mask_of = [&](std::size_t b) -> std::span<const std::uint8_t> {
    if (mode == PredictorMode::NextToken || b >= masks.size()) return {};
    return masks[b];
  };
  PredictorLossAndGrads out;
  for (std::size_t b = 0; b < batch.size(); ++b) out.sites += sites(mode, batch[b], mask_of(b)).size();
  if (out.sites == 0) throw Error(Errc::AllPositionsMasked, "no predictable position in batch");
  const double inv_n = 1.0 / static_cast<double>(out.sites);

  out.grads = zero_predictor(config, vocab_of(params));
  PredictorParams& g = out.grads;
  const std::size_t vocab = vocab_of(params);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TokenSequence& seq = batch[b];
    const auto masked = mask_of(b);
    const auto todo = sites(mode, seq, masked);
    if (todo.empty()) continue;
    const EncoderTrace trace = encode_forward(config, params.encoder, embed(params, seq, masked), seq.valid, dropout_rng);
    const Matrix& h = trace.output;
    const Matrix logits = (h * params.output).rowwise() + params.output_bias.row(0);

    Matrix d_logits = Matrix::Zero(logits.rows(), logits.cols());
    for (const auto& [row, target] : todo) {
      const auto r = static_cast<Eigen::Index>(row);
      const auto t = static_cast<Eigen::Index>(seq.tokens[target]);
      const double lse = log_sum_exp(logits, r);
      out.loss += (lse - logits(r, t)) * inv_n;
      d_logits.row(r) += ((logits.row(r).array() - lse).exp() * inv_n).matrix();
      d_logits(r, t) -= inv_n;
    }

    g.output += h.transpose() * d_logits;
    g.output_bias.row(0) += d_logits.colwise().sum();
    const Matrix d_h = d_logits * params.output.transpose();
    const Matrix d_rows = encode_backward(config, params.encoder, trace, d_h, g.encoder);
    for (std::size_t i = 0; i < seq.length(); ++i) {
      const std::size_t id = !masked.empty() && masked[i] ? vocab : seq.tokens[i];
      g.embedding.row(static_cast<Eigen::Index>(id)) += d_rows.row(static_cast<Eigen::Index>(i));
    }
  }
  return out;
}

TokenTrainResult train_token_predictor(std::span<const TokenSequence> sequences, const PredictorConfig& predictor,
                                       EncoderConfig config, const TrainConfig& tc) {
  config.mask_mode = mask_mode_for(predictor.mode);
  config.validate();
  if (tc.batch_size == 0) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
  if (predictor.mask_rate <= 0.0 || predictor.mask_rate > 1.0) {
    throw Error(Errc::InvalidConfig, "mask_rate must be in (0, 1]");
  }

  // In Masked mode every sequence with a valid position is usable because at
  // least one position is always masked.
  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    const bool any_valid = std::any_of(seq.valid.begin(), seq.valid.end(), [](std::uint8_t v) { return v != 0; });
    const bool ok = predictor.mode == PredictorMode::Masked ? any_valid : !sites(predictor.mode, seq, {}).empty();
    if (ok) usable.push_back(s);
  }
  if (usable.empty()) throw Error(Errc::NoLabeledData, "no predictable position in the training sequences");

  TokenTrainResult result;
  Rng init_rng(mix_seed(tc.seed, 10));
  result.params = init_predictor(config, predictor.vocab, init_rng);
  Rng shuffle_rng(mix_seed(tc.seed, 11));
  Rng dropout_rng(mix_seed(tc.seed, 12));
  Rng mask_rng(mix_seed(tc.seed, 13));
  Adam adam(tc.learning_rate);
  const auto param_ptrs = tensor_pointers(result.params);

  std::vector<TokenSequence> batch;
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(usable));
    double epoch_loss = 0.0;
    std::size_t epoch_sites = 0;
    for (std::size_t start = 0; start < usable.size(); start += tc.batch_size) {
      batch.clear();
      masks.clear();
      const std::size_t end = std::min(usable.size(), start + tc.batch_size);
      for (std::size_t b = start; b < end; ++b) {
        const TokenSequence& seq = sequences[usable[b]];
        batch.push_back(seq);
        if (predictor.mode != PredictorMode::Masked) continue;
        std::vector<std::uint8_t> m(seq.length(), 0);
        std::vector<std::size_t> valid_positions;
        for (std::size_t i = 0; i < seq.length(); ++i) {
          if (!seq.valid[i]) continue;
          valid_positions.push_back(i);
          m[i] = mask_rng.bernoulli(predictor.mask_rate) ? 1 : 0;
        }
        if (std::none_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; })) {
          m[valid_positions[mask_rng.below(valid_positions.size())]] = 1;
        }
        masks.push_back(std::move(m));
      }
      const auto lg = predictor_loss_and_grads(config, predictor.mode, result.params, batch, masks, &dropout_rng);
      adam.step(param_ptrs, tensor_pointers(lg.grads));
      epoch_loss += lg.loss * static_cast<double>(lg.sites);
      epoch_sites += lg.sites;
    }
    result.history.push_back(epoch_loss / static_cast<double>(epoch_sites));
  }
  return result;
}

TokenSequence tokenize_flows(const PredictorModel& model, const FlowSequence& seq) {
  TokenSequence out;
  out.valid = seq.valid;
  out.tokens.reserve(seq.length());
  for (const auto& pos : seq.positions) {
    const FeatureVector z = model.normalizer.normalize(pos.features);
    out.tokens.push_back(quantize(model.codebook, z));
  }
  return out;
}

PredictorModel train_predictor(std::span<const FlowSequence> benign, const SequencerConfig& sequencer,
                               const PredictorConfig& predictor, const EncoderConfig& config,
                               const TrainConfig& train) {
  for (const auto& seq : benign) {
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (seq.valid[i] && seq.positions[i].label == Label::Malicious) {
        throw Error(Errc::MaliciousInTrainingSet,
                    "flow " + std::to_string(seq.positions[i].flow_index) + " is labeled Malicious");
      }
    }
  }
  PredictorModel model;
  model.predictor = predictor;
  model.sequencer = sequencer;
  model.config = config;
  model.config.mask_mode = mask_mode_for(predictor.mode);
  model.config.validate();

  const auto raw = valid_features(benign);
  model.normalizer = fit_normalizer(raw);
  std::vector<FeatureVector> normalized;
  normalized.reserve(raw.size());
  for (const auto& v : raw) normalized.push_back(model.normalizer.normalize(v));
  model.codebook = fit_codebook(normalized, predictor.vocab, mix_seed(train.seed, 14));

  std::vector<TokenSequence> tokens;
  tokens.reserve(benign.size());
  for (const auto& seq : benign) tokens.push_back(tokenize_flows(model, seq));
  auto trained = train_token_predictor(tokens, predictor, model.config, train);
  model.params = std::move(trained.params);
  model.history = std::move(trained.history);
  return model;
}

// ---------------------------------------------------------------------------

SequenceScore nll_scores(const EncoderConfig& config, PredictorMode mode, ScoreReduction reduction,
                         const PredictorParams& params, const TokenSequence& seq) {
  SequenceScore out;
  auto record = [&](std::size_t position, const Matrix& logits, std::size_t row) {
    const auto r = static_cast<Eigen::Index>(row);
    out.positions.push_back(position);
    out.nll.push_back(log_sum_exp(logits, r) - logits(r, static_cast<Eigen::Index>(seq.tokens[position])));
  };
  if (mode == PredictorMode::NextToken) {
    const Matrix logits = predictor_logits(config, params, seq);
    for (const auto& [row, target] : sites(mode, seq, {})) record(target, logits, row);
  } else {
    std::vector<std::uint8_t> masked(seq.length(), 0);
    for (std::size_t s = 0; s < seq.length(); ++s) {
      if (!seq.valid[s]) continue;
      masked[s] = 1;
      record(s, predictor_logits(config, params, seq, masked), s);
      masked[s] = 0;
    }
  }
  if (!out.nll.empty()) {
    double sum = 0.0;
    for (double v : out.nll) sum += v;
    out.mean = sum / static_cast<double>(out.nll.size());
    out.max = *std::max_element(out.nll.begin(), out.nll.end());
  }
  out.score = reduction == ScoreReduction::Max ? out.max : out.mean;
  return out;
}

SequenceScore nll_scores(const PredictorModel& model, const FlowSequence& seq) {
  return nll_scores(model.config, model.predictor.mode, model.predictor.reduction, model.params,
                    tokenize_flows(model, seq));
}

AnomalyThreshold calibrate_threshold(std::span<const double> benign_scores, double q) {
  if (benign_scores.empty()) throw Error(Errc::EmptyValidation, "no benign validation scores");
  if (!(q > 0.0 && q <= 1.0)) throw Error(Errc::InvalidConfig, "calibration quantile must be in (0, 1]");
  std::vector<double> sorted(benign_scores.begin(), benign_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // The epsilon keeps q*n that is an integer up to rounding from stepping up a rank.
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return AnomalyThreshold{sorted[rank - 1], q};
}

AnomalyThreshold calibrate_threshold(const PredictorModel& model, std::span<const FlowSequence> benign, double q) {
  std::vector<double> scores;
  scores.reserve(benign.size());
  for (const auto& seq : benign) scores.push_back(nll_scores(model, seq).score);
  return calibrate_threshold(scores, q);
}

Detection detect_anomaly(const PredictorModel& model, const AnomalyThreshold& threshold, const FlowSequence& seq) {
  const double score = nll_scores(model, seq).score;
  return Detection{classify_score(score, threshold), score};
}

}  // namespace flowsentry
