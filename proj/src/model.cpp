#include "flowsentry/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowsentry/error.hpp"
#include "flowsentry/optim.hpp"

namespace flowsentry {

FeatureVector Normalizer::normalize(const FeatureVector& v) const {
  FeatureVector z;
  for (std::size_t i = 0; i < kFeatureCount; ++i) z[i] = (v[i] - mean[i]) / std[i];
  return z;
}

FeatureVector Normalizer::denormalize(const FeatureVector& z) const {
  FeatureVector v;
  for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = z[i] * std[i] + mean[i];
  return v;
}

Normalizer fit_normalizer(std::span<const FeatureVector> features) {
  if (features.empty()) throw Error(Errc::EmptyFit, "normalizer needs at least one feature vector");
  Normalizer norm;
  const auto n = static_cast<double>(features.size());
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    double sum = 0.0;
    for (const auto& f : features) sum += f[i];
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& f : features) sq += (f[i] - mean) * (f[i] - mean);
    norm.mean[i] = mean;
    norm.std[i] = std::max(std::sqrt(sq / n), kNormalizerEps);
  }
  return norm;
}

std::vector<FeatureVector> valid_features(std::span<const FlowSequence> sequences) {
  std::vector<FeatureVector> out;
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (seq.valid[i]) out.push_back(seq.positions[i].features);
    }
  }
  return out;
}

ClassifierParams init_classifier(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.d_model);
  ClassifierParams p;
  p.tokenizer.projection = xavier_uniform(kFeatureCount, d, rng);
  p.tokenizer.bias = Matrix::Zero(1, d);
  p.encoder = init_encoder(config, rng);
  p.head.hidden = xavier_uniform(d, d, rng);
  p.head.hidden_bias = Matrix::Zero(1, d);
  p.head.out = xavier_uniform(d, 1, rng);
  p.head.out_bias = Matrix::Zero(1, 1);
  return p;
}

ClassifierParams zero_classifier(const EncoderConfig& config) {
  Rng unused(0);
  ClassifierParams p = init_classifier(config, unused);
  zero_tensors(p);
  return p;
}

namespace {

Matrix normalized_rows(const Normalizer& norm, const FlowSequence& seq) {
  Matrix x(static_cast<Eigen::Index>(seq.length()), static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t i = 0; i < seq.length(); ++i) {
    const FeatureVector z = norm.normalize(seq.positions[i].features);
    for (std::size_t f = 0; f < kFeatureCount; ++f) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = z[f];
  }
  return x;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

bool scored(const FlowSequence& seq, std::size_t i) {
  return seq.valid[i] != 0 && seq.positions[i].label != Label::Unlabeled;
}

}  // namespace

Matrix tokenize_sequence(const Normalizer& norm, const TokenizerParams& tok, const FlowSequence& seq) {
  if (tok.projection.rows() != static_cast<Eigen::Index>(kFeatureCount) || tok.bias.cols() != tok.projection.cols()) {
    throw Error(Errc::DimensionMismatch, "tokenizer projection must be F x d_model");
  }
  if (seq.valid.size() != seq.positions.size()) {
    throw Error(Errc::DimensionMismatch, "sequence mask length differs from position count");
  }
  return (normalized_rows(norm, seq) * tok.projection).rowwise() + tok.bias.row(0);
}

double logistic(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

std::vector<double> head_logits(const HeadParams& head, const Matrix& h) {
  const Matrix hidden = ((h * head.hidden).rowwise() + head.hidden_bias.row(0)).cwiseMax(0.0);
  const Matrix logits = (hidden * head.out).array() + head.out_bias(0, 0);
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

LossAndGrads loss_and_grads(const EncoderConfig& config, const Normalizer& norm, const ClassifierParams& params,
                            std::span<const FlowSequence> batch, Rng* dropout_rng) {
  LossAndGrads out;
  for (const auto& seq : batch) {
    for (std::size_t i = 0; i < seq.length(); ++i) out.positions += scored(seq, i) ? 1 : 0;
  }
  if (out.positions == 0) throw Error(Errc::AllPositionsMasked, "no labeled valid position in batch");
  const double inv_n = 1.0 / static_cast<double>(out.positions);

  out.grads = zero_classifier(config);
  ClassifierParams& g = out.grads;
  for (const auto& seq : batch) {
    const Matrix x = normalized_rows(norm, seq);
    const Matrix tokens = (x * params.tokenizer.projection).rowwise() + params.tokenizer.bias.row(0);
    const EncoderTrace trace = encode_forward(config, params.encoder, tokens, seq.valid, dropout_rng);
    const Matrix& h = trace.output;
    const Matrix hidden_pre = (h * params.head.hidden).rowwise() + params.head.hidden_bias.row(0);
    const Matrix hidden = hidden_pre.cwiseMax(0.0);
    const Matrix logits = (hidden * params.head.out).array() + params.head.out_bias(0, 0);

    Matrix d_logits = Matrix::Zero(logits.rows(), 1);
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (!scored(seq, i)) continue;
      const auto r = static_cast<Eigen::Index>(i);
      const double y = seq.positions[i].label == Label::Malicious ? 1.0 : 0.0;
      out.loss += (softplus(logits(r, 0)) - y * logits(r, 0)) * inv_n;
      d_logits(r, 0) = (logistic(logits(r, 0)) - y) * inv_n;
    }

    g.head.out += hidden.transpose() * d_logits;
    g.head.out_bias(0, 0) += d_logits.sum();
    const Matrix d_hidden = (d_logits * params.head.out.transpose()).array() * (hidden_pre.array() > 0.0).cast<double>();
    g.head.hidden += h.transpose() * d_hidden;
    g.head.hidden_bias.row(0) += d_hidden.colwise().sum();
    const Matrix d_h = d_hidden * params.head.hidden.transpose();

    const Matrix d_tokens = encode_backward(config, params.encoder, trace, d_h, g.encoder);
    g.tokenizer.projection += x.transpose() * d_tokens;
    g.tokenizer.bias.row(0) += d_tokens.colwise().sum();
  }
  return out;
}

double batch_loss(const EncoderConfig& config, const Normalizer& norm, const ClassifierParams& params,
                  std::span<const FlowSequence> batch) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& seq : batch) {
    const Matrix tokens = tokenize_sequence(norm, params.tokenizer, seq);
    const auto logits = head_logits(params.head, encode(config, params.encoder, tokens, seq.valid));
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (!scored(seq, i)) continue;
      const double y = seq.positions[i].label == Label::Malicious ? 1.0 : 0.0;
      total += softplus(logits[i]) - y * logits[i];
      ++n;
    }
  }
  if (n == 0) throw Error(Errc::AllPositionsMasked, "no labeled valid position in batch");
  return total / static_cast<double>(n);
}

TrainedModel train_sequences(std::span<const FlowSequence> sequences, const SequencerConfig& sequencer,
                             const EncoderConfig& config, const TrainConfig& tc) {
  config.validate();
  if (tc.batch_size == 0) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (scored(seq, i)) {
        usable.push_back(s);
        break;
      }
    }
  }
  if (usable.empty()) throw Error(Errc::NoLabeledData, "training data has no labeled flows");

  TrainedModel model;
  model.sequencer = sequencer;
  model.config = config;
  model.normalizer = fit_normalizer(valid_features(sequences));
  Rng init_rng(mix_seed(tc.seed, 10));
  model.params = init_classifier(config, init_rng);

  Rng shuffle_rng(mix_seed(tc.seed, 11));
  Rng dropout_rng(mix_seed(tc.seed, 12));
  Adam adam(tc.learning_rate);
  const auto param_ptrs = tensor_pointers(model.params);

  std::vector<FlowSequence> batch;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(usable));
    double epoch_loss = 0.0;
    std::size_t epoch_positions = 0;
    for (std::size_t start = 0; start < usable.size(); start += tc.batch_size) {
      batch.clear();
      const std::size_t end = std::min(usable.size(), start + tc.batch_size);
      for (std::size_t b = start; b < end; ++b) batch.push_back(sequences[usable[b]]);
      LossAndGrads lg = loss_and_grads(config, model.normalizer, model.params, batch, &dropout_rng);
      adam.step(param_ptrs, tensor_pointers(std::as_const(lg.grads)));
      epoch_loss += lg.loss * static_cast<double>(lg.positions);
      epoch_positions += lg.positions;
    }
    model.history.push_back(epoch_loss / static_cast<double>(epoch_positions));
  }
  return model;
}

TrainedModel train(std::span<const FlowDataset> datasets, const SequencerConfig& sequencer,
                   const EncoderConfig& config, const TrainConfig& tc) {
  std::vector<FlowSequence> sequences;
  for (const auto& ds : datasets) {
    auto seqs = sequentialize_dataset(ds.flows, sequencer);
    sequences.insert(sequences.end(), std::make_move_iterator(seqs.begin()), std::make_move_iterator(seqs.end()));
  }
  return train_sequences(sequences, sequencer, config, tc);
}

std::vector<PositionPrediction> predict(const TrainedModel& model, const FlowSequence& sequence) {
  const Matrix tokens = tokenize_sequence(model.normalizer, model.params.tokenizer, sequence);
  const auto logits = head_logits(model.params.head, encode(model.config, model.params.encoder, tokens, sequence.valid));
  std::vector<PositionPrediction> out;
  for (std::size_t i = 0; i < sequence.length(); ++i) {
    if (!sequence.valid[i]) continue;
    const double p = logistic(logits[i]);
    out.push_back({i, sequence.positions[i].flow_index, p, p > 0.5 ? Label::Malicious : Label::Benign});
  }
  return out;
}

std::vector<double> predict_flow_probabilities(const TrainedModel& model, const FlowDataset& dataset) {
  std::vector<double> probs(dataset.flows.size(), 0.0);
  for (const auto& seq : sequentialize_dataset(dataset.flows, model.sequencer)) {
    for (const auto& p : predict(model, seq)) probs[p.flow_index] = p.probability;
  }
  return probs;
}

}  // namespace flowsentry
