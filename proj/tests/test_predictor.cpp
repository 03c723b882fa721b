#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "flowsentry/error.hpp"
#include "flowsentry/experiment.hpp"
#include "flowsentry/optim.hpp"
#include "flowsentry/predictor.hpp"
#include "test_support.hpp"

using namespace flowsentry;
namespace ft = flowsentry::testing;

namespace {

DiscreteCodebook two_point_codebook() {
  DiscreteCodebook cb;
  cb.centroids = Matrix(2, 2);
  cb.centroids << 0.0, 0.0, 1.0, 1.0;
  return cb;
}

TokenSequence random_tokens(Rng& rng, std::size_t T, std::size_t vocab, std::size_t padded = 0) {
  TokenSequence s;
  for (std::size_t i = 0; i < T; ++i) {
    s.tokens.push_back(rng.below(vocab));
    s.valid.push_back(i + padded < T ? 1 : 0);
  }
  return s;
}

double token_batch_loss(const EncoderConfig& c, PredictorMode mode, const PredictorParams& p,
                        std::span<const TokenSequence> batch, std::span<const std::vector<std::uint8_t>> masks) {
  return predictor_loss_and_grads(c, mode, p, batch, masks).loss;
}

std::vector<FlowSequence> benign_sequences(std::uint64_t seed, std::size_t n_sequences, std::size_t T = 8) {
  ScenarioConfig s = default_scenario(seed);
  s.n_attack_flows = 0;
  s.n_benign_flows = n_sequences * T;
  SequencerConfig sc;
  sc.length = T;
  sc.window_flows = 8 * T;
  return sequentialize_dataset(generate_scenario(s).flows, sc);
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.max_length = 8;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Codebook

TEST(Quantize, NearestCentroid) {
  const auto cb = two_point_codebook();
  const double p[] = {0.2, 0.1};
  EXPECT_EQ(quantize(cb, p), 0u);
  const double q[] = {1.0, 1.0};
  EXPECT_EQ(quantize(cb, q), 1u);
}

TEST(Quantize, TieGoesToLowestIndex) {
  const auto cb = two_point_codebook();
  const double p[] = {0.5, 0.5};
  EXPECT_EQ(quantize(cb, p), 0u);
}

TEST(Quantize, DimensionChecked) {
  const double p[] = {0.5, 0.5, 0.5};
  EXPECT_THROW(quantize(two_point_codebook(), p), Error);
}

TEST(Codebook, TwoBlobsRecoverBlobMeans) {
  Rng rng(4);
  Matrix pts(400, 3);
  Eigen::RowVector3d mean_a = Eigen::RowVector3d::Zero(), mean_b = Eigen::RowVector3d::Zero();
  for (Eigen::Index i = 0; i < 400; ++i) {
    const double base = i < 200 ? -5.0 : 5.0;
    for (Eigen::Index f = 0; f < 3; ++f) pts(i, f) = base + rng.normal(0.0, 0.3);
    if (i < 200) mean_a += pts.row(i);
    else mean_b += pts.row(i);
  }
  mean_a /= 200.0;
  mean_b /= 200.0;
  const auto cb = fit_codebook(pts, 2, 1);
  const auto first = cb.centroids.row(0)(0) < 0.0 ? 0 : 1;
  EXPECT_LE((cb.centroids.row(first) - mean_a).norm(), 0.1);
  EXPECT_LE((cb.centroids.row(1 - first) - mean_b).norm(), 0.1);
}

TEST(Codebook, SaturationEveryPointItsOwnCentroid) {
  Rng rng(5);
  Matrix pts(12, 2);
  for (Eigen::Index i = 0; i < 12; ++i) pts.row(i) << rng.normal(), rng.normal();
  Matrix dup(24, 2);
  dup << pts, pts;  // duplicates do not add distinct points
  const auto cb = fit_codebook(dup, 12, 9);
  std::set<std::vector<double>> want, got;
  for (Eigen::Index i = 0; i < 12; ++i) {
    want.insert({pts(i, 0), pts(i, 1)});
    got.insert({cb.centroids(i, 0), cb.centroids(i, 1)});
  }
  EXPECT_EQ(got, want);
}

TEST(Codebook, DeterministicAndDistinct) {
  Rng rng(6);
  Matrix pts(300, 4);
  for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
  const auto a = fit_codebook(pts, 16, 77);
  const auto b = fit_codebook(pts, 16, 77);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_TRUE(a.centroids.allFinite());
  for (Eigen::Index i = 0; i < 16; ++i) {
    for (Eigen::Index j = i + 1; j < 16; ++j) EXPECT_GT((a.centroids.row(i) - a.centroids.row(j)).norm(), 0.0);
  }
}

TEST(Codebook, NoEmptyClustersProperty) {
  // Every centroid owns at least one point after fitting, including runs
  // where Lloyd steps empty a cluster and force a re-seed.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Matrix pts(60, 2);
    for (Eigen::Index i = 0; i < 60; ++i) {
      const double cx = static_cast<double>(rng.below(3)) * 10.0;
      pts.row(i) << cx + rng.normal(0.0, 0.5), rng.normal(0.0, 0.5);
    }
    const auto cb = fit_codebook(pts, 8, seed);
    std::vector<int> owned(8, 0);
    for (Eigen::Index i = 0; i < 60; ++i) {
      const double p[] = {pts(i, 0), pts(i, 1)};
      ++owned[quantize(cb, p)];
    }
    EXPECT_EQ(std::count(owned.begin(), owned.end(), 0), 0) << "seed " << seed;
  }
}

TEST(Codebook, InsufficientDistinctPoints) {
  Matrix pts = Matrix::Ones(10, 2);
  pts(0, 0) = 2.0;
  try {
    fit_codebook(pts, 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientDistinctPoints);
  }
  EXPECT_THROW(fit_codebook(pts, 1, 1), Error);
}

// ---------------------------------------------------------------------------
// Token model

TEST(PredictorModel, UniformLogitsGiveLogV) {
  auto c = small_config();
  c.mask_mode = MaskMode::Causal;
  Rng rng(1);
  PredictorParams p = init_predictor(c, 10, rng);
  p.output.setZero();
  p.output_bias.setZero();
  const auto seq = random_tokens(rng, 6, 10);
  for (PredictorMode mode : {PredictorMode::NextToken, PredictorMode::Masked}) {
    c.mask_mode = mask_mode_for(mode);
    const auto s = nll_scores(c, mode, ScoreReduction::Mean, p, seq);
    ASSERT_FALSE(s.nll.empty());
    for (double v : s.nll) EXPECT_NEAR(v, std::log(10.0), 1e-12);
  }
}

TEST(PredictorModel, BigramSoftmaxOracle) {
  // No attention layers and zero positional rows: h_t is the embedding of
  // token t, so with an identity output projection the next-token
  // distribution is softmax(embedding row of the previous token).
  EncoderConfig c;
  c.d_model = 3;
  c.n_heads = 1;
  c.n_layers = 0;
  c.d_ff = 3;
  c.max_length = 4;
  c.mask_mode = MaskMode::Causal;
  PredictorParams p = zero_predictor(c, 3);
  const double table[3][3] = {{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}, {0.25, 0.5, 0.25}};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) p.embedding(a, b) = std::log(table[a][b]) + 0.3 * a;  // row shifts cancel
  }
  p.output = Matrix::Identity(3, 3);
  TokenSequence seq{{0, 2, 1, 2}, {1, 1, 1, 1}};
  const auto s = nll_scores(c, PredictorMode::NextToken, ScoreReduction::Mean, p, seq);
  ASSERT_EQ(s.positions, (std::vector<std::size_t>{1, 2, 3}));
  const double want[] = {-std::log(0.1), -std::log(0.5), -std::log(0.8)};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.nll[i], want[i], 1e-12);
  EXPECT_NEAR(s.mean, (want[0] + want[1] + want[2]) / 3.0, 1e-12);
  EXPECT_NEAR(s.max, want[0], 1e-12);
  const auto mx = nll_scores(c, PredictorMode::NextToken, ScoreReduction::Max, p, seq);
  EXPECT_EQ(mx.score, mx.max);
}

TEST(PredictorModel, DistributionsSumToOne) {
  Rng rng(2);
  for (PredictorMode mode : {PredictorMode::NextToken, PredictorMode::Masked}) {
    auto c = small_config();
    c.mask_mode = mask_mode_for(mode);
    const PredictorParams p = init_predictor(c, 20, rng);
    for (int trial = 0; trial < 20; ++trial) {
      const auto seq = random_tokens(rng, 8, 20, trial % 3);
      std::vector<std::uint8_t> masked(8, 0);
      masked[rng.below(8)] = 1;
      const Matrix logits = predictor_logits(c, p, seq, masked);
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const auto dist = softmax_row(logits, r);
        EXPECT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-9);
      }
    }
  }
}

TEST(PredictorModel, NllNonNegative) {
  Rng rng(3);
  auto c = small_config();
  c.mask_mode = MaskMode::Causal;
  PredictorParams p = init_predictor(c, 5, rng);
  p.output *= 50.0;  // very peaked distributions
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = nll_scores(c, PredictorMode::NextToken, ScoreReduction::Mean, p, random_tokens(rng, 8, 5));
    for (double v : s.nll) EXPECT_GE(v, 0.0);
  }
}

TEST(PredictorModel, NextTokenIgnoresTheFuture) {
  Rng rng(8);
  auto c = small_config();
  c.mask_mode = MaskMode::Causal;
  const PredictorParams p = init_predictor(c, 12, rng);
  for (int trial = 0; trial < 30; ++trial) {
    auto a = random_tokens(rng, 8, 12);
    const std::size_t t = 1 + rng.below(6);
    auto b = a;
    for (std::size_t j = t + 1; j < 8; ++j) b.tokens[j] = rng.below(12);
    const auto sa = nll_scores(c, PredictorMode::NextToken, ScoreReduction::Mean, p, a);
    const auto sb = nll_scores(c, PredictorMode::NextToken, ScoreReduction::Mean, p, b);
    for (std::size_t k = 0; k < sa.positions.size() && sa.positions[k] <= t; ++k) {
      EXPECT_EQ(sa.nll[k], sb.nll[k]) << "position " << sa.positions[k];
    }
  }
}

TEST(PredictorModel, GradientsMatchFiniteDifferences) {
  for (PredictorMode mode : {PredictorMode::NextToken, PredictorMode::Masked}) {
    Rng rng(31);
    auto c = ft::tiny_encoder_config(mask_mode_for(mode));
    const PredictorParams p = init_predictor(c, 5, rng);
    std::vector<TokenSequence> batch{random_tokens(rng, 4, 5), random_tokens(rng, 4, 5, 1)};
    std::vector<std::vector<std::uint8_t>> masks{{1, 0, 1, 0}, {0, 1, 0, 0}};
    const auto lg = predictor_loss_and_grads(c, mode, p, batch, masks);
    auto result = ft::finite_difference_check<PredictorParams>(
        p, lg.grads, [&](const PredictorParams& q) { return token_batch_loss(c, mode, q, batch, masks); });
    EXPECT_LE(result.max_rel_error, 1e-3) << result.worst_tensor;
    EXPECT_GT(result.checked, 400u);
  }
}

TEST(PredictorModel, NoSiteThrows) {
  auto c = small_config();
  Rng rng(1);
  const auto p = init_predictor(c, 4, rng);
  std::vector<TokenSequence> batch{TokenSequence{{1, 2}, {1, 0}}};
  try {
    predictor_loss_and_grads(c, PredictorMode::NextToken, p, batch, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::AllPositionsMasked);
  }
}

TEST(PredictorTrain, ConstantCorpusIsLearned) {
  for (PredictorMode mode : {PredictorMode::NextToken, PredictorMode::Masked}) {
    std::vector<TokenSequence> corpus(64, TokenSequence{std::vector<std::size_t>(8, 3), std::vector<std::uint8_t>(8, 1)});
    PredictorConfig pc;
    pc.mode = mode;
    pc.vocab = 6;
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.epochs = 20;
    tc.batch_size = 8;
    auto c = small_config();
    const auto trained = train_token_predictor(corpus, pc, c, tc);
    c.mask_mode = mask_mode_for(mode);
    const TokenSequence held_out{std::vector<std::size_t>(6, 3), std::vector<std::uint8_t>(6, 1)};
    const auto s = nll_scores(c, mode, ScoreReduction::Mean, trained.params, held_out);
    for (double v : s.nll) EXPECT_LE(v, 0.05);
  }
}

TEST(PredictorTrain, ZeroLearningRateKeepsParameters) {
  Rng rng(4);
  std::vector<TokenSequence> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(random_tokens(rng, 6, 5));
  PredictorConfig pc;
  pc.vocab = 5;
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 2;
  auto c = small_config();
  const auto trained = train_token_predictor(corpus, pc, c, tc);
  c.mask_mode = MaskMode::Causal;
  Rng init_rng(mix_seed(tc.seed, 10));
  const auto initial = init_predictor(c, 5, init_rng);
  const auto a = tensor_pointers(trained.params);
  const auto b = tensor_pointers(initial);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(PredictorTrain, MaliciousFlowRejected) {
  auto seqs = benign_sequences(5, 20);
  seqs[3].positions[2].label = Label::Malicious;
  try {
    train_predictor(seqs, SequencerConfig{}, PredictorConfig{}, small_config(), TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MaliciousInTrainingSet);
  }
}

TEST(PredictorTrain, DeterministicAndForcesMaskMode) {
  const auto seqs = benign_sequences(6, 120);
  PredictorConfig pc;
  pc.mode = PredictorMode::Masked;
  pc.vocab = 16;
  TrainConfig tc;
  tc.epochs = 2;
  auto c = small_config();
  c.mask_mode = MaskMode::Causal;
  const auto a = train_predictor(seqs, SequencerConfig{}, pc, c, tc);
  const auto b = train_predictor(seqs, SequencerConfig{}, pc, c, tc);
  EXPECT_EQ(a.config.mask_mode, MaskMode::Bidirectional);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.codebook.centroids, b.codebook.centroids);
  EXPECT_EQ(a.params.output, b.params.output);
}

TEST(PredictorTrain, InjectedAttackScoresAboveBenignMedian) {
  const auto train_seqs = benign_sequences(7, 300);
  PredictorConfig pc;
  pc.vocab = 16;
  TrainConfig tc;
  tc.epochs = 4;
  const auto model = train_predictor(train_seqs, SequencerConfig{}, pc, small_config(), tc);
  std::vector<double> benign;
  for (const auto& s : benign_sequences(8, 200)) benign.push_back(nll_scores(model, s).score);
  std::sort(benign.begin(), benign.end());
  const double median = benign[benign.size() / 2];

  ScenarioConfig a = default_scenario(9);
  a.n_benign_flows = 0;
  a.n_attack_flows = 400;
  SequencerConfig sc;
  sc.length = 8;
  sc.window_flows = 64;
  const auto attack = sequentialize_dataset(generate_scenario(a).flows, sc);
  for (const auto& s : attack) EXPECT_GT(nll_scores(model, s).score, median);
}

// ---------------------------------------------------------------------------
// Calibration and detection

TEST(Calibrate, NearestRankOracle) {
  const double s[] = {4, 1, 3, 2};
  EXPECT_EQ(calibrate_threshold(s, 0.5).score_threshold, 2.0);
  EXPECT_EQ(calibrate_threshold(s, 1.0).score_threshold, 4.0);
  EXPECT_EQ(calibrate_threshold(s, 0.01).score_threshold, 1.0);
  EXPECT_EQ(calibrate_threshold(s, 0.75).score_threshold, 3.0);
}

TEST(Calibrate, Errors) {
  try {
    calibrate_threshold(std::span<const double>{}, 0.99);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyValidation);
  }
  const double s[] = {1.0};
  EXPECT_THROW(calibrate_threshold(s, 0.0), Error);
  EXPECT_THROW(calibrate_threshold(s, 1.5), Error);
}

TEST(Calibrate, FlagRateAndMonotonicityProperty) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> scores(n);
    for (auto& v : scores) v = std::floor(rng.uniform(0.0, 20.0));  // ties included
    const double q1 = rng.uniform(0.01, 1.0), q2 = rng.uniform(0.01, 1.0);
    const auto t1 = calibrate_threshold(scores, std::min(q1, q2));
    const auto t2 = calibrate_threshold(scores, std::max(q1, q2));
    EXPECT_LE(t1.score_threshold, t2.score_threshold);
    const auto flagged = std::count_if(scores.begin(), scores.end(),
                                       [&](double v) { return classify_score(v, t2) == Verdict::Anomalous; });
    EXPECT_LE(static_cast<double>(flagged) / static_cast<double>(n), 1.0 - t2.quantile + 1.0 / static_cast<double>(n));
  }
}

TEST(Detect, ThresholdIsStrict) {
  const AnomalyThreshold t{2.5, 0.99};
  EXPECT_EQ(classify_score(2.5, t), Verdict::Normal);
  EXPECT_EQ(classify_score(std::nextafter(2.5, 3.0), t), Verdict::Anomalous);
  EXPECT_EQ(classify_score(2.0, t), Verdict::Normal);
}

TEST(Detect, MatchesScore) {
  const auto seqs = benign_sequences(13, 60);
  PredictorConfig pc;
  pc.vocab = 8;
  TrainConfig tc;
  tc.epochs = 1;
  const auto model = train_predictor(seqs, SequencerConfig{}, pc, small_config(), tc);
  const double score = nll_scores(model, seqs[0]).score;
  const auto at = detect_anomaly(model, AnomalyThreshold{score, 0.99}, seqs[0]);
  EXPECT_EQ(at.verdict, Verdict::Normal);
  EXPECT_EQ(at.score, score);
  EXPECT_EQ(detect_anomaly(model, AnomalyThreshold{score - 1e-9, 0.99}, seqs[0]).verdict, Verdict::Anomalous);
}

TEST(PredictorExperiment, HoldoutFlagRateNearOneMinusQ) {
  PredictorExperimentConfig c;  // 2000 benign hold-out sequences, q = 0.99
  const auto run = run_predictor_experiment(c);
  ASSERT_GE(run.benign_test_sequences, 2000u);
  EXPECT_GE(run.benign_flag_rate, 0.005);
  EXPECT_LE(run.benign_flag_rate, 0.015);
  EXPECT_GE(run.result.report.roc_auc, 0.8);
  EXPECT_EQ(run.result.report.counts.total(), run.benign_test_sequences + run.attack_test_sequences);
}

TEST(PredictorExperiment, DeterministicReports) {
  PredictorExperimentConfig c;
  c.train_sequences = 100;
  c.calibration_sequences = 100;
  c.test_sequences = 100;
  c.attack_flows = 200;
  c.predictor.vocab = 16;
  c.train.epochs = 1;
  const auto a = run_predictor_experiment(c);
  const auto b = run_predictor_experiment(c);
  EXPECT_EQ(report_to_json(a.result.report).dump(), report_to_json(b.result.report).dump());
  EXPECT_EQ(a.result.predictions.size(), a.test.flows.size());
  const auto back = predictor_experiment_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}
