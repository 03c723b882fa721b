#include "flowsentry/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <ostream>
#include <set>

#include "flowsentry/config_json.hpp"
#include "flowsentry/error.hpp"
#include "flowsentry/rng.hpp"

namespace flowsentry {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct PoolRef {
  std::size_t dataset;
  std::size_t flow;
};

/// Draws `count` distinct items from `candidates` (seeded), removing them.
std::vector<PoolRef> draw(std::vector<PoolRef>& candidates, std::size_t count, Rng& rng, const std::string& what) {
  if (candidates.size() < count) {
    throw Error(Errc::InsufficientFlows, "need " + std::to_string(count) + " " + what + " flows, have " +
                                             std::to_string(candidates.size()));
  }
  rng.shuffle(std::span<PoolRef>(candidates));
  std::vector<PoolRef> taken(candidates.end() - static_cast<std::ptrdiff_t>(count), candidates.end());
  candidates.resize(candidates.size() - count);
  return taken;
}

FlowDataset assemble(std::span<const FlowDataset> pool, std::vector<PoolRef> refs, const std::string& provenance) {
  std::sort(refs.begin(), refs.end(), [](const PoolRef& a, const PoolRef& b) {
    return a.dataset != b.dataset ? a.dataset < b.dataset : a.flow < b.flow;
  });
  FlowDataset out;
  out.provenance = provenance;
  out.flows.reserve(refs.size());
  for (const auto& r : refs) out.flows.push_back(pool[r.dataset].flows[r.flow]);
  std::stable_sort(out.flows.begin(), out.flows.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.first_ms < b.first_ms; });
  return out;
}

/// Attack flows of the given vectors, drawn round-robin per vector so every
/// vector is represented as evenly as the pool allows.
std::vector<PoolRef> draw_attacks(std::map<std::string, std::vector<PoolRef>>& by_vector,
                                  const std::vector<std::string>& vectors, std::size_t count, Rng& rng,
                                  const std::string& side) {
  std::vector<PoolRef> taken;
  const std::size_t n = vectors.size();
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t share = count / n + (v < count % n ? 1 : 0);
    auto picked = draw(by_vector[vectors[v]], share, rng, side + " malicious " + vectors[v]);
    taken.insert(taken.end(), picked.begin(), picked.end());
  }
  return taken;
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"train_vectors", c.train_vectors},
          {"test_vectors", c.test_vectors},
          {"zero_shot", c.zero_shot},
          {"train_ratio", {c.train_ratio.malicious, c.train_ratio.benign}},
          {"test_ratio", {c.test_ratio.malicious, c.test_ratio.benign}},
          {"train_malicious", c.train_malicious},
          {"test_malicious", c.test_malicious},
          {"sequencer", to_json(c.sequencer)},
          {"encoder", to_json(c.encoder)},
          {"train", to_json(c.train)},
          {"seed", c.seed}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig c) {
  try {
    c.name = j.value("name", c.name);
    c.train_vectors = j.value("train_vectors", c.train_vectors);
    c.test_vectors = j.value("test_vectors", c.test_vectors);
    c.zero_shot = j.value("zero_shot", c.zero_shot);
    auto ratio = [&](const char* key, MixRatio& r) {
      if (!j.contains(key)) return;
      const auto& v = j.at(key);
      r = MixRatio{v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>()};
      if (r.malicious == 0) throw Error(Errc::InvalidConfig, std::string(key) + " malicious term must be >= 1");
    };
    ratio("train_ratio", c.train_ratio);
    ratio("test_ratio", c.test_ratio);
    c.train_malicious = j.value("train_malicious", c.train_malicious);
    c.test_malicious = j.value("test_malicious", c.test_malicious);
    if (j.contains("sequencer")) c.sequencer = sequencer_from_json(j.at("sequencer"), c.sequencer);
    if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"), c.encoder);
    if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("experiment config: ") + e.what());
  }
  return c;
}

Split build_split(std::span<const FlowDataset> pool, const ExperimentConfig& config) {
  if (config.zero_shot) {
    for (const auto& v : config.train_vectors) {
      if (std::find(config.test_vectors.begin(), config.test_vectors.end(), v) != config.test_vectors.end()) {
        throw Error(Errc::InvalidConfig, "zero-shot split lists vector '" + v + "' on both sides");
      }
    }
  }
  if (config.train_vectors.empty() || config.test_vectors.empty()) {
    throw Error(Errc::InvalidConfig, "train and test vector lists must be non-empty");
  }
  if (config.train_ratio.malicious == 0 || config.test_ratio.malicious == 0) {
    throw Error(Errc::InvalidConfig, "ratio malicious term must be >= 1");
  }

  std::map<std::string, std::vector<PoolRef>> attacks;
  std::vector<PoolRef> benign;
  for (std::size_t d = 0; d < pool.size(); ++d) {
    for (std::size_t i = 0; i < pool[d].flows.size(); ++i) {
      const FlowRecord& f = pool[d].flows[i];
      if (f.label == Label::Benign) benign.push_back({d, i});
      else if (f.label == Label::Malicious && f.vector_tag) attacks[*f.vector_tag].push_back({d, i});
    }
  }

  const std::size_t train_mal = config.train_malicious / config.train_ratio.malicious * config.train_ratio.malicious;
  const std::size_t test_mal = config.test_malicious / config.test_ratio.malicious * config.test_ratio.malicious;
  const std::size_t train_ben = train_mal / config.train_ratio.malicious * config.train_ratio.benign;
  const std::size_t test_ben = test_mal / config.test_ratio.malicious * config.test_ratio.benign;

  Rng rng(mix_seed(config.seed, 20));
  auto train_refs = draw_attacks(attacks, config.train_vectors, train_mal, rng, "train");
  auto test_refs = draw_attacks(attacks, config.test_vectors, test_mal, rng, "test");
  auto train_benign = draw(benign, train_ben, rng, "train benign");
  auto test_benign = draw(benign, test_ben, rng, "test benign");
  train_refs.insert(train_refs.end(), train_benign.begin(), train_benign.end());
  test_refs.insert(test_refs.end(), test_benign.begin(), test_benign.end());

  return Split{assemble(pool, std::move(train_refs), config.name + " train"),
               assemble(pool, std::move(test_refs), config.name + " test")};
}

void write_predictions_csv(const FlowDataset& dataset, std::span<const FlowPrediction> predictions,
                           std::ostream& out) {
  out << "flow_index,src_ip,dst_ip,src_port,dst_port,protocol,label,vector_tag,score,predicted\n";
  for (const auto& p : predictions) {
    const FlowRecord& f = dataset.flows[p.flow_index];
    char score[32];
    std::snprintf(score, sizeof score, "%.17g", p.score);
    out << p.flow_index << ',' << f.src_ip.to_string() << ',' << f.dst_ip.to_string() << ',' << f.src_port << ','
        << f.dst_port << ',' << unsigned{f.protocol} << ',' << label_name(p.label) << ','
        << f.vector_tag.value_or("") << ',' << score << ',' << label_name(p.predicted) << '\n';
  }
}

ExperimentResult evaluate_model(const TrainedModel& model, const FlowDataset& test, const std::string& name) {
  const auto start = std::chrono::steady_clock::now();
  const auto probs = predict_flow_probabilities(model, test);
  ExperimentResult result;
  std::vector<Label> labels, predicted;
  for (std::size_t i = 0; i < test.flows.size(); ++i) {
    const Label guess = probs[i] > 0.5 ? Label::Malicious : Label::Benign;
    result.predictions.push_back({i, test.flows[i].label, probs[i], guess});
    labels.push_back(test.flows[i].label);
    predicted.push_back(guess);
  }
  result.report = compute_metrics(labels, predicted, probs);
  result.report.name = name;
  result.report.runtime_seconds = seconds_since(start);
  return result;
}

EncoderRun run_experiment(std::span<const FlowDataset> pool, const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  Split split;
  try {
    split = build_split(pool, config);
  } catch (Error& e) {
    e.set_stage("split");
    throw;
  }
  EncoderRun run;
  try {
    run.model = train(std::span(&split.train, 1), config.sequencer, config.encoder, config.train);
  } catch (Error& e) {
    e.set_stage("train");
    throw;
  }
  try {
    run.result = evaluate_model(run.model, split.test, config.name);
  } catch (Error& e) {
    e.set_stage("evaluate");
    throw;
  }
  run.result.report.config = to_json(config);
  run.result.report.runtime_seconds = seconds_since(start);
  return run;
}

EncoderRun baseline_feature_mlp(const FlowDataset& train_set, const FlowDataset& test, const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  SequencerConfig per_flow;
  per_flow.length = 1;
  per_flow.window_flows = 1;
  EncoderConfig no_context = config.encoder;
  no_context.n_layers = 0;
  no_context.max_length = 1;
  TrainConfig tc = config.train;
  tc.batch_size = config.train.batch_size * config.sequencer.length;

  EncoderRun run;
  try {
    run.model = train(std::span(&train_set, 1), per_flow, no_context, tc);
  } catch (Error& e) {
    e.set_stage("baseline-train");
    throw;
  }
  run.result = evaluate_model(run.model, test, config.name + "-baseline");
  nlohmann::json cfg = to_json(config);
  cfg["sequencer"] = to_json(per_flow);
  cfg["encoder"] = to_json(no_context);
  cfg["train"] = to_json(tc);
  run.result.report.config = cfg;
  run.result.report.runtime_seconds = seconds_since(start);
  return run;
}

namespace {

const char* mode_name(PredictorMode m) { return m == PredictorMode::NextToken ? "next_token" : "masked"; }

}  // namespace

nlohmann::json to_json(const PredictorExperimentConfig& c) {
  return {{"name", c.name},
          {"attack_vectors", c.attack_vectors},
          {"train_sequences", c.train_sequences},
          {"calibration_sequences", c.calibration_sequences},
          {"test_sequences", c.test_sequences},
          {"attack_flows", c.attack_flows},
          {"quantile", c.quantile},
          {"sequencer", to_json(c.sequencer)},
          {"predictor",
           {{"mode", mode_name(c.predictor.mode)},
            {"vocab", c.predictor.vocab},
            {"mask_rate", c.predictor.mask_rate},
            {"reduction", c.predictor.reduction == ScoreReduction::Mean ? "mean" : "max"}}},
          {"encoder", to_json(c.encoder)},
          {"train", to_json(c.train)},
          {"seed", c.seed}};
}

PredictorExperimentConfig predictor_experiment_from_json(const nlohmann::json& j, PredictorExperimentConfig c) {
  try {
    c.name = j.value("name", c.name);
    c.attack_vectors = j.value("attack_vectors", c.attack_vectors);
    c.train_sequences = j.value("train_sequences", c.train_sequences);
    c.calibration_sequences = j.value("calibration_sequences", c.calibration_sequences);
    c.test_sequences = j.value("test_sequences", c.test_sequences);
    c.attack_flows = j.value("attack_flows", c.attack_flows);
    c.quantile = j.value("quantile", c.quantile);
    if (j.contains("sequencer")) c.sequencer = sequencer_from_json(j.at("sequencer"), c.sequencer);
    if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"), c.encoder);
    if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
    if (j.contains("predictor")) {
      const auto& p = j.at("predictor");
      const std::string mode = p.value("mode", std::string(mode_name(c.predictor.mode)));
      if (mode == "next_token") c.predictor.mode = PredictorMode::NextToken;
      else if (mode == "masked") c.predictor.mode = PredictorMode::Masked;
      else throw Error(Errc::InvalidConfig, "unknown predictor mode '" + mode + "'");
      c.predictor.vocab = p.value("vocab", c.predictor.vocab);
      c.predictor.mask_rate = p.value("mask_rate", c.predictor.mask_rate);
      const std::string red = p.value("reduction", std::string("mean"));
      if (red == "mean") c.predictor.reduction = ScoreReduction::Mean;
      else if (red == "max") c.predictor.reduction = ScoreReduction::Max;
      else throw Error(Errc::InvalidConfig, "unknown score reduction '" + red + "'");
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("predictor experiment config: ") + e.what());
  }
  if (!(c.quantile > 0.0 && c.quantile <= 1.0)) throw Error(Errc::InvalidConfig, "quantile must be in (0, 1]");
  return c;
}

namespace {

/// Sequence-level outcomes; a sequence is Malicious when any valid position is.
struct SequenceTally {
  std::vector<Label> labels;
  std::vector<Label> verdicts;
  std::vector<double> scores;
  std::size_t flagged_benign = 0;
};

void score_sequences(const PredictorModel& model, const AnomalyThreshold& threshold,
                     std::span<const FlowSequence> seqs, std::size_t offset, SequenceTally& tally,
                     std::vector<FlowPrediction>& predictions) {
  for (const auto& seq : seqs) {
    const Detection d = detect_anomaly(model, threshold, seq);
    Label truth = Label::Benign;
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (seq.valid[i] && seq.positions[i].label == Label::Malicious) truth = Label::Malicious;
    }
    const Label verdict = d.verdict == Verdict::Anomalous ? Label::Malicious : Label::Benign;
    tally.labels.push_back(truth);
    tally.verdicts.push_back(verdict);
    tally.scores.push_back(d.score);
    if (truth == Label::Benign && verdict == Label::Malicious) ++tally.flagged_benign;
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (!seq.valid[i]) continue;
      auto& p = predictions[offset + seq.positions[i].flow_index];
      p.score = d.score;
      p.predicted = verdict;
    }
  }
}

}  // namespace

PredictorRun run_predictor_experiment(const PredictorExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t T = config.sequencer.length;
  auto benign_scenario = [&](std::uint64_t stream, std::size_t sequences) {
    ScenarioConfig s = default_scenario(mix_seed(config.seed, stream));
    s.n_attack_flows = 0;
    s.n_benign_flows = sequences * T;
    return generate_scenario(s);
  };
  PredictorRun run;
  FlowDataset train_flows, calibration_flows, benign_test, attack_test;
  try {
    train_flows = benign_scenario(1, config.train_sequences);
    calibration_flows = benign_scenario(2, config.calibration_sequences);
    benign_test = benign_scenario(3, config.test_sequences);
    ScenarioConfig a = default_scenario(mix_seed(config.seed, 4));
    a.vectors.clear();
    for (const auto& name : config.attack_vectors) a.vectors.push_back(builtin_vector(name));
    a.n_attack_flows = config.attack_flows;
    a.n_benign_flows = 0;
    attack_test = generate_scenario(a);
  } catch (Error& e) {
    e.set_stage("synth");
    throw;
  }

  std::vector<FlowSequence> train_seqs, calibration_seqs, benign_seqs, attack_seqs;
  try {
    train_seqs = sequentialize_dataset(train_flows.flows, config.sequencer);
    calibration_seqs = sequentialize_dataset(calibration_flows.flows, config.sequencer);
    benign_seqs = sequentialize_dataset(benign_test.flows, config.sequencer);
    attack_seqs = sequentialize_dataset(attack_test.flows, config.sequencer);
  } catch (Error& e) {
    e.set_stage("sequencer");
    throw;
  }
  try {
    run.model = train_predictor(train_seqs, config.sequencer, config.predictor, config.encoder, config.train);
  } catch (Error& e) {
    e.set_stage("train");
    throw;
  }
  try {
    run.threshold = calibrate_threshold(run.model, calibration_seqs, config.quantile);
  } catch (Error& e) {
    e.set_stage("calibrate");
    throw;
  }

  run.test.provenance = config.name + " test";
  run.test.flows = benign_test.flows;
  run.test.flows.insert(run.test.flows.end(), attack_test.flows.begin(), attack_test.flows.end());
  run.result.predictions.resize(run.test.flows.size());
  for (std::size_t i = 0; i < run.test.flows.size(); ++i) {
    run.result.predictions[i] = {i, run.test.flows[i].label, 0.0, Label::Benign};
  }

  SequenceTally tally;
  try {
    score_sequences(run.model, run.threshold, benign_seqs, 0, tally, run.result.predictions);
    score_sequences(run.model, run.threshold, attack_seqs, benign_test.flows.size(), tally, run.result.predictions);
    run.result.report = compute_metrics(tally.labels, tally.verdicts, tally.scores);
  } catch (Error& e) {
    e.set_stage("detect");
    throw;
  }
  const std::size_t flagged_benign = tally.flagged_benign;
  run.benign_test_sequences = benign_seqs.size();
  run.attack_test_sequences = attack_seqs.size();
  run.benign_flag_rate = benign_seqs.empty() ? 0.0
                                             : static_cast<double>(flagged_benign) /
                                                   static_cast<double>(benign_seqs.size());
  run.result.report.name = config.name;
  run.result.report.config = to_json(config);
  run.result.report.config["threshold"] = run.threshold.score_threshold;
  run.result.report.config["benign_flag_rate"] = run.benign_flag_rate;
  run.result.report.config["unit"] = "sequence";
  run.result.report.runtime_seconds = seconds_since(start);
  return run;
}

ExperimentResult evaluate_predictor(const PredictorModel& model, const AnomalyThreshold& threshold,
                                    std::span<const FlowDataset> parts, const std::string& name) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;
  for (const auto& part : parts) {
    for (const auto& f : part.flows) result.predictions.push_back({result.predictions.size(), f.label, 0.0, Label::Benign});
  }
  SequenceTally tally;
  std::size_t offset = 0;
  for (const auto& part : parts) {
    score_sequences(model, threshold, sequentialize_dataset(part.flows, model.sequencer), offset, tally,
                    result.predictions);
    offset += part.flows.size();
  }
  result.report = compute_metrics(tally.labels, tally.verdicts, tally.scores);
  result.report.name = name;
  result.report.config = {{"threshold", threshold.score_threshold}, {"unit", "sequence"}};
  result.report.runtime_seconds = seconds_since(start);
  return result;
}

PromptExperimentConfig::PromptExperimentConfig() {
  scenario = default_scenario(42);
  scenario.n_attack_flows = 300;
  scenario.n_benign_flows = 300;
}

nlohmann::json to_json(const PromptExperimentConfig& c) {
  return {{"name", c.name},
          {"scenario", scenario_to_json(c.scenario)},
          {"max_queries", c.max_queries},
          {"queries_per_prompt", c.queries_per_prompt},
          {"fewshot_count", c.prompt.fewshot_count},
          {"client", c.client == PromptClient::Stub ? "stub" : "remote"},
          {"remote",
           {{"endpoint", c.remote.endpoint},
            {"model", c.remote.model},
            {"timeout_seconds", c.remote.timeout_seconds},
            {"max_retries", c.remote.max_retries},
            {"temperature", c.remote.temperature},
            {"backoff_initial_seconds", c.remote.backoff_initial_seconds},
            {"max_in_flight", c.remote.max_in_flight}}},
          {"seed", c.seed}};
}

PromptExperimentConfig prompt_experiment_from_json(const nlohmann::json& j, PromptExperimentConfig c) {
  try {
    c.name = j.value("name", c.name);
    if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
    c.max_queries = j.value("max_queries", c.max_queries);
    c.queries_per_prompt = j.value("queries_per_prompt", c.queries_per_prompt);
    c.prompt.fewshot_count = j.value("fewshot_count", c.prompt.fewshot_count);
    if (j.contains("task_description")) c.prompt.task_description = j.at("task_description").get<std::string>();
    if (j.contains("output_statement")) c.prompt.output_statement = j.at("output_statement").get<std::string>();
    if (j.contains("layout_path")) c.prompt.layout = load_prompt_layout(j.at("layout_path").get<std::string>());
    if (j.contains("client")) {
      const auto client = j.at("client").get<std::string>();
      if (client == "stub") c.client = PromptClient::Stub;
      else if (client == "remote") c.client = PromptClient::Remote;
      else throw Error(Errc::InvalidConfig, "unknown client '" + client + "'");
    }
    if (j.contains("remote")) {
      const auto& r = j.at("remote");
      if (r.contains("api_key")) {
        throw Error(Errc::InvalidConfig, std::string("API keys are read from ") + kApiKeyEnv + " only");
      }
      c.remote.endpoint = r.value("endpoint", c.remote.endpoint);
      c.remote.model = r.value("model", c.remote.model);
      c.remote.timeout_seconds = r.value("timeout_seconds", c.remote.timeout_seconds);
      c.remote.max_retries = r.value("max_retries", c.remote.max_retries);
      c.remote.temperature = r.value("temperature", c.remote.temperature);
      c.remote.backoff_initial_seconds = r.value("backoff_initial_seconds", c.remote.backoff_initial_seconds);
      c.remote.max_in_flight = r.value("max_in_flight", c.remote.max_in_flight);
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("prompt experiment config: ") + e.what());
  }
  if (c.queries_per_prompt == 0) throw Error(Errc::InvalidConfig, "queries_per_prompt must be >= 1");
  c.remote.validate();
  return c;
}

PromptRun run_prompt_experiment(const PromptExperimentConfig& config, const FlowDataset* dataset) {
  const auto start = std::chrono::steady_clock::now();
  if (config.queries_per_prompt == 0) throw Error(Errc::InvalidConfig, "queries_per_prompt must be >= 1");
  FlowDataset generated;
  if (dataset == nullptr) {
    try {
      generated = generate_scenario(config.scenario);
    } catch (Error& e) {
      e.set_stage("synth");
      throw;
    }
    dataset = &generated;
  }

  PromptRun run;
  try {
    run.fewshots = select_fewshots(*dataset, config.prompt.fewshot_count, mix_seed(config.seed, 40));
  } catch (Error& e) {
    e.set_stage("fewshots");
    throw;
  }
  std::vector<std::uint8_t> used(dataset->flows.size(), 0);
  for (const auto& f : run.fewshots) used[f.flow_index] = 1;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < dataset->flows.size(); ++i) {
    if (!used[i]) candidates.push_back(i);
  }
  Rng rng(mix_seed(config.seed, 41));
  rng.shuffle(std::span<std::size_t>(candidates));
  if (config.max_queries > 0 && candidates.size() > config.max_queries) candidates.resize(config.max_queries);
  std::sort(candidates.begin(), candidates.end());
  run.queries.provenance = dataset->provenance + " (prompt queries)";
  for (auto i : candidates) run.queries.flows.push_back(dataset->flows[i]);
  if (run.queries.flows.empty()) {
    Error e(Errc::EmptyQuery, "no flows left to query after few-shot selection");
    e.set_stage("prompt");
    throw e;
  }

  const std::size_t n = run.queries.flows.size();
  const std::span<const FlowRecord> all(run.queries.flows);
  for (std::size_t b = 0; b < n; b += config.queries_per_prompt) {
    run.prompts.push_back(
        build_prompt(config.prompt, run.fewshots, all.subspan(b, std::min(config.queries_per_prompt, n - b))));
  }

  std::vector<std::optional<std::string>> answers(run.prompts.size());
  if (config.client == PromptClient::Stub) {
    try {
      for (std::size_t p = 0; p < run.prompts.size(); ++p) answers[p] = stub_classify(run.prompts[p]);
    } catch (Error& e) {
      e.set_stage("classify");
      throw;
    }
  } else {
    const auto outcomes = classify_remote_batch(config.remote, run.prompts);
    for (std::size_t p = 0; p < outcomes.size(); ++p) {
      answers[p] = outcomes[p].response;
      if (!outcomes[p].response) ++run.remote_failures;
    }
  }

  std::vector<Label> labels, predicted;
  std::vector<double> scores;
  for (std::size_t p = 0; p < run.prompts.size(); ++p) {
    const std::size_t first = p * config.queries_per_prompt;
    const std::size_t count = std::min(config.queries_per_prompt, n - first);
    run.responses.push_back(answers[p].value_or(""));
    std::vector<LlmVerdict> verdicts = answers[p] ? parse_verdicts(*answers[p], count) : std::vector<LlmVerdict>(count);
    for (std::size_t q = 0; q < count; ++q) {
      const LlmVerdict& v = verdicts[q];
      if (answers[p] && v.decision == Decision::Unparseable) ++run.unparseable;
      const Label guess = v.decision == Decision::Malicious ? Label::Malicious : Label::Benign;
      const double score = v.decision == Decision::Malicious ? 1.0 : v.decision == Decision::Benign ? 0.0 : 0.5;
      const std::size_t idx = first + q;
      run.result.predictions.push_back({idx, run.queries.flows[idx].label, score, guess});
      labels.push_back(run.queries.flows[idx].label);
      predicted.push_back(guess);
      scores.push_back(score);
      run.verdicts.push_back(v);
    }
  }
  try {
    run.result.report = compute_metrics(labels, predicted, scores);
  } catch (Error& e) {
    e.set_stage("metrics");
    throw;
  }
  run.result.report.name = config.name;
  run.result.report.config = to_json(config);
  run.result.report.config["unparseable"] = run.unparseable;
  run.result.report.config["remote_failures"] = run.remote_failures;
  run.result.report.runtime_seconds = seconds_since(start);
  return run;
}

ScenarioConfig default_scenario(std::uint64_t seed) {
  ScenarioConfig c;
  c.vectors = {builtin_vector("DNS"), builtin_vector("NTP"), builtin_vector("SYN")};
  c.n_attack_flows = 3000;
  c.n_benign_flows = 3000;
  c.seed = seed;
  return c;
}

std::vector<std::string> held_out_vector_names() {
  std::vector<std::string> out;
  for (const auto& t : builtin_vector_library()) {
    if (t.name != "DNS" && t.name != "NTP" && t.name != "SYN") out.push_back(t.name);
  }
  return out;
}

ExperimentConfig zero_shot_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.name = "zero-shot";
  c.zero_shot = true;
  c.test_vectors = held_out_vector_names();
  c.train_ratio = {1, 1};
  c.test_ratio = {1, 10};
  c.train_malicious = 1500;
  c.test_malicious = 400;
  c.seed = seed;
  c.train.seed = seed;
  return c;
}

std::vector<FlowDataset> zero_shot_pool(std::uint64_t seed) {
  ScenarioConfig known = default_scenario(seed);
  known.n_benign_flows = 9000;
  ScenarioConfig unseen = default_scenario(mix_seed(seed, 30));
  unseen.vectors.clear();
  for (const auto& name : held_out_vector_names()) unseen.vectors.push_back(builtin_vector(name));
  unseen.n_attack_flows = 800;
  unseen.n_benign_flows = 0;
  return {generate_scenario(known), generate_scenario(unseen)};
}

}  // namespace flowsentry
