#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flowsentry/checkpoint.hpp"
#include "flowsentry/error.hpp"
#include "flowsentry/experiment.hpp"

namespace flowsentry::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "out";
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  std::ifstream in(g.config_path);
  if (!in) throw Error(Errc::Io, "cannot read config " + g.config_path);
  auto doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(Errc::InvalidConfig, g.config_path + " is not a JSON object");
  }
  return doc;
}

fs::path out_dir(const Globals& g) {
  fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << content)) throw Error(Errc::Io, "cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

void write_predictions(const fs::path& path, const FlowDataset& data, std::span<const FlowPrediction> preds) {
  std::ostringstream csv;
  write_predictions_csv(data, preds, csv);
  write_file(path, csv.str());
}

/// report.json and report.txt carry no runtime, so repeated runs reproduce
/// them byte for byte; runtimes go to timing.json.
void write_reports(const fs::path& dir, const std::vector<MetricsReport>& reports, std::ostream& out) {
  json rows = json::array(), timing = json::array();
  for (const auto& r : reports) {
    rows.push_back(report_to_json(r));
    timing.push_back(timing_to_json(r));
  }
  write_json(dir / "report.json", {{"reports", rows}});
  write_file(dir / "report.txt", reports_to_text(reports, false));
  write_json(dir / "timing.json", {{"reports", timing}});
  out << reports_to_text(reports);
}

template <class Fn>
auto in_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (Error& e) {
    if (e.stage().empty()) e.set_stage(stage);
    throw;
  }
}

// ---------------------------------------------------------------------------
// Encoder experiments

enum class Preset { SameVector, ZeroShot };

ExperimentConfig experiment_config(const Globals& g, Preset preset) {
  const std::uint64_t seed = g.seed.value_or(42);
  ExperimentConfig c = experiment_from_json(load_config(g), preset == Preset::ZeroShot ? zero_shot_config(seed)
                                                                                       : ExperimentConfig{});
  if (g.seed) {
    c.seed = *g.seed;
    c.train.seed = *g.seed;
  }
  return c;
}

std::vector<FlowDataset> experiment_pool(const ExperimentConfig& c, Preset preset) {
  return in_stage("synth", [&] {
    if (preset == Preset::ZeroShot) return zero_shot_pool(c.seed);
    return std::vector<FlowDataset>{generate_scenario(default_scenario(c.seed))};
  });
}

json checkpoint_metadata(const std::string& name, const json& config) {
  return {{"name", name}, {"producer", "flowsentry"}, {"experiment", config}};
}

int cmd_train(const Globals& g, Preset preset, const std::string& data_path, bool baseline, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig c = experiment_config(g, preset);
  const fs::path dir = out_dir(g);
  Split split;
  if (!data_path.empty()) {
    split.train = in_stage("load", [&] { return load_flow_csv(data_path); });
  } else {
    const auto pool = experiment_pool(c, preset);
    split = in_stage("split", [&] { return build_split(pool, c); });
    save_flow_csv(split.train, (dir / "train.csv").string());
    save_flow_csv(split.test, (dir / "test.csv").string());
    out << "wrote " << (dir / "train.csv").string() << " (" << split.train.flows.size() << " flows) and "
        << (dir / "test.csv").string() << " (" << split.test.flows.size() << " flows)\n";
  }
  const TrainedModel model =
      in_stage("train", [&] { return train(std::span(&split.train, 1), c.sequencer, c.encoder, c.train); });
  save_checkpoint(model, (dir / "model.ckpt").string(), checkpoint_metadata(c.name, to_json(c)));
  out << "wrote " << (dir / "model.ckpt").string() << "\n";
  json timing = {{"train_seconds", seconds_since(start)}};
  if (baseline) {
    const auto t0 = std::chrono::steady_clock::now();
    // The baseline helper evaluates as well; with no held-out side, score
    // the training flows so it still has labeled input.
    const FlowDataset& probe = split.test.flows.empty() ? split.train : split.test;
    const auto run = in_stage("baseline-train", [&] { return baseline_feature_mlp(split.train, probe, c); });
    save_checkpoint(run.model, (dir / "baseline.ckpt").string(),
                    checkpoint_metadata(c.name + "-baseline", to_json(c)));
    out << "wrote " << (dir / "baseline.ckpt").string() << "\n";
    timing["baseline_seconds"] = seconds_since(t0);
  }
  write_json(dir / "timing.json", timing);
  return kExitOk;
}

/// Name and config echo for reports of a saved model.
std::pair<std::string, json> checkpoint_identity(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + path);
  const json meta = read_checkpoint_header(in).value("metadata", json::object());
  std::string name = meta.contains("name") ? meta["name"].get<std::string>() : fs::path(path).stem().string();
  return {name, meta.value("experiment", json::object())};
}

void label_report(MetricsReport& report, const std::string& checkpoint) {
  auto [name, config] = checkpoint_identity(checkpoint);
  report.name = name;
  report.config = config;
}

int cmd_eval(const Globals& g, Preset preset, const std::vector<std::string>& models, const std::string& data_path,
             bool baseline, std::ostream& out) {
  const fs::path dir = out_dir(g);
  std::vector<MetricsReport> reports;
  if (!models.empty()) {
    if (data_path.empty()) throw Error(Errc::InvalidConfig, "eval --model needs --data");
    const FlowDataset data = in_stage("load", [&] { return load_flow_csv(data_path); });
    for (const auto& path : models) {
      const TrainedModel model = in_stage("load", [&] { return load_checkpoint(path); });
      auto result = in_stage("evaluate", [&] { return evaluate_model(model, data, ""); });
      label_report(result.report, path);
      const std::string file =
          models.size() == 1 ? "predictions.csv" : "predictions_" + fs::path(path).stem().string() + ".csv";
      write_predictions(dir / file, data, result.predictions);
      reports.push_back(std::move(result.report));
    }
  } else {
    // End to end: split, train, evaluate (and the context-free baseline on
    // the identical split).
    const ExperimentConfig c = experiment_config(g, preset);
    const auto pool = experiment_pool(c, preset);
    const auto run = run_experiment(pool, c);
    const Split split = build_split(pool, c);
    write_predictions(dir / "predictions.csv", split.test, run.result.predictions);
    reports.push_back(run.result.report);
    if (baseline) {
      const auto base = in_stage("baseline-train", [&] { return baseline_feature_mlp(split.train, split.test, c); });
      write_predictions(dir / "predictions_baseline.csv", split.test, base.result.predictions);
      reports.push_back(base.result.report);
    }
  }
  write_reports(dir, reports, out);
  return kExitOk;
}

int cmd_detect(const Globals& g, const std::string& model_path, const std::string& data_path, std::ostream& out) {
  const fs::path dir = out_dir(g);
  const TrainedModel model = in_stage("load", [&] { return load_checkpoint(model_path); });
  const FlowDataset data = in_stage("load", [&] { return load_flow_csv(data_path); });
  const auto probs = in_stage("detect", [&] { return predict_flow_probabilities(model, data); });
  std::vector<FlowPrediction> preds;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < data.flows.size(); ++i) {
    const Label guess = probs[i] > 0.5 ? Label::Malicious : Label::Benign;
    flagged += guess == Label::Malicious;
    preds.push_back({i, data.flows[i].label, probs[i], guess});
  }
  write_predictions(dir / "predictions.csv", data, preds);
  out << flagged << " of " << data.flows.size() << " flows flagged Malicious; wrote "
      << (dir / "predictions.csv").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Predictor

int cmd_predictor_train(const Globals& g, std::ostream& out) {
  PredictorExperimentConfig c = predictor_experiment_from_json(load_config(g));
  if (g.seed) {
    c.seed = *g.seed;
    c.train.seed = *g.seed;
  }
  const fs::path dir = out_dir(g);
  const auto run = run_predictor_experiment(c);
  save_predictor_checkpoint({run.model, run.threshold}, (dir / "predictor.ckpt").string(),
                            checkpoint_metadata(c.name, to_json(c)));
  // Benign and attack test flows come from separate scenarios and were
  // windowed separately; keep them apart so predictor-eval can do the same.
  FlowDataset benign, attack;
  for (const auto& f : run.test.flows) (f.label == Label::Malicious ? attack : benign).flows.push_back(f);
  save_flow_csv(benign, (dir / "test_benign.csv").string());
  save_flow_csv(attack, (dir / "test_attack.csv").string());
  write_predictions(dir / "predictions.csv", run.test, run.result.predictions);
  out << "wrote " << (dir / "predictor.ckpt").string() << " (threshold " << run.threshold.score_threshold
      << ", benign flag rate " << run.benign_flag_rate << " over " << run.benign_test_sequences
      << " sequences)\n";
  write_reports(dir, {run.result.report}, out);
  return kExitOk;
}

int cmd_predictor_eval(const Globals& g, const std::string& model_path, const std::vector<std::string>& data_paths,
                       std::ostream& out) {
  const fs::path dir = out_dir(g);
  const auto ckpt = in_stage("load", [&] { return load_predictor_checkpoint(model_path); });
  if (!ckpt.threshold) throw Error(Errc::InvalidConfig, model_path + " holds no calibrated threshold");
  std::vector<FlowDataset> parts;
  FlowDataset all;
  for (const auto& path : data_paths) {
    parts.push_back(in_stage("load", [&] { return load_flow_csv(path); }));
    all.flows.insert(all.flows.end(), parts.back().flows.begin(), parts.back().flows.end());
  }
  auto result = in_stage("detect", [&] { return evaluate_predictor(ckpt.model, *ckpt.threshold, parts, ""); });
  const json unit = result.report.config;
  label_report(result.report, model_path);
  result.report.config.update(unit);
  write_predictions(dir / "predictions.csv", all, result.predictions);
  write_reports(dir, {result.report}, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Prompt harness

int cmd_prompt_eval(const Globals& g, const std::string& client, const std::string& data_path, std::ostream& out,
                    std::ostream& err) {
  PromptExperimentConfig c = prompt_experiment_from_json(load_config(g));
  if (!client.empty()) c.client = client == "remote" ? PromptClient::Remote : PromptClient::Stub;
  if (g.seed) {
    c.seed = *g.seed;
    c.scenario.seed = *g.seed;
  }
  std::optional<FlowDataset> data;
  if (!data_path.empty()) data = in_stage("load", [&] { return load_flow_csv(data_path); });
  const fs::path dir = out_dir(g);
  const auto run = run_prompt_experiment(c, data ? &*data : nullptr);

  std::string transcript;
  for (std::size_t p = 0; p < run.prompts.size(); ++p) {
    json verdicts = json::array();
    const std::size_t first = p * c.queries_per_prompt;
    for (std::size_t q = first; q < std::min(first + c.queries_per_prompt, run.verdicts.size()); ++q) {
      verdicts.push_back({{"query", q},
                          {"decision", std::string(decision_name(run.verdicts[q].decision))},
                          {"explanation", run.verdicts[q].explanation}});
    }
    transcript += json{{"prompt", run.prompts[p]}, {"response", run.responses[p]}, {"verdicts", verdicts}}.dump() + "\n";
  }
  write_file(dir / "transcript.jsonl", transcript);
  write_predictions(dir / "predictions.csv", run.queries, run.result.predictions);
  write_reports(dir, {run.result.report}, out);
  out << run.verdicts.size() << " verdicts, " << run.unparseable << " unparseable, " << run.remote_failures
      << " failed requests\n";
  if (run.remote_failures > 0) {
    err << "flowsentry: " << run.remote_failures << " of " << run.prompts.size()
        << " prompts got no answer from " << c.remote.endpoint << "\n";
    return kExitRemote;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Other commands

int cmd_synth(const Globals& g, std::ostream& out) {
  json doc = scenario_to_json(default_scenario(g.seed.value_or(42)));
  doc.update(load_config(g));
  ScenarioConfig s = scenario_from_json(doc);
  if (g.seed) s.seed = *g.seed;
  const FlowDataset data = in_stage("synth", [&] { return generate_scenario(s); });
  const fs::path path = out_dir(g) / "flows.csv";
  save_flow_csv(data, path.string());
  out << "wrote " << path.string() << " (" << data.flows.size() << " flows)\n";
  return kExitOk;
}

int cmd_ingest(const Globals& g, const std::vector<std::string>& inputs, std::ostream& out) {
  FlowDataset data;
  for (const auto& input : inputs) {
    const std::string bytes = read_file(input);
    const auto flows = in_stage("ingest", [&] {
      return parse_netflow_v5_stream(
          std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    });
    data.flows.insert(data.flows.end(), flows.begin(), flows.end());
    data.provenance += (data.provenance.empty() ? "" : ",") + input;
  }
  const fs::path path = out_dir(g) / "flows.csv";
  save_flow_csv(data, path.string());
  out << "wrote " << path.string() << " (" << data.flows.size() << " flows)\n";
  return kExitOk;
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs, std::ostream& out) {
  std::vector<MetricsReport> reports;
  for (const auto& input : inputs) {
    fs::path report = input;
    if (fs::is_directory(report)) report /= "report.json";
    const auto doc = json::parse(read_file(report), nullptr, false);
    if (doc.is_discarded() || !doc.contains("reports")) {
      throw Error(Errc::InvalidConfig, report.string() + " is not a report file");
    }
    json timing = json::object();
    const fs::path timing_path = report.parent_path() / "timing.json";
    if (fs::exists(timing_path)) timing = json::parse(read_file(timing_path), nullptr, false);
    for (std::size_t i = 0; i < doc["reports"].size(); ++i) {
      MetricsReport r = report_from_json(doc["reports"][i]);
      if (timing.is_object() && timing.contains("reports") && i < timing["reports"].size()) {
        r.runtime_seconds = timing["reports"][i].value("runtime_seconds", 0.0);
      }
      reports.push_back(std::move(r));
    }
  }
  const std::string text = reports_to_text(reports);
  write_file(out_dir(g) / "summary.txt", text);
  out << text;
  return kExitOk;
}

int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Config:
      return kExitConfig;
    case ErrorCategory::Remote:
      return kExitRemote;
    case ErrorCategory::Data:
      break;
  }
  return kExitData;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"flowsentry: flow-level DDoS detection experiments", "flowsentry"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for synthesis, splits and training");
  app.add_option("--config", g.config_path, "JSON config for the subcommand");
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();

  std::string preset_name = "same-vector";
  const std::map<std::string, Preset> presets{{"same-vector", Preset::SameVector}, {"zero-shot", Preset::ZeroShot}};
  std::string data_path, model_path, client;
  std::vector<std::string> models, inputs;
  bool baseline = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario (config: scenario JSON) as flow CSV");
  auto* ingest = app.add_subcommand("ingest", "Decode NetFlow v5 datagram files into flow CSV");
  ingest->add_option("inputs", inputs, "Files of back-to-back NetFlow v5 datagrams")->required();

  auto* train_cmd = app.add_subcommand("train", "Train the sequence encoder; writes model.ckpt");
  train_cmd->add_option("--preset", preset_name, "Experiment preset")
      ->check(CLI::IsMember({"same-vector", "zero-shot"}))
      ->capture_default_str();
  train_cmd->add_option("--data", data_path, "Train on this flow CSV instead of a synthetic split");
  train_cmd->add_flag("--baseline", baseline, "Also train the context-free baseline (baseline.ckpt)");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on a flow CSV, or run the experiment end to end");
  eval->add_option("--model", models, "Classifier checkpoint (repeatable)");
  eval->add_option("--data", data_path, "Labeled flow CSV");
  eval->add_option("--preset", preset_name, "Experiment preset when no --model is given")
      ->check(CLI::IsMember({"same-vector", "zero-shot"}))
      ->capture_default_str();
  eval->add_flag("--baseline", baseline, "Also evaluate the context-free baseline on the same split");

  auto* detect = app.add_subcommand("detect", "Score a flow CSV with a classifier checkpoint");
  detect->add_option("--model", model_path, "Classifier checkpoint")->required();
  detect->add_option("--data", data_path, "Flow CSV (labels optional)")->required();

  auto* ptrain = app.add_subcommand("predictor-train", "Train and calibrate the benign-only token predictor");
  auto* peval = app.add_subcommand("predictor-eval", "Score a labeled flow CSV with a predictor checkpoint");
  peval->add_option("--model", model_path, "Predictor checkpoint")->required();
  peval->add_option("--data", inputs, "Labeled flow CSV (repeatable; each file is windowed on its own)")
      ->required();

  auto* prompt = app.add_subcommand("prompt-eval", "Few-shot prompt classification with the stub or a remote model");
  prompt->add_option("--client", client, "Answering client")->check(CLI::IsMember({"stub", "remote"}));
  prompt->add_option("--data", data_path, "Labeled flow CSV (default: the configured scenario)");

  auto* report = app.add_subcommand("report", "Tabulate report.json files or output directories");
  report->add_option("inputs", inputs, "report.json files or directories holding one")->required();

  std::vector<const char*> argv{"flowsentry"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) g.seed = seed;
  const Preset preset = presets.at(preset_name);

  try {
    if (*synth) return cmd_synth(g, out);
    if (*ingest) return cmd_ingest(g, inputs, out);
    if (*train_cmd) return cmd_train(g, preset, data_path, baseline, out);
    if (*eval) return cmd_eval(g, preset, models, data_path, baseline, out);
    if (*detect) return cmd_detect(g, model_path, data_path, out);
    if (*ptrain) return cmd_predictor_train(g, out);
    if (*peval) return cmd_predictor_eval(g, model_path, inputs, out);
    if (*prompt) return cmd_prompt_eval(g, client, data_path, out, err);
    if (*report) return cmd_report(g, inputs, out);
  } catch (const Error& e) {
    err << "flowsentry: " << (e.stage().empty() ? "" : "[" + e.stage() + "] ") << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "flowsentry: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "flowsentry: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitConfig;
}

}  // namespace flowsentry::cli
