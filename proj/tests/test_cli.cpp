#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "flowsentry/ingest.hpp"

namespace fs = std::filesystem;
using namespace flowsentry;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("flowsentry_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string small_config() const {
    const auto p = path("small.json");
    put(p, R"({"train_malicious": 200, "test_malicious": 100,
               "encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32},
               "train": {"epochs": 2}})");
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(run_cli({}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"train", "--no-such-flag"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"prompt-eval", "--client", "carrier-pigeon"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"detect", "--data", "x.csv"}).code, cli::kExitConfig);  // --model required
}

TEST_F(Cli, SynthWritesFlowCsv) {
  const auto r = run_cli({"synth", "--seed", "3", "--out", path("s")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto data = load_flow_csv(path("s/flows.csv"));
  EXPECT_EQ(data.flows.size(), 6000u);
  ASSERT_EQ(run_cli({"synth", "--seed", "3", "--out", path("t")}).code, cli::kExitOk);
  EXPECT_EQ(slurp(path("s/flows.csv")), slurp(path("t/flows.csv")));
}

TEST_F(Cli, SynthConfigOverridesDefaults) {
  put(path("scenario.json"), R"({"n_attack_flows": 50, "n_benign_flows": 70, "vectors": ["SSDP"]})");
  ASSERT_EQ(run_cli({"synth", "--config", path("scenario.json"), "--out", path("s")}).code, cli::kExitOk);
  const auto data = load_flow_csv(path("s/flows.csv"));
  EXPECT_EQ(data.flows.size(), 120u);
  for (const auto& f : data.flows) {
    if (f.label == Label::Malicious) EXPECT_EQ(f.vector_tag.value_or(""), "SSDP");
  }
}

TEST_F(Cli, IngestDecodesDatagramFiles) {
  std::vector<FlowRecord> flows;
  for (std::uint16_t i = 0; i < 45; ++i) {
    FlowRecord f;
    f.src_ip = Ipv4::from_octets(10, 0, 0, static_cast<std::uint8_t>(i));
    f.dst_ip = Ipv4::from_octets(192, 168, 1, 5);
    f.src_port = 53;
    f.dst_port = static_cast<std::uint16_t>(1000 + i);
    f.protocol = ip_proto::kUdp;
    f.first_ms = 1000u * i;
    f.last_ms = 1000u * i + 500;
    f.packets = 10 + i;
    f.bytes = 1500 + i;
    flows.push_back(f);
  }
  // Two datagrams back to back, as a collector appending payloads would write.
  auto bytes = serialize_netflow_v5(std::span(flows).first(30));
  const auto second = serialize_netflow_v5(std::span(flows).subspan(30));
  bytes.insert(bytes.end(), second.begin(), second.end());
  put(path("capture.bin"), std::string(bytes.begin(), bytes.end()));

  const auto r = run_cli({"ingest", path("capture.bin"), "--out", path("i")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto back = load_flow_csv(path("i/flows.csv"));
  ASSERT_EQ(back.flows.size(), flows.size());
  for (std::size_t i = 0; i < flows.size(); ++i) {
    EXPECT_EQ(back.flows[i].src_ip, flows[i].src_ip);
    EXPECT_EQ(back.flows[i].dst_port, flows[i].dst_port);
    EXPECT_EQ(back.flows[i].bytes, flows[i].bytes);
    EXPECT_EQ(back.flows[i].label, Label::Unlabeled);
  }

  put(path("junk.bin"), std::string(100, '\x07'));
  const auto bad = run_cli({"ingest", path("junk.bin"), "--out", path("j")});
  EXPECT_EQ(bad.code, cli::kExitData);
  EXPECT_NE(bad.err.find("[ingest]"), std::string::npos);
  EXPECT_EQ(run_cli({"ingest", path("missing.bin"), "--out", path("j")}).code, cli::kExitData);
}

TEST_F(Cli, TrainEvalDetectAreReproducible) {
  const auto cfg = small_config();
  for (const char* run : {"a", "b"}) {
    const auto out = path(run);
    ASSERT_EQ(run_cli({"train", "--config", cfg, "--seed", "9", "--baseline", "--out", out}).code, cli::kExitOk);
    const auto e = run_cli({"eval", "--model", out + "/model.ckpt", "--data", out + "/test.csv", "--out", out + "/eval"});
    ASSERT_EQ(e.code, cli::kExitOk) << e.err;
    ASSERT_EQ(run_cli({"detect", "--model", out + "/model.ckpt", "--data", out + "/test.csv", "--out", out + "/det"})
                  .code,
              cli::kExitOk);
  }
  for (const char* f : {"model.ckpt", "baseline.ckpt", "train.csv", "test.csv", "eval/report.json", "eval/report.txt",
                        "eval/predictions.csv", "det/predictions.csv"}) {
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
  }
  EXPECT_EQ(slurp(path("a/eval/predictions.csv")), slurp(path("a/det/predictions.csv")));
  const auto report = nlohmann::json::parse(slurp(path("a/eval/report.json")));
  EXPECT_EQ(report["reports"][0]["name"], "encoder");
  EXPECT_EQ(report["reports"][0]["config"]["train_malicious"], 200);
  EXPECT_FALSE(report["reports"][0].contains("runtime_seconds"));
  EXPECT_TRUE(nlohmann::json::parse(slurp(path("a/eval/timing.json")))["reports"][0].contains("runtime_seconds"));

  ASSERT_EQ(run_cli({"train", "--config", cfg, "--seed", "10", "--out", path("c")}).code, cli::kExitOk);
  EXPECT_NE(slurp(path("a/model.ckpt")), slurp(path("c/model.ckpt")));
}

TEST_F(Cli, EvalEndToEndWithBaselineAndReport) {
  const auto r = run_cli({"eval", "--config", small_config(), "--baseline", "--out", path("e")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto report = nlohmann::json::parse(slurp(path("e/report.json")));
  ASSERT_EQ(report["reports"].size(), 2u);
  EXPECT_EQ(report["reports"][1]["name"], "encoder-baseline");
  EXPECT_TRUE(fs::exists(path("e/predictions_baseline.csv")));

  const auto t = run_cli({"report", path("e"), path("e/report.json"), "--out", path("r")});
  ASSERT_EQ(t.code, cli::kExitOk) << t.err;
  EXPECT_NE(t.out.find("encoder-baseline"), std::string::npos);
  EXPECT_NE(t.out.find("runtime_s"), std::string::npos);
  EXPECT_EQ(slurp(path("r/summary.txt")), t.out);
}

TEST_F(Cli, ZeroShotPresetTrainsOnKnownVectorsOnly) {
  put(path("zs.json"), R"({"train_malicious": 150, "test_malicious": 40,
                           "encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32},
                           "train": {"epochs": 1}})");
  ASSERT_EQ(run_cli({"train", "--preset", "zero-shot", "--config", path("zs.json"), "--out", path("z")}).code,
            cli::kExitOk);
  for (const auto& f : load_flow_csv(path("z/train.csv")).flows) {
    if (f.label == Label::Malicious) EXPECT_TRUE(f.vector_tag == "DNS" || f.vector_tag == "NTP" || f.vector_tag == "SYN");
  }
  const auto test = load_flow_csv(path("z/test.csv"));
  std::size_t benign = 0, malicious = 0;
  for (const auto& f : test.flows) {
    if (f.label == Label::Malicious) {
      ++malicious;
      EXPECT_FALSE(f.vector_tag == "DNS" || f.vector_tag == "NTP" || f.vector_tag == "SYN");
    } else {
      ++benign;
    }
  }
  EXPECT_EQ(benign, 10 * malicious);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  put(path("bad.json"), "{ not json");
  EXPECT_EQ(run_cli({"train", "--config", path("bad.json"), "--out", path("x")}).code, cli::kExitConfig);
  put(path("neg.json"), R"({"encoder": {"d_model": 15, "n_heads": 2}})");
  EXPECT_EQ(run_cli({"eval", "--config", path("neg.json"), "--out", path("x")}).code, cli::kExitConfig);
  put(path("key.json"), R"({"remote": {"api_key": "sk-123"}})");
  const auto r = run_cli({"prompt-eval", "--config", path("key.json"), "--out", path("x")});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_EQ(r.err.find("sk-123"), std::string::npos);
  EXPECT_EQ(run_cli({"eval", "--model", path("m.ckpt"), "--out", path("x")}).code, cli::kExitConfig);
}

TEST_F(Cli, DataErrorsExitThree) {
  put(path("garbage.ckpt"), "{\"format\":\"flowsentry-checkpoint\",\"format_version\":\"2\"}\n");
  put(path("flows.csv"), "src_ip,dst_ip\n1.2.3.4,5.6.7.8\n");
  EXPECT_EQ(run_cli({"detect", "--model", path("garbage.ckpt"), "--data", path("flows.csv"), "--out", path("x")}).code,
            cli::kExitData);
  EXPECT_EQ(run_cli({"report", path("nowhere"), "--out", path("x")}).code, cli::kExitData);
}

TEST_F(Cli, PredictorTrainThenEvalReproducesMetrics) {
  put(path("p.json"), R"({"train_sequences": 200, "calibration_sequences": 200, "test_sequences": 200,
                          "attack_flows": 400, "predictor": {"vocab": 16},
                          "encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32},
                          "train": {"epochs": 2}})");
  ASSERT_EQ(run_cli({"predictor-train", "--config", path("p.json"), "--out", path("p")}).code, cli::kExitOk);
  const auto r = run_cli({"predictor-eval", "--model", path("p/predictor.ckpt"), "--data", path("p/test_benign.csv"),
                          "--data", path("p/test_attack.csv"), "--out", path("q")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto a = nlohmann::json::parse(slurp(path("p/report.json")))["reports"][0];
  const auto b = nlohmann::json::parse(slurp(path("q/report.json")))["reports"][0];
  EXPECT_EQ(a["counts"], b["counts"]);
  EXPECT_EQ(a["roc_auc"], b["roc_auc"]);
  EXPECT_EQ(a["config"]["threshold"], b["config"]["threshold"]);
  EXPECT_EQ(slurp(path("p/predictions.csv")), slurp(path("q/predictions.csv")));
}

TEST_F(Cli, PromptEvalStubAndUnreachableRemote) {
  const auto s = run_cli({"prompt-eval", "--client", "stub", "--seed", "4", "--out", path("s")});
  ASSERT_EQ(s.code, cli::kExitOk) << s.err;
  EXPECT_NE(s.out.find("0 unparseable"), std::string::npos);
  ASSERT_EQ(run_cli({"prompt-eval", "--client", "stub", "--seed", "4", "--out", path("t")}).code, cli::kExitOk);
  EXPECT_EQ(slurp(path("s/transcript.jsonl")), slurp(path("t/transcript.jsonl")));
  EXPECT_EQ(slurp(path("s/report.json")), slurp(path("t/report.json")));

  put(path("remote.json"), R"({"max_queries": 2, "remote": {"endpoint": "http://127.0.0.1:1/v1",
                               "max_retries": 0, "backoff_initial_seconds": 0.01}})");
  const auto r = run_cli({"prompt-eval", "--client", "remote", "--config", path("remote.json"), "--out", path("r")});
  EXPECT_EQ(r.code, cli::kExitRemote);
  EXPECT_TRUE(fs::exists(path("r/report.json")));
}
