#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "flowsentry/error.hpp"
#include "flowsentry/experiment.hpp"

using namespace flowsentry;

namespace {

// Flow identity for disjointness checks: every synthetic flow differs in at
// least one of these fields from every other.
using FlowKey = std::tuple<std::uint32_t, std::uint32_t, std::uint16_t, std::uint16_t, std::uint64_t, std::uint64_t,
                           std::uint64_t>;
FlowKey key(const FlowRecord& f) {
  return {f.src_ip.bits, f.dst_ip.bits, f.src_port, f.dst_port, f.first_ms, f.packets, f.bytes};
}

std::size_t count(const FlowDataset& d, Label l) {
  return static_cast<std::size_t>(
      std::count_if(d.flows.begin(), d.flows.end(), [&](const FlowRecord& f) { return f.label == l; }));
}

std::vector<FlowDataset> small_pool(std::uint64_t seed, std::size_t attack = 600, std::size_t benign = 1200) {
  ScenarioConfig s = default_scenario(seed);
  s.n_attack_flows = attack;
  s.n_benign_flows = benign;
  return {generate_scenario(s)};
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.train_malicious = 150;
  c.test_malicious = 60;
  c.test_ratio = {1, 10};
  c.encoder.d_model = 16;
  c.encoder.n_heads = 2;
  c.encoder.n_layers = 1;
  c.encoder.d_ff = 32;
  c.train.epochs = 3;
  return c;
}

}  // namespace

TEST(BuildSplit, RatiosAreExact) {
  const auto pool = small_pool(1);
  auto c = small_config();
  c.train_malicious = 151;  // truncated to a multiple of 1 -> unchanged
  c.test_malicious = 61;
  c.test_ratio = {2, 7};  // 61 -> 60 malicious, 210 benign
  const auto split = build_split(pool, c);
  EXPECT_EQ(count(split.train, Label::Malicious), 151u);
  EXPECT_EQ(count(split.train, Label::Benign), 151u);
  EXPECT_EQ(count(split.test, Label::Malicious), 60u);
  EXPECT_EQ(count(split.test, Label::Benign), 210u);
}

TEST(BuildSplit, OneToTenExample) {
  const auto split = build_split(small_pool(2), small_config());
  EXPECT_EQ(count(split.test, Label::Malicious) * 10, count(split.test, Label::Benign));
}

TEST(BuildSplit, VectorsRespectedAndBalanced) {
  const auto pool = zero_shot_pool(3);
  const auto c = zero_shot_config(3);
  const auto split = build_split(pool, c);
  std::map<std::string, std::size_t> per_vector;
  for (const auto& f : split.train.flows) {
    if (f.label != Label::Malicious) continue;
    ASSERT_TRUE(f.vector_tag);
    EXPECT_TRUE(*f.vector_tag == "DNS" || *f.vector_tag == "NTP" || *f.vector_tag == "SYN");
  }
  for (const auto& f : split.test.flows) {
    if (f.label != Label::Malicious) continue;
    ASSERT_TRUE(f.vector_tag);
    EXPECT_NE(std::find(c.test_vectors.begin(), c.test_vectors.end(), *f.vector_tag), c.test_vectors.end());
    ++per_vector[*f.vector_tag];
  }
  EXPECT_EQ(per_vector.size(), 8u);
  for (const auto& [name, n] : per_vector) EXPECT_EQ(n, 50u) << name;
}

TEST(BuildSplit, DisjointAndDeterministicProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pool = small_pool(100 + seed, 300, 900);
    auto c = small_config();
    c.seed = seed;
    c.train_malicious = 60 + seed;
    c.test_malicious = 30;
    const auto a = build_split(pool, c);
    const auto b = build_split(pool, c);
    EXPECT_EQ(a.train.flows, b.train.flows);
    EXPECT_EQ(a.test.flows, b.test.flows);

    std::set<FlowKey> train_keys;
    for (const auto& f : a.train.flows) train_keys.insert(key(f));
    EXPECT_EQ(train_keys.size(), a.train.flows.size());
    for (const auto& f : a.test.flows) EXPECT_EQ(train_keys.count(key(f)), 0u);
    EXPECT_TRUE(std::is_sorted(a.test.flows.begin(), a.test.flows.end(),
                               [](const FlowRecord& x, const FlowRecord& y) { return x.first_ms < y.first_ms; }));
  }
}

TEST(BuildSplit, DifferentSeedsDiffer) {
  const auto pool = small_pool(4);
  auto c = small_config();
  const auto a = build_split(pool, c);
  c.seed = 99;
  const auto b = build_split(pool, c);
  EXPECT_NE(a.train.flows, b.train.flows);
}

TEST(BuildSplit, ZeroShotOverlapIsConfigError) {
  auto c = zero_shot_config(1);
  c.test_vectors.push_back("NTP");
  try {
    build_split(small_pool(5), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidConfig);
    EXPECT_NE(std::string(e.what()).find("NTP"), std::string::npos);
  }
}

TEST(BuildSplit, InsufficientFlowsNamesTheShortfall) {
  auto c = small_config();
  c.train_malicious = 3000;
  try {
    build_split(small_pool(6), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientFlows);
    EXPECT_NE(std::string(e.what()).find("DNS"), std::string::npos);
  }
  c = small_config();
  c.test_malicious = 200;  // 2000 benign wanted
  try {
    build_split(small_pool(6), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientFlows);
    EXPECT_NE(std::string(e.what()).find("benign"), std::string::npos);
  }
}

TEST(Experiment, RunIsDeterministicAndTagsConfig) {
  const auto pool = small_pool(7);
  const auto c = small_config();
  const auto a = run_experiment(pool, c);
  const auto b = run_experiment(pool, c);
  EXPECT_EQ(report_to_json(a.result.report).dump(), report_to_json(b.result.report).dump());
  EXPECT_EQ(a.result.report.config.at("seed"), 42);
  EXPECT_EQ(a.result.predictions.size(), a.result.report.counts.total());
  EXPECT_GT(a.result.report.f1, 0.5);
}

TEST(Experiment, StageTaggedErrors) {
  auto c = small_config();
  c.train_malicious = 100000;
  try {
    run_experiment(small_pool(8), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.stage(), "split");
  }
}

TEST(Baseline, SeparableSetNeedsNoContext) {
  const auto pool = small_pool(9, 800, 800);
  auto c = small_config();
  c.train_malicious = 300;
  c.test_malicious = 300;
  c.test_ratio = {1, 1};
  c.train.epochs = 60;
  const auto split = build_split(pool, c);
  const auto run = baseline_feature_mlp(split.train, split.test, c);
  EXPECT_GE(run.result.report.f1, 0.99);
  EXPECT_EQ(run.model.sequencer.length, 1u);
  EXPECT_EQ(run.model.config.n_layers, 0u);

  const auto again = baseline_feature_mlp(split.train, split.test, c);
  EXPECT_EQ(report_to_json(run.result.report).dump(), report_to_json(again.result.report).dump());
}

TEST(Experiment, PredictionsCsv) {
  FlowDataset d;
  FlowRecord f;
  f.src_ip = Ipv4::from_octets(10, 0, 0, 1);
  f.dst_ip = Ipv4::from_octets(10, 0, 0, 2);
  f.src_port = 53;
  f.dst_port = 4000;
  f.protocol = 17;
  f.label = Label::Malicious;
  f.vector_tag = "DNS";
  d.flows.push_back(f);
  std::vector<FlowPrediction> p{{0, Label::Malicious, 0.75, Label::Malicious}};
  std::ostringstream out;
  write_predictions_csv(d, p, out);
  EXPECT_EQ(out.str(),
            "flow_index,src_ip,dst_ip,src_port,dst_port,protocol,label,vector_tag,score,predicted\n"
            "0,10.0.0.1,10.0.0.2,53,4000,17,Malicious,DNS,0.75,Malicious\n");
}

TEST(ExperimentConfigJson, RoundTrip) {
  auto c = zero_shot_config(5);
  c.train.epochs = 7;
  const auto back = experiment_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  try {
    experiment_from_json(nlohmann::json{{"test_ratio", {0, 10}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidConfig);
  }
}
