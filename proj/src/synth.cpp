#include "flowsentry/synth.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "flowsentry/error.hpp"
#include "flowsentry/rng.hpp"

namespace flowsentry {

std::optional<Ipv4Prefix> Ipv4Prefix::parse(std::string_view cidr) {
  const auto slash = cidr.find('/');
  if (slash == std::string_view::npos) return std::nullopt;
  auto address = Ipv4::parse(cidr.substr(0, slash));
  if (!address) return std::nullopt;
  const std::string len_text(cidr.substr(slash + 1));
  if (len_text.empty() || len_text.size() > 2 ||
      !std::all_of(len_text.begin(), len_text.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return std::nullopt;
  }
  const int length = std::stoi(len_text);
  if (length > 32) return std::nullopt;
  const std::uint32_t mask = length == 0 ? 0 : ~std::uint32_t{0} << (32 - length);
  return Ipv4Prefix{Ipv4{address->bits & mask}, length};
}

std::string Ipv4Prefix::to_string() const { return network.to_string() + "/" + std::to_string(length); }

bool Ipv4Prefix::contains(Ipv4 address) const {
  const std::uint32_t mask = length == 0 ? 0 : ~std::uint32_t{0} << (32 - length);
  return (address.bits & mask) == network.bits;
}

bool Ipv4Prefix::overlaps(const Ipv4Prefix& other) const {
  return length <= other.length ? contains(other.network) : other.contains(network);
}

Ipv4Prefix benign_destination_prefix(const ScenarioConfig& config) {
  const Ipv4Prefix primary{Ipv4::from_octets(172, 16, 0, 0), 12};
  const Ipv4Prefix fallback{Ipv4::from_octets(10, 0, 0, 0), 8};
  return primary.overlaps(config.victim_prefix) ? fallback : primary;
}

std::vector<AttackVectorTemplate> builtin_vector_library() {
  using P = std::optional<std::uint16_t>;
  // name, protocol, src port, flags, pkt size, jitter, pps, duration
  return {
      {"DNS", ip_proto::kUdp, P{53}, 0, 1200.0, 0.05, 40.0, 20.0},
      {"NTP", ip_proto::kUdp, P{123}, 0, 468.0, 0.03, 60.0, 20.0},
      {"SYN", ip_proto::kTcp, std::nullopt, tcp_flag::kSyn, 60.0, 0.05, 80.0, 15.0},
      {"UDP", ip_proto::kUdp, std::nullopt, 0, 1024.0, 0.05, 50.0, 20.0},
      {"LDAP", ip_proto::kUdp, P{389}, 0, 1350.0, 0.05, 30.0, 20.0},
      {"SNMP", ip_proto::kUdp, P{161}, 0, 1100.0, 0.05, 30.0, 20.0},
      {"MSSQL", ip_proto::kUdp, P{1434}, 0, 420.0, 0.05, 50.0, 20.0},
      {"NetBIOS", ip_proto::kUdp, P{137}, 0, 230.0, 0.05, 70.0, 20.0},
      {"SSDP", ip_proto::kUdp, P{1900}, 0, 310.0, 0.05, 60.0, 20.0},
      {"Portmap", ip_proto::kUdp, P{111}, 0, 280.0, 0.05, 60.0, 20.0},
      {"TFTP", ip_proto::kUdp, P{69}, 0, 540.0, 0.05, 40.0, 20.0},
  };
}

AttackVectorTemplate builtin_vector(const std::string& name) {
  for (auto& t : builtin_vector_library()) {
    if (t.name == name) return t;
  }
  throw Error(Errc::UnknownVector, "no builtin attack vector named '" + name + "'");
}

namespace {

constexpr double kAttackRateJitter = 0.10;
constexpr double kBenignLogBytesMean = 8.0;
constexpr double kBenignLogBytesSigma = 2.0;
constexpr std::uint16_t kRegisteredPortLo = 1024;
constexpr std::uint16_t kRegisteredPortHi = 49151;

void validate(const ScenarioConfig& c) {
  if (c.victim_prefix.length < 24) {
    throw Error(Errc::InvalidConfig, "victim_prefix must be /24 or narrower");
  }
  const int capacity = 1 << (32 - c.victim_prefix.length);
  if (c.n_victims < 1 || c.n_victims > 256 || c.n_victims > capacity) {
    throw Error(Errc::InvalidConfig, "n_victims must be in [1, min(256, prefix size)]");
  }
  if (!(c.window_s > 0.0)) throw Error(Errc::InvalidConfig, "window_s must be positive");
  if (c.n_attack_flows > 0 && c.vectors.empty()) {
    throw Error(Errc::EmptyVectorList, "attack flows requested but no attack vectors configured");
  }
  for (const auto& v : c.vectors) {
    if (v.packet_size_jitter_frac < 0.0 || v.packet_size_jitter_frac > 0.5) {
      throw Error(Errc::InvalidConfig, v.name + ": packet_size_jitter_frac outside [0, 0.5]");
    }
    if (!(v.packet_size_mean > 0.0 && v.pps_mean > 0.0 && v.duration_mean_s > 0.0)) {
      throw Error(Errc::InvalidConfig, v.name + ": template means must be positive");
    }
  }
}

Ipv4 random_public_source(Rng& rng) {
  // Unicast space outside 0/8, 10/8, 127/8, 172.16/12, 192.168/16 and multicast.
  for (;;) {
    const auto a = static_cast<std::uint8_t>(rng.between(1, 223));
    const auto b = static_cast<std::uint8_t>(rng.between(0, 255));
    if (a == 10 || a == 127 || (a == 172 && b >= 16 && b < 32) || (a == 192 && b == 168) ||
        (a == 203 && b == 0)) {
      continue;
    }
    return Ipv4::from_octets(a, b, static_cast<std::uint8_t>(rng.between(0, 255)),
                             static_cast<std::uint8_t>(rng.between(1, 254)));
  }
}

double jittered(Rng& rng, double mean, double frac) {
  const double z = std::clamp(rng.normal(), -3.0, 3.0);
  return mean * (1.0 + frac * z);
}

FlowRecord attack_flow(const ScenarioConfig& c, const AttackVectorTemplate& v, std::size_t slot,
                       std::size_t n_slots, Rng& rng) {
  FlowRecord f;
  f.label = Label::Malicious;
  f.vector_tag = v.name;
  f.protocol = v.protocol;
  f.tcp_flags = v.tcp_flags;
  f.src_ip = random_public_source(rng);
  f.dst_ip = Ipv4{c.victim_prefix.network.bits + static_cast<std::uint32_t>(rng.below(c.n_victims))};
  f.src_port = v.fixed_src_port ? *v.fixed_src_port
                                : static_cast<std::uint16_t>(rng.between(kRegisteredPortLo, 65535));
  f.dst_port = static_cast<std::uint16_t>(rng.between(kRegisteredPortLo, 65535));

  const double size = std::max(40.0, jittered(rng, v.packet_size_mean, v.packet_size_jitter_frac));
  const double pps = std::max(0.1, jittered(rng, v.pps_mean, kAttackRateJitter));
  const double window_ms = c.window_s * 1000.0;
  const double duration_ms =
      std::min(std::max(1.0, jittered(rng, v.duration_mean_s, kAttackRateJitter) * 1000.0), window_ms);
  f.packets = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(pps * duration_ms / 1000.0)));
  f.bytes = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(size * static_cast<double>(f.packets))));

  double lo = 0.0;
  double hi = window_ms - duration_ms;
  if (n_slots > 1) {
    const double width = window_ms / static_cast<double>(n_slots);
    lo = width * static_cast<double>(slot);
    hi = std::min(hi, lo + width);
    lo = std::min(lo, hi);
  }
  f.first_ms = static_cast<std::uint64_t>(rng.uniform(lo, std::max(lo, hi)));
  f.last_ms = f.first_ms + static_cast<std::uint64_t>(duration_ms);
  return f;
}

FlowRecord benign_flow(const ScenarioConfig& c, const Ipv4Prefix& dst_prefix, Rng& rng) {
  FlowRecord f;
  f.label = Label::Benign;
  f.src_ip = random_public_source(rng);
  const std::uint32_t host_span = (std::uint32_t{1} << (32 - dst_prefix.length)) - 2;
  f.dst_ip = Ipv4{dst_prefix.network.bits + 1 + static_cast<std::uint32_t>(rng.below(host_span))};

  const double u = rng.uniform();
  f.protocol = u < 0.75 ? ip_proto::kTcp : (u < 0.95 ? ip_proto::kUdp : ip_proto::kIcmp);
  if (f.protocol != ip_proto::kIcmp) {
    f.src_port = static_cast<std::uint16_t>(rng.between(kRegisteredPortLo, kRegisteredPortHi));
    f.dst_port = static_cast<std::uint16_t>(rng.between(kRegisteredPortLo, kRegisteredPortHi));
  }
  if (f.protocol == ip_proto::kTcp) {
    // Completed sessions mostly; a few half-open or reset attempts.
    const double s = rng.uniform();
    using namespace tcp_flag;
    f.tcp_flags = s < 0.80 ? (kSyn | kAck | kPsh | kFin) : (s < 0.95 ? (kSyn | kAck | kRst) : kSyn);
  }

  const double bytes = std::exp(rng.normal(kBenignLogBytesMean, kBenignLogBytesSigma));
  const double packet_size = rng.uniform(64.0, 1400.0);
  f.bytes = static_cast<std::uint64_t>(std::clamp(std::llround(bytes), 40LL, 4'000'000'000LL));
  f.packets = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::llround(static_cast<double>(f.bytes) / packet_size)));

  const double window_ms = c.window_s * 1000.0;
  const double duration_ms = std::min(std::exp(rng.normal(std::log(5000.0), 1.5)), window_ms);
  f.first_ms = static_cast<std::uint64_t>(rng.uniform(0.0, window_ms - duration_ms));
  f.last_ms = f.first_ms + static_cast<std::uint64_t>(duration_ms);
  return f;
}

}  // namespace

FlowDataset generate_scenario(const ScenarioConfig& config) {
  validate(config);
  const Ipv4Prefix dst_prefix = benign_destination_prefix(config);

  FlowDataset out;
  out.provenance = "synth seed=" + std::to_string(config.seed);
  out.flows.reserve(config.n_attack_flows + config.n_benign_flows);

  Rng attack_rng(mix_seed(config.seed, 1));
  const std::size_t n_vectors = config.vectors.size();
  for (std::size_t i = 0; i < config.n_attack_flows; ++i) {
    const std::size_t v = i % n_vectors;
    out.flows.push_back(attack_flow(config, config.vectors[v], v,
                                    config.vector_episodes ? n_vectors : 1, attack_rng));
  }
  Rng benign_rng(mix_seed(config.seed, 2));
  for (std::size_t i = 0; i < config.n_benign_flows; ++i) {
    out.flows.push_back(benign_flow(config, dst_prefix, benign_rng));
  }
  std::stable_sort(out.flows.begin(), out.flows.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.first_ms < b.first_ms; });
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

AttackVectorTemplate template_from_json(const nlohmann::json& j) {
  if (j.is_string()) return builtin_vector(j.get<std::string>());
  AttackVectorTemplate t;
  if (j.contains("name") && j.size() == 1) return builtin_vector(j.at("name").get<std::string>());
  t.name = j.at("name").get<std::string>();
  t.protocol = j.value("protocol", t.protocol);
  if (j.contains("fixed_src_port") && !j.at("fixed_src_port").is_null()) {
    t.fixed_src_port = j.at("fixed_src_port").get<std::uint16_t>();
  }
  t.tcp_flags = j.value("tcp_flags", t.tcp_flags);
  t.packet_size_mean = j.value("packet_size_mean", t.packet_size_mean);
  t.packet_size_jitter_frac = j.value("packet_size_jitter_frac", t.packet_size_jitter_frac);
  t.pps_mean = j.value("pps_mean", t.pps_mean);
  t.duration_mean_s = j.value("duration_mean_s", t.duration_mean_s);
  return t;
}

nlohmann::json template_to_json(const AttackVectorTemplate& t) {
  nlohmann::json j{{"name", t.name},
                   {"protocol", t.protocol},
                   {"fixed_src_port", nullptr},
                   {"tcp_flags", t.tcp_flags},
                   {"packet_size_mean", t.packet_size_mean},
                   {"packet_size_jitter_frac", t.packet_size_jitter_frac},
                   {"pps_mean", t.pps_mean},
                   {"duration_mean_s", t.duration_mean_s}};
  if (t.fixed_src_port) j["fixed_src_port"] = *t.fixed_src_port;
  return j;
}

}  // namespace

ScenarioConfig scenario_from_json(const nlohmann::json& doc) {
  ScenarioConfig c;
  try {
    if (doc.contains("victim_prefix")) {
      auto prefix = Ipv4Prefix::parse(doc.at("victim_prefix").get<std::string>());
      if (!prefix) throw Error(Errc::InvalidConfig, "victim_prefix is not a CIDR prefix");
      c.victim_prefix = *prefix;
    }
    c.n_victims = doc.value("n_victims", c.n_victims);
    if (doc.contains("vectors")) {
      for (const auto& v : doc.at("vectors")) c.vectors.push_back(template_from_json(v));
    }
    c.n_attack_flows = doc.value("n_attack_flows", c.n_attack_flows);
    c.n_benign_flows = doc.value("n_benign_flows", c.n_benign_flows);
    c.window_s = doc.value("window_s", c.window_s);
    c.seed = doc.value("seed", c.seed);
    c.vector_episodes = doc.value("vector_episodes", c.vector_episodes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("scenario config: ") + e.what());
  }
  return c;
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  nlohmann::json vectors = nlohmann::json::array();
  for (const auto& v : c.vectors) vectors.push_back(template_to_json(v));
  return {{"victim_prefix", c.victim_prefix.to_string()},
          {"n_victims", c.n_victims},
          {"vectors", vectors},
          {"n_attack_flows", c.n_attack_flows},
          {"n_benign_flows", c.n_benign_flows},
          {"window_s", c.window_s},
          {"seed", c.seed},
          {"vector_episodes", c.vector_episodes}};
}

}  // namespace flowsentry
