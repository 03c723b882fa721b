#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flowsentry/ingest.hpp"

namespace flowsentry {

/// Tool signature of one attack vector. Attack flows are drawn from narrow
/// Gaussian jitter around these means.
struct AttackVectorTemplate {
  std::string name;
  std::uint8_t protocol = ip_proto::kUdp;
  std::optional<std::uint16_t> fixed_src_port;
  std::uint8_t tcp_flags = 0;
  double packet_size_mean = 512.0;
  double packet_size_jitter_frac = 0.05;  // [0, 0.5]
  double pps_mean = 50.0;
  double duration_mean_s = 20.0;

  bool operator==(const AttackVectorTemplate&) const = default;
};

struct Ipv4Prefix {
  Ipv4 network;
  int length = 24;

  static std::optional<Ipv4Prefix> parse(std::string_view cidr);
  std::string to_string() const;
  bool contains(Ipv4 address) const;
  bool overlaps(const Ipv4Prefix& other) const;
};

struct ScenarioConfig {
  Ipv4Prefix victim_prefix{Ipv4::from_octets(203, 0, 113, 0), 24};
  int n_victims = 64;  // <= 256
  std::vector<AttackVectorTemplate> vectors;
  std::size_t n_attack_flows = 0;
  std::size_t n_benign_flows = 0;
  double window_s = 600.0;
  std::uint64_t seed = 42;
  /// When set, each vector attacks during its own consecutive slice of the
  /// window (one tool active at a time); otherwise start times are uniform.
  bool vector_episodes = true;
};

/// Prefix benign destinations are drawn from (disjoint from any victim prefix
/// passed validation).
Ipv4Prefix benign_destination_prefix(const ScenarioConfig& config);

/// DNS, NTP, SYN followed by eight reconstruction templates (UDP, LDAP, SNMP,
/// MSSQL, NetBIOS, SSDP, Portmap, TFTP).
std::vector<AttackVectorTemplate> builtin_vector_library();

/// Looks a template up by name in the builtin library; throws UnknownVector.
AttackVectorTemplate builtin_vector(const std::string& name);

/// Deterministic in (config, seed). Output is ordered by first_ms.
FlowDataset generate_scenario(const ScenarioConfig& config);

/// JSON mirror of ScenarioConfig. `vectors` entries may be builtin names or
/// full template objects.
ScenarioConfig scenario_from_json(const nlohmann::json& doc);
nlohmann::json scenario_to_json(const ScenarioConfig& config);

}  // namespace flowsentry
