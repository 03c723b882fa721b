#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowsentry {

struct Ipv4 {
  std::uint32_t bits = 0;

  static Ipv4 from_octets(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    return Ipv4{(std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d};
  }
  /// Dotted quad; returns nullopt on malformed text.
  static std::optional<Ipv4> parse(std::string_view text);
  std::string to_string() const;

  auto operator<=>(const Ipv4&) const = default;
};

enum class Label : std::uint8_t { Benign, Malicious, Unlabeled };

std::string_view label_name(Label label);
std::optional<Label> parse_label(std::string_view text);

namespace tcp_flag {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
inline constexpr std::uint8_t kUrg = 0x20;
inline constexpr std::uint8_t kEce = 0x40;
inline constexpr std::uint8_t kCwr = 0x80;
}  // namespace tcp_flag

namespace ip_proto {
inline constexpr std::uint8_t kIcmp = 1;
inline constexpr std::uint8_t kTcp = 6;
inline constexpr std::uint8_t kUdp = 17;
}  // namespace ip_proto

/// One aggregated unidirectional flow.
///
/// Invariants: last_ms >= first_ms, packets >= 1, bytes >= 1. bytes may be
/// smaller than packets (truncated exports are accepted).
struct FlowRecord {
  Ipv4 src_ip;
  Ipv4 dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;
  std::uint64_t first_ms = 0;
  std::uint64_t last_ms = 0;
  std::uint64_t packets = 1;
  std::uint64_t bytes = 1;
  std::uint8_t tcp_flags = 0;
  Label label = Label::Unlabeled;
  std::optional<std::string> vector_tag;

  bool operator==(const FlowRecord&) const = default;
};

struct FlowDataset {
  std::vector<FlowRecord> flows;
  std::string provenance;

  bool operator==(const FlowDataset&) const = default;
};

// ---------------------------------------------------------------------------
// NetFlow v5

inline constexpr std::size_t kNetflowV5HeaderSize = 24;
inline constexpr std::size_t kNetflowV5RecordSize = 48;
inline constexpr std::size_t kNetflowV5MaxRecords = 30;

/// Header fields other than version and count, which are derived.
struct NetflowV5Header {
  std::uint32_t sys_uptime = 0;
  std::uint32_t unix_secs = 0;
  std::uint32_t unix_nsecs = 0;
  std::uint32_t flow_sequence = 0;
  std::uint8_t engine_type = 0;
  std::uint8_t engine_id = 0;
  std::uint16_t sampling_interval = 0;
};

/// Decodes one datagram. Throws VersionMismatch or TruncatedDatagram; no
/// partial result is ever returned.
std::vector<FlowRecord> parse_netflow_v5(std::span<const std::uint8_t> datagram);

/// Encodes up to 30 records. Label and vector_tag are not representable on
/// the wire and are dropped. Throws TooManyRecords, or FieldOverflow when a
/// counter or timestamp exceeds its 32-bit field.
std::vector<std::uint8_t> serialize_netflow_v5(std::span<const FlowRecord> flows,
                                               const NetflowV5Header& header = {});

/// Decodes a file of back-to-back datagrams (as written by a collector that
/// appends each received UDP payload).
std::vector<FlowRecord> parse_netflow_v5_stream(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Flow CSV

inline constexpr std::array<std::string_view, 12> kFlowCsvColumns = {
    "src_ip", "dst_ip", "src_port", "dst_port", "protocol", "first_ms",
    "last_ms", "packets", "bytes", "tcp_flags", "label", "vector_tag"};

/// Header row required; columns may appear in any order and unknown columns
/// are ignored. Row numbers in errors are 1-based with the header as row 1.
FlowDataset read_flow_csv(std::istream& in, std::string provenance = {});
void write_flow_csv(const FlowDataset& dataset, std::ostream& out);

FlowDataset load_flow_csv(const std::string& path);
void save_flow_csv(const FlowDataset& dataset, const std::string& path);

// ---------------------------------------------------------------------------
// Features

inline constexpr std::size_t kFeatureCount = 12;
using FeatureVector = std::array<double, kFeatureCount>;

/// Names in feature order.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "log1p_packets", "log1p_bytes", "duration_s", "mean_packet_size",
    "pps", "bps", "proto_tcp", "proto_udp", "proto_icmp",
    "dst_port_well_known", "src_port_well_known", "syn_without_ack"};

/// Duration floor applied before any rate division.
inline constexpr double kMinDurationSeconds = 0.001;

double flow_duration_seconds(const FlowRecord& flow);

FeatureVector flow_features(const FlowRecord& flow);

}  // namespace flowsentry
