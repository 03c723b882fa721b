#include "flowsentry/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "flowsentry/error.hpp"

namespace flowsentry {

std::optional<Ipv4> Ipv4::parse(std::string_view text) {
  std::uint32_t bits = 0;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int octet = 0; octet < 4; ++octet) {
    unsigned value = 0;
    auto [next, ec] = std::from_chars(p, end, value);
    if (ec != std::errc{} || next == p || value > 255 || next - p > 3) return std::nullopt;
    bits = (bits << 8) | value;
    p = next;
    if (octet < 3) {
      if (p == end || *p != '.') return std::nullopt;
      ++p;
    }
  }
  if (p != end) return std::nullopt;
  return Ipv4{bits};
}

std::string Ipv4::to_string() const {
  return std::to_string(bits >> 24) + '.' + std::to_string((bits >> 16) & 0xff) + '.' +
         std::to_string((bits >> 8) & 0xff) + '.' + std::to_string(bits & 0xff);
}

std::string_view label_name(Label label) {
  switch (label) {
    case Label::Benign: return "Benign";
    case Label::Malicious: return "Malicious";
    case Label::Unlabeled: return "Unlabeled";
  }
  return "Unlabeled";
}

std::optional<Label> parse_label(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "benign") return Label::Benign;
  if (lower == "malicious") return Label::Malicious;
  if (lower == "unlabeled" || lower.empty()) return Label::Unlabeled;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// NetFlow v5

namespace {

class BigEndianReader {
 public:
  explicit BigEndianReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint16_t u16() {
    const auto v = static_cast<std::uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    const std::uint32_t hi = u16();
    return (hi << 16) | u16();
  }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class BigEndianWriter {
 public:
  explicit BigEndianWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
  }

 private:
  std::vector<std::uint8_t>& out_;
};

std::uint32_t checked_u32(std::uint64_t value, const char* field) {
  if (value > UINT32_MAX) {
    throw Error(Errc::FieldOverflow, std::string(field) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(value);
}

std::uint16_t expected_records(std::span<const std::uint8_t> datagram) {
  if (datagram.size() < kNetflowV5HeaderSize) {
    throw Error(Errc::TruncatedDatagram,
                "datagram of " + std::to_string(datagram.size()) + " bytes is shorter than the header");
  }
  BigEndianReader header(datagram);
  const std::uint16_t version = header.u16();
  if (version != 5) {
    throw Error(Errc::VersionMismatch, "expected version 5, got " + std::to_string(version));
  }
  return header.u16();
}

}  // namespace

std::vector<FlowRecord> parse_netflow_v5(std::span<const std::uint8_t> datagram) {
  const std::uint16_t count = expected_records(datagram);
  const std::size_t want = kNetflowV5HeaderSize + kNetflowV5RecordSize * count;
  if (datagram.size() != want) {
    throw Error(Errc::TruncatedDatagram, "count " + std::to_string(count) + " implies " +
                                             std::to_string(want) + " bytes, got " +
                                             std::to_string(datagram.size()));
  }

  std::vector<FlowRecord> flows;
  flows.reserve(count);
  BigEndianReader in(datagram.subspan(kNetflowV5HeaderSize));
  for (std::uint16_t i = 0; i < count; ++i) {
    FlowRecord f;
    f.src_ip = Ipv4{in.u32()};
    f.dst_ip = Ipv4{in.u32()};
    in.skip(4 + 2 + 2);  // nexthop, input, output
    f.packets = in.u32();
    f.bytes = in.u32();
    f.first_ms = in.u32();
    f.last_ms = in.u32();
    f.src_port = in.u16();
    f.dst_port = in.u16();
    in.skip(1);  // pad1
    f.tcp_flags = in.u8();
    f.protocol = in.u8();
    in.skip(1 + 2 + 2 + 1 + 1 + 2);  // tos, src_as, dst_as, src_mask, dst_mask, pad2
    f.label = Label::Unlabeled;
    flows.push_back(std::move(f));
  }
  return flows;
}

std::vector<std::uint8_t> serialize_netflow_v5(std::span<const FlowRecord> flows,
                                               const NetflowV5Header& header) {
  if (flows.size() > kNetflowV5MaxRecords) {
    throw Error(Errc::TooManyRecords, std::to_string(flows.size()) + " records exceed the v5 limit of 30");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kNetflowV5HeaderSize + kNetflowV5RecordSize * flows.size());
  BigEndianWriter w(out);
  w.u16(5);
  w.u16(static_cast<std::uint16_t>(flows.size()));
  w.u32(header.sys_uptime);
  w.u32(header.unix_secs);
  w.u32(header.unix_nsecs);
  w.u32(header.flow_sequence);
  w.u8(header.engine_type);
  w.u8(header.engine_id);
  w.u16(header.sampling_interval);

  for (const FlowRecord& f : flows) {
    w.u32(f.src_ip.bits);
    w.u32(f.dst_ip.bits);
    w.u32(0);  // nexthop
    w.u16(0);  // input
    w.u16(0);  // output
    w.u32(checked_u32(f.packets, "packets"));
    w.u32(checked_u32(f.bytes, "bytes"));
    w.u32(checked_u32(f.first_ms, "first_ms"));
    w.u32(checked_u32(f.last_ms, "last_ms"));
    w.u16(f.src_port);
    w.u16(f.dst_port);
    w.u8(0);
    w.u8(f.tcp_flags);
    w.u8(f.protocol);
    w.u8(0);   // tos
    w.u16(0);  // src_as
    w.u16(0);  // dst_as
    w.u8(0);   // src_mask
    w.u8(0);   // dst_mask
    w.u16(0);
  }
  return out;
}

std::vector<FlowRecord> parse_netflow_v5_stream(std::span<const std::uint8_t> bytes) {
  std::vector<FlowRecord> all;
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto rest = bytes.subspan(offset);
    const std::uint16_t count = expected_records(rest);
    const std::size_t size = kNetflowV5HeaderSize + kNetflowV5RecordSize * count;
    if (rest.size() < size) {
      throw Error(Errc::TruncatedDatagram, "datagram at offset " + std::to_string(offset) +
                                               " is cut short");
    }
    auto flows = parse_netflow_v5(rest.first(size));
    all.insert(all.end(), std::make_move_iterator(flows.begin()), std::make_move_iterator(flows.end()));
    offset += size;
  }
  return all;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

template <class T>
T parse_unsigned(const std::string& text, std::uint64_t max, std::size_t row, std::string_view column) {
  std::uint64_t value = 0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || p != end || text.empty() || value > max) {
    throw RowParseError(row, "column " + std::string(column) + ": invalid value '" + text + "'");
  }
  return static_cast<T>(value);
}

}  // namespace

FlowDataset read_flow_csv(std::istream& in, std::string provenance) {
  FlowDataset dataset;
  dataset.provenance = std::move(provenance);

  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::SchemaMismatch, "missing header row");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);

  std::array<std::size_t, kFlowCsvColumns.size()> index{};
  for (std::size_t c = 0; c < kFlowCsvColumns.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), kFlowCsvColumns[c]);
    if (it == header.end()) {
      throw Error(Errc::SchemaMismatch, "missing required column '" + std::string(kFlowCsvColumns[c]) + "'");
    }
    index[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size()) {
      throw RowParseError(row, "expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(cells.size()));
    }
    auto cell = [&](std::size_t column) -> const std::string& { return cells[index[column]]; };

    FlowRecord f;
    auto src = Ipv4::parse(cell(0));
    auto dst = Ipv4::parse(cell(1));
    if (!src) throw RowParseError(row, "column src_ip: invalid address '" + cell(0) + "'");
    if (!dst) throw RowParseError(row, "column dst_ip: invalid address '" + cell(1) + "'");
    f.src_ip = *src;
    f.dst_ip = *dst;
    f.src_port = parse_unsigned<std::uint16_t>(cell(2), 65535, row, kFlowCsvColumns[2]);
    f.dst_port = parse_unsigned<std::uint16_t>(cell(3), 65535, row, kFlowCsvColumns[3]);
    f.protocol = parse_unsigned<std::uint8_t>(cell(4), 255, row, kFlowCsvColumns[4]);
    f.first_ms = parse_unsigned<std::uint64_t>(cell(5), UINT64_MAX, row, kFlowCsvColumns[5]);
    f.last_ms = parse_unsigned<std::uint64_t>(cell(6), UINT64_MAX, row, kFlowCsvColumns[6]);
    f.packets = parse_unsigned<std::uint64_t>(cell(7), UINT64_MAX, row, kFlowCsvColumns[7]);
    f.bytes = parse_unsigned<std::uint64_t>(cell(8), UINT64_MAX, row, kFlowCsvColumns[8]);
    f.tcp_flags = parse_unsigned<std::uint8_t>(cell(9), 255, row, kFlowCsvColumns[9]);
    auto label = parse_label(cell(10));
    if (!label) throw RowParseError(row, "column label: unknown label '" + cell(10) + "'");
    f.label = *label;
    if (!cell(11).empty()) f.vector_tag = cell(11);

    if (f.last_ms < f.first_ms) throw RowParseError(row, "last_ms precedes first_ms");
    if (f.packets == 0) throw RowParseError(row, "packets must be >= 1");
    if (f.bytes == 0) throw RowParseError(row, "bytes must be >= 1");
    dataset.flows.push_back(std::move(f));
  }
  return dataset;
}

void write_flow_csv(const FlowDataset& dataset, std::ostream& out) {
  for (std::size_t c = 0; c < kFlowCsvColumns.size(); ++c) {
    out << (c ? "," : "") << kFlowCsvColumns[c];
  }
  out << '\n';
  for (const FlowRecord& f : dataset.flows) {
    out << f.src_ip.to_string() << ',' << f.dst_ip.to_string() << ',' << f.src_port << ','
        << f.dst_port << ',' << unsigned{f.protocol} << ',' << f.first_ms << ',' << f.last_ms << ','
        << f.packets << ',' << f.bytes << ',' << unsigned{f.tcp_flags} << ',' << label_name(f.label)
        << ',' << csv_escape(f.vector_tag.value_or("")) << '\n';
  }
}

FlowDataset load_flow_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open '" + path + "'");
  return read_flow_csv(in, path);
}

void save_flow_csv(const FlowDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write '" + path + "'");
  write_flow_csv(dataset, out);
  if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Features

double flow_duration_seconds(const FlowRecord& flow) {
  const double seconds = static_cast<double>(flow.last_ms - flow.first_ms) / 1000.0;
  return std::max(seconds, kMinDurationSeconds);
}

FeatureVector flow_features(const FlowRecord& flow) {
  const double packets = static_cast<double>(flow.packets);
  const double bytes = static_cast<double>(flow.bytes);
  const double duration = flow_duration_seconds(flow);
  const bool syn = (flow.tcp_flags & tcp_flag::kSyn) != 0;
  const bool ack = (flow.tcp_flags & tcp_flag::kAck) != 0;
  auto indicator = [](bool b) { return b ? 1.0 : 0.0; };

  return FeatureVector{
      std::log1p(packets),
      std::log1p(bytes),
      duration,
      bytes / packets,
      packets / duration,
      bytes * 8.0 / duration,
      indicator(flow.protocol == ip_proto::kTcp),
      indicator(flow.protocol == ip_proto::kUdp),
      indicator(flow.protocol == ip_proto::kIcmp),
      indicator(flow.dst_port < 1024),
      indicator(flow.src_port < 1024),
      indicator(flow.protocol == ip_proto::kTcp && syn && !ack),
  };
}

}  // namespace flowsentry
