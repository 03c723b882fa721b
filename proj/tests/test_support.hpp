#pragma once

// Shared generators and oracles for the test binaries. Nothing here is used
// by the library itself.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flowsentry/ingest.hpp"
#include "flowsentry/model.hpp"
#include "flowsentry/rng.hpp"
#include "flowsentry/sequencer.hpp"

namespace flowsentry::testing {

inline void put16(std::vector<std::uint8_t>& b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v >> 8);
  b[off + 1] = static_cast<std::uint8_t>(v);
}

inline void put32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  put16(b, off, static_cast<std::uint16_t>(v >> 16));
  put16(b, off + 2, static_cast<std::uint16_t>(v));
}

/// The 72-byte reference datagram, written byte by byte at the v5 offsets:
/// one UDP record 10.0.0.1:53 -> 192.168.1.5:34567, 10 packets, 1500 bytes,
/// First 1000, Last 2000.
inline std::vector<std::uint8_t> hand_encoded_datagram() {
  std::vector<std::uint8_t> b(72, 0);
  put16(b, 0, 5);             // version
  put16(b, 2, 1);             // count
  put32(b, 4, 123456);        // sys_uptime
  put32(b, 8, 1700000000);    // unix_secs
  const std::size_t r = 24;
  put32(b, r + 0, (10u << 24) | 1);                      // srcaddr 10.0.0.1
  put32(b, r + 4, (192u << 24) | (168u << 16) | (1u << 8) | 5);  // dstaddr 192.168.1.5
  put32(b, r + 8, 0x01020304);                           // nexthop (discarded)
  put32(b, r + 16, 10);                                  // dPkts
  put32(b, r + 20, 1500);                                // dOctets
  put32(b, r + 24, 1000);                                // First
  put32(b, r + 28, 2000);                                // Last
  put16(b, r + 32, 53);                                  // srcport
  put16(b, r + 34, 34567);                               // dstport
  b[r + 37] = 0;                                         // tcp_flags
  b[r + 38] = 17;                                        // prot
  b[r + 39] = 0x10;                                      // tos (discarded)
  put16(b, r + 40, 64512);                               // src_as (discarded)
  b[r + 44] = 24;                                        // src_mask (discarded)
  return b;
}

inline FlowRecord random_flow(Rng& rng, std::uint64_t max_count = 1'000'000) {
  FlowRecord f;
  f.src_ip = Ipv4{static_cast<std::uint32_t>(rng.next_u64())};
  f.dst_ip = Ipv4{static_cast<std::uint32_t>(rng.next_u64())};
  f.src_port = static_cast<std::uint16_t>(rng.below(65536));
  f.dst_port = static_cast<std::uint16_t>(rng.below(65536));
  const std::uint8_t protos[] = {1, 6, 17, 47};
  f.protocol = protos[rng.below(4)];
  f.first_ms = rng.below(1'000'000);
  f.last_ms = f.first_ms + rng.below(100'000);
  f.packets = 1 + rng.below(max_count);
  f.bytes = 1 + rng.below(max_count * 100);
  f.tcp_flags = static_cast<std::uint8_t>(rng.below(256));
  f.label = rng.bernoulli(0.5) ? Label::Malicious : Label::Benign;
  return f;
}

/// Random labeled sequence of length T with `padded` trailing masked positions.
inline FlowSequence random_sequence(Rng& rng, std::size_t T, std::size_t padded = 0) {
  FlowSequence seq;
  seq.positions.resize(T);
  seq.valid.assign(T, 1);
  for (std::size_t i = 0; i < T; ++i) {
    FlowRecord f = random_flow(rng, 5000);
    seq.positions[i] = SequencePosition{i, flow_features(f), f.label};
    if (i + padded >= T) seq.valid[i] = 0;
  }
  return seq;
}

struct GradCheckResult {
  std::string worst_tensor;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<std::pair<std::string, double>> per_tensor;  // max rel error per tensor
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps exactly-zero gradients
/// (e.g. unused positional rows) from dividing by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences over every element of every parameter tensor.
template <class Params>
GradCheckResult finite_difference_check(Params params, const Params& analytic,
                                        const std::function<double(const Params&)>& loss, double h = 1e-5) {
  GradCheckResult result;
  std::vector<std::pair<std::string, const Matrix*>> grads;
  for_each_tensor(analytic, "", [&](const std::string& name, const Matrix& m) { grads.emplace_back(name, &m); });
  std::size_t t = 0;
  for_each_tensor(params, "", [&](const std::string& name, Matrix& m) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + h;
      const double up = loss(params);
      m.data()[i] = saved - h;
      const double down = loss(params);
      m.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(grads[t].second->data()[i], numeric);
      worst = std::max(worst, err);
      ++result.checked;
    }
    result.per_tensor.emplace_back(name, worst);
    if (worst > result.max_rel_error) {
      result.max_rel_error = worst;
      result.worst_tensor = name;
    }
    ++t;
  });
  return result;
}

inline EncoderConfig tiny_encoder_config(MaskMode mode = MaskMode::Bidirectional) {
  EncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 16;
  c.max_length = 4;
  c.mask_mode = mode;
  return c;
}

}  // namespace flowsentry::testing
