#include "flowsentry/sequencer.hpp"

#include <algorithm>
#include <numeric>

#include "flowsentry/error.hpp"

namespace flowsentry {

std::size_t FlowSequence::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

double sort_key_value(const FlowRecord& flow, SortKey key) {
  switch (key) {
    case SortKey::Bytes: return static_cast<double>(flow.bytes);
    case SortKey::Packets: return static_cast<double>(flow.packets);
    case SortKey::Pps: return static_cast<double>(flow.packets) / flow_duration_seconds(flow);
  }
  return 0.0;
}

std::vector<std::size_t> sort_order(std::span<const FlowRecord> flows, const SequencerConfig& config) {
  std::vector<double> keys(flows.size());
  std::transform(flows.begin(), flows.end(), keys.begin(),
                 [&](const FlowRecord& f) { return sort_key_value(f, config.sort_key); });
  std::vector<std::size_t> order(flows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return config.descending ? keys[a] > keys[b] : keys[a] < keys[b];
  });
  return order;
}

std::vector<FlowRecord> sort_flows(std::span<const FlowRecord> flows, const SequencerConfig& config) {
  std::vector<FlowRecord> out;
  out.reserve(flows.size());
  for (std::size_t i : sort_order(flows, config)) out.push_back(flows[i]);
  return out;
}

std::vector<std::size_t> equal_frequency_bin_sizes(std::size_t n, std::size_t bins) {
  if (bins == 0) throw Error(Errc::InvalidConfig, "bin count must be >= 1");
  const std::size_t q = n / bins;
  const std::size_t r = n % bins;
  std::vector<std::size_t> sizes(bins, q);
  for (std::size_t i = 0; i < r; ++i) ++sizes[i];
  return sizes;
}

std::vector<FlowSequence> assemble_vertical(const std::vector<std::vector<std::size_t>>& bins,
                                            std::span<const FlowRecord> flows, std::size_t window_id) {
  std::size_t depth = 0;
  for (const auto& bin : bins) depth = std::max(depth, bin.size());

  std::vector<FlowSequence> sequences(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    FlowSequence& seq = sequences[k];
    seq.window_id = window_id;
    seq.positions.resize(bins.size());
    seq.valid.assign(bins.size(), 0);
    for (std::size_t i = 0; i < bins.size(); ++i) {
      const auto& bin = bins[i];
      if (bin.empty()) continue;  // zero features, masked
      const bool real = k < bin.size();
      const std::size_t flow_index = real ? bin[k] : bin.back();
      const FlowRecord& flow = flows[flow_index];
      seq.positions[i] = SequencePosition{flow_index, flow_features(flow), flow.label};
      seq.valid[i] = real ? 1 : 0;
    }
  }
  return sequences;
}

std::vector<FlowSequence> sequentialize(std::span<const FlowRecord> flows, const SequencerConfig& config,
                                        std::size_t window_id) {
  if (flows.empty()) throw Error(Errc::EmptyWindow, "cannot sequentialize an empty window");
  if (config.length == 0) throw Error(Errc::InvalidConfig, "sequence length must be >= 1");
  const auto order = sort_order(flows, config);
  const auto bins = equal_frequency_bins<std::size_t>(order, config.length);
  return assemble_vertical(bins, flows, window_id);
}

std::vector<std::vector<std::size_t>> time_windows(std::span<const FlowRecord> flows,
                                                   std::size_t window_flows) {
  if (window_flows == 0) throw Error(Errc::InvalidConfig, "window size must be >= 1");
  std::vector<std::size_t> order(flows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return flows[a].first_ms < flows[b].first_ms; });
  std::vector<std::vector<std::size_t>> windows;
  for (std::size_t start = 0; start < order.size(); start += window_flows) {
    const std::size_t end = std::min(order.size(), start + window_flows);
    windows.emplace_back(order.begin() + start, order.begin() + end);
  }
  return windows;
}

std::vector<FlowSequence> sequentialize_dataset(std::span<const FlowRecord> flows,
                                                const SequencerConfig& config) {
  std::vector<FlowSequence> all;
  if (flows.empty()) return all;
  const auto windows = time_windows(flows, config.window_flows ? config.window_flows : flows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    std::vector<FlowRecord> window;
    window.reserve(windows[w].size());
    for (std::size_t i : windows[w]) window.push_back(flows[i]);
    for (auto& seq : sequentialize(window, config, w)) {
      for (auto& pos : seq.positions) {
        if (pos.flow_index != kNoFlow) pos.flow_index = windows[w][pos.flow_index];
      }
      all.push_back(std::move(seq));
    }
  }
  return all;
}

}  // namespace flowsentry
