#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "flowsentry/ingest.hpp"

namespace flowsentry {

enum class SortKey { Bytes, Packets, Pps };

struct SequencerConfig {
  std::size_t length = 16;  // T, >= 1
  SortKey sort_key = SortKey::Bytes;
  bool descending = true;
  /// Flows per time window for dataset-level sequentialization; 0 puts the
  /// whole dataset in one window.
  std::size_t window_flows = 0;

  bool operator==(const SequencerConfig&) const = default;
};

inline constexpr std::size_t kNoFlow = std::numeric_limits<std::size_t>::max();

struct SequencePosition {
  std::size_t flow_index = kNoFlow;  // index into the sequentialized window
  FeatureVector features{};
  Label label = Label::Unlabeled;
};

/// T positions; position i holds a flow from bin i. Padded positions carry
/// valid = 0 and never contribute to losses or metrics.
struct FlowSequence {
  std::vector<SequencePosition> positions;
  std::vector<std::uint8_t> valid;
  std::size_t window_id = 0;

  std::size_t length() const { return positions.size(); }
  std::size_t valid_count() const;
};

double sort_key_value(const FlowRecord& flow, SortKey key);

/// Stable sort; returns the permutation (indices into `flows`).
std::vector<std::size_t> sort_order(std::span<const FlowRecord> flows, const SequencerConfig& config);
std::vector<FlowRecord> sort_flows(std::span<const FlowRecord> flows, const SequencerConfig& config);

/// Sizes of `bins` contiguous equal-frequency bins over n items: the first
/// n mod bins get one extra item; when n < bins the tail bins are empty.
std::vector<std::size_t> equal_frequency_bin_sizes(std::size_t n, std::size_t bins);

template <class T>
std::vector<std::vector<T>> equal_frequency_bins(std::span<const T> sorted, std::size_t bins) {
  std::vector<std::vector<T>> out;
  out.reserve(bins);
  std::size_t offset = 0;
  for (std::size_t size : equal_frequency_bin_sizes(sorted.size(), bins)) {
    out.emplace_back(sorted.begin() + offset, sorted.begin() + offset + size);
    offset += size;
  }
  return out;
}

/// Transposes bins of flow indices into sequences: sequence k takes the k-th
/// member of every bin. A bin shorter than k+1 repeats its last member as a
/// masked position; an empty bin yields a masked zero-feature position.
std::vector<FlowSequence> assemble_vertical(const std::vector<std::vector<std::size_t>>& bins,
                                            std::span<const FlowRecord> flows,
                                            std::size_t window_id = 0);

/// sort_order -> equal_frequency_bins -> assemble_vertical. Throws EmptyWindow.
std::vector<FlowSequence> sequentialize(std::span<const FlowRecord> flows, const SequencerConfig& config,
                                        std::size_t window_id = 0);

/// Splits a dataset into consecutive windows of at most `window_flows` flows
/// in first_ms order (ties keep input order). Each window lists indices into
/// `flows`.
std::vector<std::vector<std::size_t>> time_windows(std::span<const FlowRecord> flows,
                                                   std::size_t window_flows);


/// time_windows(config.window_flows) + sequentialize per window, with
/// flow_index remapped to the dataset index. Windows are numbered in time
/// order.
std::vector<FlowSequence> sequentialize_dataset(std::span<const FlowRecord> flows,
                                                const SequencerConfig& config);

}  // namespace flowsentry
