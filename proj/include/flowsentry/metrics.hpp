#pragma once

#include <cstddef>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "flowsentry/ingest.hpp"

namespace flowsentry {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Malicious is the positive class. Runtime and config are filled in by the
/// harness; compute_metrics leaves them empty.
struct MetricsReport {
  std::string name;
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.5;
  double runtime_seconds = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

/// Precision, recall and F1 with every 0/0 taken as 0; ROC-AUC from the
/// Mann-Whitney rank statistic over `scores` (ties get average ranks, 0.5
/// when a class is absent). Entries labeled Unlabeled are skipped. Throws
/// LengthMismatch, or NoLabeledData when nothing is labeled.
MetricsReport compute_metrics(std::span<const Label> labels, std::span<const Label> predictions,
                              std::span<const double> scores);

double roc_auc(std::span<const Label> labels, std::span<const double> scores);

/// Machine-readable report. Runtime is deliberately excluded so that reports
/// of identical runs are byte-identical; see timing_to_json.
nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& doc);
nlohmann::json timing_to_json(const MetricsReport& report);

/// Aligned-column table, one row per report. Without the runtime column the
/// text is as reproducible as the JSON.
std::string reports_to_text(std::span<const MetricsReport> reports, bool with_runtime = true);

}  // namespace flowsentry
