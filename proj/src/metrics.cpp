#include "flowsentry/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "flowsentry/error.hpp"

namespace flowsentry {

namespace {

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

double roc_auc(std::span<const Label> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error(Errc::LengthMismatch, "labels and scores differ in length");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != Label::Unlabeled) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t start = 0; start < idx.size();) {
    std::size_t end = start;
    while (end < idx.size() && scores[idx[end]] == scores[idx[start]]) ++end;
    const double avg_rank = (static_cast<double>(start + 1) + static_cast<double>(end)) / 2.0;
    for (std::size_t k = start; k < end; ++k) {
      if (labels[idx[k]] == Label::Malicious) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    start = end;
  }
  const std::size_t negatives = idx.size() - positives;
  if (positives == 0 || negatives == 0) return 0.5;
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

MetricsReport compute_metrics(std::span<const Label> labels, std::span<const Label> predictions,
                              std::span<const double> scores) {
  if (labels.size() != predictions.size() || labels.size() != scores.size()) {
    throw Error(Errc::LengthMismatch, "labels, predictions and scores must have equal length");
  }
  MetricsReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::Unlabeled) continue;
    const bool actual = labels[i] == Label::Malicious;
    const bool predicted = predictions[i] == Label::Malicious;
    if (actual && predicted) ++r.counts.tp;
    else if (!actual && predicted) ++r.counts.fp;
    else if (!actual) ++r.counts.tn;
    else ++r.counts.fn;
  }
  if (r.counts.total() == 0) throw Error(Errc::NoLabeledData, "no labeled entries to score");
  const auto tp = static_cast<double>(r.counts.tp);
  r.precision = safe_ratio(tp, tp + static_cast<double>(r.counts.fp));
  r.recall = safe_ratio(tp, tp + static_cast<double>(r.counts.fn));
  // 2PR/(P+R) rewritten over counts; identical in exact arithmetic and free
  // of the rounding the product-over-sum form picks up.
  r.f1 = safe_ratio(2.0 * tp, 2.0 * tp + static_cast<double>(r.counts.fp + r.counts.fn));
  r.roc_auc = roc_auc(labels, scores);
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  return {{"name", r.name},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"roc_auc", r.roc_auc},
          {"config", r.config}};
}

MetricsReport report_from_json(const nlohmann::json& doc) {
  MetricsReport r;
  try {
    r.name = doc.value("name", std::string{});
    const auto& c = doc.at("counts");
    r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                c.at("fn").get<std::size_t>()};
    r.precision = doc.at("precision").get<double>();
    r.recall = doc.at("recall").get<double>();
    r.f1 = doc.at("f1").get<double>();
    r.roc_auc = doc.at("roc_auc").get<double>();
    r.runtime_seconds = doc.value("runtime_seconds", 0.0);
    if (doc.contains("config")) r.config = doc.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("malformed report: ") + e.what());
  }
  return r;
}

nlohmann::json timing_to_json(const MetricsReport& r) {
  return {{"name", r.name}, {"runtime_seconds", r.runtime_seconds}};
}

std::string reports_to_text(std::span<const MetricsReport> reports, bool with_runtime) {
  std::size_t name_width = 10;
  for (const auto& r : reports) name_width = std::max(name_width, r.name.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %8s %8s %8s %8s %8s %8s %8s %8s", static_cast<int>(name_width),
                "experiment", "TP", "FP", "TN", "FN", "prec", "recall", "f1", "auc");
  out << line << (with_runtime ? " runtime_s\n" : "\n");
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-*s %8zu %8zu %8zu %8zu %8.4f %8.4f %8.4f %8.4f",
                  static_cast<int>(name_width), r.name.c_str(), r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn,
                  r.precision, r.recall, r.f1, r.roc_auc);
    out << line;
    if (with_runtime) {
      std::snprintf(line, sizeof line, " %9.2f", r.runtime_seconds);
      out << line;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace flowsentry
