#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowsentry/error.hpp"
#include "flowsentry/ingest.hpp"

namespace flowsentry {

/// Single-line rendering, e.g.
/// "UDP flow 10.0.0.1:53 -> 192.168.1.5:34567, 10 packets, 1500 bytes, 1.000 s, 10.0 pkt/s".
/// TCP flows with any flag set get ", flags=" plus the set flags joined by
/// '|' in the order SYN, ACK, FIN, RST, PSH, URG, ECE, CWR.
std::string flow_to_text(const FlowRecord& flow);

std::string tcp_flags_text(std::uint8_t flags);

// ---------------------------------------------------------------------------
// Prompt assembly

struct PromptTemplate {
  std::string task_description;
  std::string output_statement;
  std::size_t fewshot_count = 4;  // k
  /// Layout with {TASK}, {FEWSHOTS}, {QUERIES} and {OUTPUT_STATEMENT}.
  std::string layout;
};

PromptTemplate default_prompt_template();

/// Reads a plain-text layout file; every placeholder must appear exactly
/// once. Throws InvalidConfig or Io.
std::string load_prompt_layout(const std::string& path);
void check_prompt_layout(const std::string& layout);

struct FewShotExample {
  std::size_t flow_index = 0;
  std::string flow_text;
  Label label = Label::Benign;
  std::string rationale;
};

using FewShotSet = std::vector<FewShotExample>;

/// One-line reason naming the flow's most telling feature: a bare SYN, or
/// its packet rate.
std::string fewshot_rationale(const FlowRecord& flow);

/// ceil(k/2) Malicious and floor(k/2) Benign flows, sampled per class with a
/// seeded shuffle and interleaved starting with Malicious. Throws
/// InsufficientClassExamples.
FewShotSet select_fewshots(const FlowDataset& dataset, std::size_t k, std::uint64_t seed);

/// Few-shot block as it appears in the prompt ("(none)" when empty).
std::string render_fewshots(const FewShotSet& fewshots);
/// "Query 1: <flow text>" lines.
std::string render_queries(std::span<const FlowRecord> queries);

/// Substitutes the four placeholders. Throws EmptyQuery.
std::string build_prompt(const PromptTemplate& tmpl, const FewShotSet& fewshots,
                         std::span<const FlowRecord> queries);

// ---------------------------------------------------------------------------
// Verdicts

enum class Decision { Benign, Malicious, Unparseable };

std::string_view decision_name(Decision d);

struct LlmVerdict {
  Decision decision = Decision::Unparseable;
  std::string explanation;
  std::string raw_response;
};

/// First case-insensitive occurrence of "benign" or "malicious" decides; the
/// text after the keyword (trimmed) is the explanation. Never throws.
LlmVerdict parse_verdict(const std::string& response);

/// Splits a multi-query response into per-query verdicts using the
/// "<n>." line prefixes the output statement asks for. With one query the
/// whole response is parsed. Missing answers come back Unparseable.
std::vector<LlmVerdict> parse_verdicts(const std::string& response, std::size_t query_count);

// ---------------------------------------------------------------------------
// Clients

inline constexpr double kStubRateThreshold = 1000.0;   // pkt/s
inline constexpr std::uint64_t kStubSynPackets = 100;  // packets

/// Offline deterministic answerer. Reads the "Query n:" lines of a prompt and
/// answers one "<n>. Malicious|Benign - reason" line per query: Malicious when
/// the rate exceeds 1000 pkt/s, or when the flow's flags are exactly SYN with
/// more than 100 packets. Throws MalformedPrompt when there is no parseable
/// query line.
std::string stub_classify(const std::string& prompt);

struct LlmClientConfig {
  std::string endpoint = "http://127.0.0.1:8080/v1";
  std::string model = "llama-2-7b-chat";
  double timeout_seconds = 30.0;
  std::size_t max_retries = 3;
  double temperature = 0.0;
  double backoff_initial_seconds = 0.5;  // doubled after each failed attempt
  std::size_t max_in_flight = 4;

  /// Throws InvalidConfig.
  void validate() const;
};

inline constexpr const char* kApiKeyEnv = "FLOWSENTRY_LLM_KEY";

/// Request body for one chat-completion call.
std::string chat_request_body(const LlmClientConfig& config, const std::string& prompt);
/// choices[0].message.content; throws HttpError(status) when absent.
std::string chat_response_content(const std::string& body, int status);

/// One chat-completion exchange with retries. Connection failures, 408, 429
/// and 5xx are retried with exponential backoff; once max_retries retries
/// are spent this throws RetriesExhausted. A read timeout throws Timeout
/// without retrying, and other statuses throw HttpError at once. The bearer
/// token comes from FLOWSENTRY_LLM_KEY only.
std::string classify_remote(const LlmClientConfig& config, const std::string& prompt);

/// Per-prompt outcome of a concurrent batch.
struct RemoteOutcome {
  std::optional<std::string> response;
  std::optional<Errc> error;
  std::string error_message;
};

/// Issues the prompts with at most config.max_in_flight requests in flight.
/// Outcomes are returned in prompt order; failures are captured, not thrown.
std::vector<RemoteOutcome> classify_remote_batch(const LlmClientConfig& config,
                                                 std::span<const std::string> prompts);

}  // namespace flowsentry
