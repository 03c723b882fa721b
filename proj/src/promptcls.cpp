#include "flowsentry/promptcls.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "flowsentry/rng.hpp"

namespace flowsentry {

namespace {

std::string format(const char* fmt, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, value);
  return buf;
}

std::string protocol_name(std::uint8_t protocol) {
  switch (protocol) {
    case ip_proto::kTcp: return "TCP";
    case ip_proto::kUdp: return "UDP";
    case ip_proto::kIcmp: return "ICMP";
    default: return "IP" + std::to_string(unsigned{protocol});
  }
}

double packet_rate(const FlowRecord& flow) {
  return static_cast<double>(flow.packets) / flow_duration_seconds(flow);
}

bool bare_syn(const FlowRecord& flow) {
  return flow.protocol == ip_proto::kTcp && flow.tcp_flags == tcp_flag::kSyn;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

constexpr const char* kPlaceholders[] = {"{TASK}", "{FEWSHOTS}", "{QUERIES}", "{OUTPUT_STATEMENT}"};

}  // namespace

std::string tcp_flags_text(std::uint8_t flags) {
  static constexpr std::pair<std::uint8_t, const char*> kOrder[] = {
      {tcp_flag::kSyn, "SYN"}, {tcp_flag::kAck, "ACK"}, {tcp_flag::kFin, "FIN"}, {tcp_flag::kRst, "RST"},
      {tcp_flag::kPsh, "PSH"}, {tcp_flag::kUrg, "URG"}, {tcp_flag::kEce, "ECE"}, {tcp_flag::kCwr, "CWR"}};
  std::string out;
  for (const auto& [bit, name] : kOrder) {
    if (!(flags & bit)) continue;
    if (!out.empty()) out += '|';
    out += name;
  }
  return out;
}

std::string flow_to_text(const FlowRecord& flow) {
  std::string out = protocol_name(flow.protocol) + " flow " + flow.src_ip.to_string() + ":" +
                    std::to_string(flow.src_port) + " -> " + flow.dst_ip.to_string() + ":" +
                    std::to_string(flow.dst_port) + ", " + std::to_string(flow.packets) + " packets, " +
                    std::to_string(flow.bytes) + " bytes, " + format("%.3f", flow_duration_seconds(flow)) + " s, " +
                    format("%.1f", packet_rate(flow)) + " pkt/s";
  if (flow.protocol == ip_proto::kTcp && flow.tcp_flags != 0) out += ", flags=" + tcp_flags_text(flow.tcp_flags);
  return out;
}

// ---------------------------------------------------------------------------

PromptTemplate default_prompt_template() {
  PromptTemplate t;
  t.task_description =
      "You are a network security analyst. Each flow below is one aggregated, unidirectional flow record "
      "exported by a router at the edge of a customer prefix. Decide for every query flow whether it is part "
      "of a DDoS attack (for example reflection/amplification or SYN flooding) or ordinary traffic.";
  t.output_statement =
      "Please respond with either 'Benign' or 'Malicious' for each query flow, one line per query in the form "
      "'<n>. <Benign|Malicious> - <one-sentence explanation>', and provide a brief explanation for your "
      "classification.";
  t.fewshot_count = 4;
  t.layout = "{TASK}\n\nLabeled examples:\n{FEWSHOTS}\nFlows to classify:\n{QUERIES}\n{OUTPUT_STATEMENT}\n";
  return t;
}

void check_prompt_layout(const std::string& layout) {
  for (const char* p : kPlaceholders) {
    const auto first = layout.find(p);
    if (first == std::string::npos) {
      throw Error(Errc::InvalidConfig, std::string("prompt layout lacks ") + p);
    }
    if (layout.find(p, first + 1) != std::string::npos) {
      throw Error(Errc::InvalidConfig, std::string("prompt layout repeats ") + p);
    }
  }
}

std::string load_prompt_layout(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open prompt layout " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  check_prompt_layout(buf.str());
  return buf.str();
}

std::string fewshot_rationale(const FlowRecord& flow) {
  const std::string rate = format("%.1f", packet_rate(flow));
  if (bare_syn(flow)) return "bare SYN packets without ACK at " + rate + " pkt/s, the signature of a SYN flood";
  if (flow.label == Label::Malicious) {
    return "sustained " + rate + " pkt/s of " + std::to_string(flow.bytes / std::max<std::uint64_t>(flow.packets, 1)) +
           "-byte packets from source port " + std::to_string(flow.src_port) + " toward the customer prefix";
  }
  return "irregular volume at " + rate + " pkt/s with no attack signature";
}

FewShotSet select_fewshots(const FlowDataset& dataset, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> malicious, benign;
  for (std::size_t i = 0; i < dataset.flows.size(); ++i) {
    if (dataset.flows[i].label == Label::Malicious) malicious.push_back(i);
    else if (dataset.flows[i].label == Label::Benign) benign.push_back(i);
  }
  const std::size_t want_mal = (k + 1) / 2, want_ben = k / 2;
  if (malicious.size() < want_mal || benign.size() < want_ben) {
    throw Error(Errc::InsufficientClassExamples, "need " + std::to_string(want_mal) + " malicious and " +
                                                     std::to_string(want_ben) + " benign flows, have " +
                                                     std::to_string(malicious.size()) + " and " +
                                                     std::to_string(benign.size()));
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(malicious));
  rng.shuffle(std::span<std::size_t>(benign));
  FewShotSet out;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = i % 2 == 0 ? malicious[i / 2] : benign[i / 2];
    const FlowRecord& f = dataset.flows[idx];
    out.push_back({idx, flow_to_text(f), f.label, fewshot_rationale(f)});
  }
  return out;
}

std::string render_fewshots(const FewShotSet& fewshots) {
  if (fewshots.empty()) return "(none)\n";
  std::string out;
  for (std::size_t i = 0; i < fewshots.size(); ++i) {
    const auto& e = fewshots[i];
    out += "Example " + std::to_string(i + 1) + ": " + e.flow_text + "\n";
    out += "Label: " + std::string(label_name(e.label)) + "\n";
    out += "Reason: " + e.rationale + "\n";
  }
  return out;
}

std::string render_queries(std::span<const FlowRecord> queries) {
  std::string out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out += "Query " + std::to_string(i + 1) + ": " + flow_to_text(queries[i]) + "\n";
  }
  return out;
}

std::string build_prompt(const PromptTemplate& tmpl, const FewShotSet& fewshots,
                         std::span<const FlowRecord> queries) {
  if (queries.empty()) throw Error(Errc::EmptyQuery, "prompt needs at least one query flow");
  check_prompt_layout(tmpl.layout);
  // Substitute in one left-to-right pass so placeholder-like text inside a
  // value is never expanded again.
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.layout.size()) {
    std::size_t next = std::string::npos;
    const char* which = nullptr;
    for (const char* p : kPlaceholders) {
      const auto at = tmpl.layout.find(p, pos);
      if (at < next) {
        next = at;
        which = p;
      }
    }
    if (which == nullptr) {
      out.append(tmpl.layout, pos, std::string::npos);
      break;
    }
    out.append(tmpl.layout, pos, next - pos);
    const std::string key = which;
    if (key == "{TASK}") out += tmpl.task_description;
    else if (key == "{FEWSHOTS}") out += render_fewshots(fewshots);
    else if (key == "{QUERIES}") out += render_queries(queries);
    else out += tmpl.output_statement;
    pos = next + key.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view decision_name(Decision d) {
  switch (d) {
    case Decision::Benign: return "Benign";
    case Decision::Malicious: return "Malicious";
    case Decision::Unparseable: return "Unparseable";
  }
  return "Unparseable";
}

LlmVerdict parse_verdict(const std::string& response) {
  LlmVerdict v;
  v.raw_response = response;
  const std::string low = lower(response);
  const auto b = low.find("benign");
  const auto m = low.find("malicious");
  if (b == std::string::npos && m == std::string::npos) return v;
  const bool is_benign = b < m;
  v.decision = is_benign ? Decision::Benign : Decision::Malicious;
  const std::size_t end = (is_benign ? b : m) + (is_benign ? 6 : 9);
  v.explanation = trim(response.substr(end));
  return v;
}

std::vector<LlmVerdict> parse_verdicts(const std::string& response, std::size_t query_count) {
  if (query_count == 1) return {parse_verdict(response)};
  std::vector<LlmVerdict> out(query_count);
  for (auto& v : out) v.raw_response = response;
  static const std::regex line_re(R"(^\s*(\d+)[.):]\s*(.*)$)");
  std::istringstream in(response);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    const std::size_t n = std::stoul(m[1].str());
    if (n == 0 || n > query_count || out[n - 1].decision != Decision::Unparseable) continue;
    LlmVerdict v = parse_verdict(m[2].str());
    v.raw_response = response;
    out[n - 1] = std::move(v);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string stub_classify(const std::string& prompt) {
  static const std::regex query_re(
      R"(^Query (\d+): \S+ flow \S+ -> \S+, (\d+) packets, (\d+) bytes, ([0-9.]+) s, ([0-9.]+) pkt/s(?:, flags=(\S+))?$)");
  std::istringstream in(prompt);
  std::string line, out;
  std::size_t answered = 0;
  while (std::getline(in, line)) {
    if (line.rfind("Query ", 0) != 0) continue;
    std::smatch m;
    if (!std::regex_match(line, m, query_re)) throw Error(Errc::MalformedPrompt, "unreadable query line: " + line);
    const std::uint64_t packets = std::stoull(m[2].str());
    const double rate = std::stod(m[5].str());
    const std::string flags = m[6].matched ? m[6].str() : "";
    std::string verdict;
    if (rate > kStubRateThreshold) {
      verdict = "Malicious - " + m[5].str() + " pkt/s exceeds " + format("%.0f", kStubRateThreshold) + " pkt/s";
    } else if (flags == "SYN" && packets > kStubSynPackets) {
      verdict = "Malicious - " + m[2].str() + " bare SYN packets look like a SYN flood";
    } else {
      verdict = "Benign - " + m[5].str() + " pkt/s" + (flags.empty() ? "" : " with flags " + flags) +
                " shows no attack signature";
    }
    out += m[1].str() + ". " + verdict + "\n";
    ++answered;
  }
  if (answered == 0) throw Error(Errc::MalformedPrompt, "prompt contains no query flow line");
  return out;
}

// ---------------------------------------------------------------------------

void LlmClientConfig::validate() const {
  if (!(timeout_seconds > 0.0)) throw Error(Errc::InvalidConfig, "timeout must be > 0");
  if (backoff_initial_seconds < 0.0) throw Error(Errc::InvalidConfig, "backoff must be >= 0");
  if (max_in_flight == 0) throw Error(Errc::InvalidConfig, "max_in_flight must be >= 1");
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    throw Error(Errc::InvalidConfig, "endpoint must start with http:// or https://");
  }
}

std::string chat_request_body(const LlmClientConfig& config, const std::string& prompt) {
  const nlohmann::json body = {{"model", config.model},
                               {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                               {"temperature", config.temperature}};
  return body.dump();
}

std::string chat_response_content(const std::string& body, int status) {
  const auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw HttpError(status, "response body is not JSON");
  try {
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw HttpError(status, "response lacks choices[0].message.content");
  }
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // prefix, no trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.base = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

void set_timeouts(httplib::Client& client, double seconds) {
  const auto whole = static_cast<time_t>(seconds);
  const auto micros = static_cast<time_t>(std::llround((seconds - static_cast<double>(whole)) * 1e6));
  client.set_connection_timeout(whole, micros);
  client.set_read_timeout(whole, micros);
  client.set_write_timeout(whole, micros);
}

}  // namespace

std::string classify_remote(const LlmClientConfig& config, const std::string& prompt) {
  config.validate();
  const Endpoint ep = split_endpoint(config.endpoint);
  httplib::Client client(ep.base);
  set_timeouts(client, config.timeout_seconds);
  httplib::Headers headers;
  if (const char* key = std::getenv(kApiKeyEnv); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = chat_request_body(config, prompt);
  const std::string path = ep.path + "/chat/completions";

  std::string last_failure;
  double backoff = config.backoff_initial_seconds;
  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body, "application/json");
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!res) {
      // httplib reports an expired read deadline as a plain read error; the
      // elapsed time tells it apart from a dropped connection.
      if (res.error() == httplib::Error::Read && elapsed >= 0.9 * config.timeout_seconds) {
        throw Error(Errc::Timeout, "no response within " + format("%.3f", config.timeout_seconds) + " s");
      }
      last_failure = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return chat_response_content(res->body, res->status);
    if (!retryable_status(res->status)) throw HttpError(res->status, res->body.substr(0, 200));
    last_failure = "HTTP " + std::to_string(res->status);
  }
  throw Error(Errc::RetriesExhausted,
              std::to_string(config.max_retries + 1) + " attempts failed, last: " + last_failure);
}

std::vector<RemoteOutcome> classify_remote_batch(const LlmClientConfig& config,
                                                 std::span<const std::string> prompts) {
  config.validate();
  std::vector<RemoteOutcome> out(prompts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++) {
      try {
        out[i].response = classify_remote(config, prompts[i]);
      } catch (const Error& e) {
        out[i].error = e.code();
        out[i].error_message = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(config.max_in_flight, prompts.size());
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace flowsentry
