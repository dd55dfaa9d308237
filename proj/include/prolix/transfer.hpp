#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prolix/errors.hpp"

namespace prolix {

struct EndpointSpec {
  std::string name;      // report row label
  std::string base_url;  // scheme://host[:port]
  std::string model;
  std::string auth_env;  // environment variable NAME holding the token; never the secret
  double timeout_s = 30.0;
  std::size_t max_retries = 3;
  double min_interval_s = 0.0;  // per-endpoint rate limit
  double temperature = -1.0;    // negative = leave the endpoint's default
  double top_p = -1.0;
  std::string eot_marker;  // e.g. "</think>" when chains appear in the text
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatUsage {
  long prompt_tokens = -1;
  long completion_tokens = -1;
  long reasoning_tokens = -1;  // -1 when the server does not report it
};

struct ChatResult {
  std::string text;
  ChatUsage usage;
  std::size_t attempts = 1;
};

/// One chat-completion call with exponential backoff on transient failures
/// (5xx, timeouts, connection drops). Auth and malformed-response failures
/// abort immediately. `log` (optional) collects request/response lines with
/// secrets redacted.
ChatResult chat_complete(const EndpointSpec& endpoint, const std::vector<ChatMessage>& messages,
                         std::vector<std::string>* log = nullptr);

struct TransferCell {
  double rea = 0.0;
  double ans = 0.0;
  double full = 0.0;
  double acc = 0.0;         // percent over the question set
  bool rea_available = false;
  bool usage_derived = false;  // counts came from usage fields, not visible text
};

struct TransferRow {
  std::string endpoint;
  std::string source_model;  // model the suffix was optimized on
  TransferCell baseline;
  TransferCell attacked;
  bool failed = false;
  std::string error;

  double full_delta() const { return attacked.full - baseline.full; }
};

struct TransferQuestion {
  std::string question;
  std::string gold;
};

/// Queries every endpoint with and without the suffix and aggregates means
/// over the question set. Endpoint failures are isolated per row.
std::vector<TransferRow> run_transfer_eval(const std::vector<EndpointSpec>& endpoints,
                                           const std::vector<TransferQuestion>& questions,
                                           const std::string& suffix,
                                           const std::string& source_model,
                                           std::vector<std::string>* log = nullptr);

/// Report cell format: attacked 982 over baseline 386 renders "982 (+596)".
std::string format_with_delta(double attacked, double baseline);

}  // namespace prolix
