#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "prolix/bench.hpp"
#include "prolix/transfer.hpp"

namespace prolix {

namespace {

struct Gate {
  std::mutex mu;
  std::chrono::steady_clock::time_point last{};
  bool used = false;
};

Gate& endpoint_gate(const std::string& key) {
  static std::mutex registry_mu;
  static std::map<std::string, std::unique_ptr<Gate>> gates;
  std::lock_guard<std::mutex> lock(registry_mu);
  auto& slot = gates[key];
  if (!slot) slot = std::make_unique<Gate>();
  return *slot;
}

std::size_t word_count(const std::string& text) {
  std::istringstream in(text);
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

}  // namespace

ChatResult chat_complete(const EndpointSpec& endpoint, const std::vector<ChatMessage>& messages,
                         std::vector<std::string>* log) {
  std::string token;
  if (!endpoint.auth_env.empty()) {
    const char* value = std::getenv(endpoint.auth_env.c_str());
    if (value == nullptr || *value == '\0') {
      throw AuthFailureError("environment variable " + endpoint.auth_env + " is not set");
    }
    token = value;
  }

  nlohmann::json body;
  body["model"] = endpoint.model;
  body["messages"] = nlohmann::json::array();
  for (const auto& m : messages) {
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  }
  if (endpoint.temperature >= 0.0) body["temperature"] = endpoint.temperature;
  if (endpoint.top_p >= 0.0) body["top_p"] = endpoint.top_p;
  const std::string payload = body.dump();

  Gate& gate = endpoint_gate(endpoint.base_url + "|" + endpoint.name);
  std::lock_guard<std::mutex> serialize(gate.mu);
  if (endpoint.min_interval_s > 0.0 && gate.used) {
    auto ready = gate.last + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double>(endpoint.min_interval_s));
    std::this_thread::sleep_until(ready);
  }

  httplib::Client cli(endpoint.base_url);
  const auto sec = static_cast<time_t>(endpoint.timeout_s);
  const auto usec = static_cast<time_t>((endpoint.timeout_s - static_cast<double>(sec)) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  if (!token.empty()) cli.set_bearer_token_auth(token);

  if (log) {
    log->push_back("POST " + endpoint.base_url + "/v1/chat/completions model=" + endpoint.model +
                   " messages=" + std::to_string(messages.size()) +
                   " auth=" + (endpoint.auth_env.empty() ? "none" : "$" + endpoint.auth_env));
  }

  std::size_t attempts = 0;
  bool last_was_timeout = false;
  std::string last_failure = "no attempts made";
  for (std::size_t attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      double backoff = 0.25 * static_cast<double>(1u << (attempt - 1));
      if (backoff > 4.0) backoff = 4.0;
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    }
    attempts += 1;
    auto res = cli.Post("/v1/chat/completions", payload, "application/json");
    gate.last = std::chrono::steady_clock::now();
    gate.used = true;

    if (!res) {
      const auto err = res.error();
      last_was_timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                         err == httplib::Error::Write;
      last_failure = "transport failure: " + httplib::to_string(err);
      if (log) log->push_back("attempt " + std::to_string(attempts) + ": " + last_failure);
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw AuthFailureError("endpoint " + endpoint.name + " rejected credentials (HTTP " +
                             std::to_string(res->status) + ")");
    }
    if (res->status >= 500 || res->status == 429) {
      last_was_timeout = false;
      last_failure = "HTTP " + std::to_string(res->status);
      if (log) log->push_back("attempt " + std::to_string(attempts) + ": " + last_failure);
      continue;
    }
    if (res->status != 200) {
      throw TransportError("endpoint " + endpoint.name + " returned HTTP " +
                               std::to_string(res->status),
                           static_cast<int>(attempts));
    }

    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw MalformedResponseError("endpoint " + endpoint.name + " returned unparseable JSON");
    }
    if (!parsed.contains("choices") || !parsed["choices"].is_array() || parsed["choices"].empty() ||
        !parsed["choices"][0].contains("message") ||
        !parsed["choices"][0]["message"].contains("content")) {
      throw MalformedResponseError("endpoint " + endpoint.name +
                                   " response lacks choices[0].message.content");
    }

    ChatResult out;
    out.text = parsed["choices"][0]["message"]["content"].get<std::string>();
    out.attempts = attempts;
    if (parsed.contains("usage") && parsed["usage"].is_object()) {
      const auto& usage = parsed["usage"];
      if (usage.contains("prompt_tokens") && usage["prompt_tokens"].is_number()) {
        out.usage.prompt_tokens = usage["prompt_tokens"].get<long>();
      }
      if (usage.contains("completion_tokens") && usage["completion_tokens"].is_number()) {
        out.usage.completion_tokens = usage["completion_tokens"].get<long>();
      }
      if (usage.contains("completion_tokens_details") &&
          usage["completion_tokens_details"].is_object() &&
          usage["completion_tokens_details"].contains("reasoning_tokens") &&
          usage["completion_tokens_details"]["reasoning_tokens"].is_number()) {
        out.usage.reasoning_tokens =
            usage["completion_tokens_details"]["reasoning_tokens"].get<long>();
      } else if (usage.contains("reasoning_tokens") && usage["reasoning_tokens"].is_number()) {
        out.usage.reasoning_tokens = usage["reasoning_tokens"].get<long>();
      }
    }
    if (log) {
      log->push_back("attempt " + std::to_string(attempts) + ": HTTP 200 usage=" +
                     std::to_string(out.usage.prompt_tokens) + "/" +
                     std::to_string(out.usage.completion_tokens));
    }
    return out;
  }

  if (last_was_timeout) {
    throw TimeoutError("endpoint " + endpoint.name + " timed out after " +
                       std::to_string(attempts) + " attempts");
  }
  throw TransportError("endpoint " + endpoint.name + " unreachable; last failure: " + last_failure,
                       static_cast<int>(attempts));
}

namespace {

struct CellAccumulator {
  double rea = 0.0, ans = 0.0, full = 0.0;
  std::size_t correct = 0, count = 0;
  bool rea_available = true;
  bool usage_derived = false;

  void add(const EndpointSpec& endpoint, const ChatResult& r, const std::string& gold) {
    double q_full;
    if (r.usage.completion_tokens >= 0) {
      q_full = static_cast<double>(r.usage.completion_tokens);
      usage_derived = true;
    } else {
      q_full = static_cast<double>(word_count(r.text));
    }
    std::string answer_text = r.text;
    if (r.usage.reasoning_tokens >= 0) {
      rea += static_cast<double>(r.usage.reasoning_tokens);
      ans += q_full - static_cast<double>(r.usage.reasoning_tokens);
      usage_derived = true;
    } else if (!endpoint.eot_marker.empty() &&
               r.text.find(endpoint.eot_marker) != std::string::npos) {
      const std::size_t pos = r.text.find(endpoint.eot_marker);
      const std::string before = r.text.substr(0, pos);
      answer_text = r.text.substr(pos + endpoint.eot_marker.size());
      rea += static_cast<double>(word_count(before));
      ans += static_cast<double>(word_count(answer_text));
    } else {
      rea_available = false;
    }
    full += q_full;
    correct += score_accuracy(answer_text, gold).correct ? 1 : 0;
    count += 1;
  }

  TransferCell cell() const {
    TransferCell c;
    const double n = count > 0 ? static_cast<double>(count) : 1.0;
    c.rea = rea / n;
    c.ans = ans / n;
    c.full = full / n;
    c.acc = 100.0 * static_cast<double>(correct) / n;
    c.rea_available = rea_available && count > 0;
    c.usage_derived = usage_derived;
    return c;
  }
};

}  // namespace

std::vector<TransferRow> run_transfer_eval(const std::vector<EndpointSpec>& endpoints,
                                           const std::vector<TransferQuestion>& questions,
                                           const std::string& suffix,
                                           const std::string& source_model,
                                           std::vector<std::string>* log) {
  if (suffix.empty()) throw EmptyInputError("transfer suffix is empty");
  if (questions.empty()) throw EmptyInputError("transfer question set is empty");

  std::vector<TransferRow> rows;
  for (const auto& endpoint : endpoints) {
    TransferRow row;
    row.endpoint = endpoint.name;
    row.source_model = source_model;
    try {
      CellAccumulator base, attacked;
      for (const auto& q : questions) {
        ChatResult b = chat_complete(endpoint, {{"user", q.question}}, log);
        base.add(endpoint, b, q.gold);
        ChatResult a = chat_complete(endpoint, {{"user", q.question + " " + suffix}}, log);
        attacked.add(endpoint, a, q.gold);
      }
      row.baseline = base.cell();
      row.attacked = attacked.cell();
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_with_delta(double attacked, double baseline) {
  char buf[64];
  const long long a = std::llround(attacked);
  const long long d = std::llround(attacked - baseline);
  std::snprintf(buf, sizeof(buf), "%lld (%+lld)", a, d);
  return buf;
}

}  // namespace prolix
