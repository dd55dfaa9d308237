#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "prolix/errors.hpp"
#include "prolix/transfer.hpp"

using namespace prolix;

namespace {

// Local chat-completions stub. Each test installs its own handler; the
// fixture owns the listener thread and port.
class StubServer {
public:
  StubServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  void handle(httplib::Server::Handler h) { server_.Post("/v1/chat/completions", std::move(h)); }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int port() const { return port_; }

private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string chat_body(const std::string& content, long prompt = -1, long completion = -1,
                      long reasoning = -1) {
  nlohmann::json doc;
  doc["choices"] = nlohmann::json::array();
  doc["choices"].push_back({{"message", {{"role", "assistant"}, {"content", content}}}});
  if (prompt >= 0 || completion >= 0 || reasoning >= 0) {
    nlohmann::json usage;
    if (prompt >= 0) usage["prompt_tokens"] = prompt;
    if (completion >= 0) usage["completion_tokens"] = completion;
    if (reasoning >= 0) usage["completion_tokens_details"] = {{"reasoning_tokens", reasoning}};
    doc["usage"] = usage;
  }
  return doc.dump();
}

EndpointSpec endpoint_for(const StubServer& server, const std::string& name) {
  EndpointSpec e;
  e.name = name;
  e.base_url = server.base_url();
  e.model = "stub-model";
  e.auth_env = "";  // most tests run without auth
  e.timeout_s = 5.0;
  e.max_retries = 3;
  return e;
}

}  // namespace

TEST_CASE("a clean response parses text, usage, and attempt count") {
  StubServer server;
  std::atomic<int> hits{0};
  std::mutex mu;
  std::string seen_body;
  server.handle([&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    {
      std::lock_guard<std::mutex> lock(mu);
      seen_body = req.body;
    }
    res.set_content(chat_body("the answer is 12", 9, 42, 30), "application/json");
  });

  auto e = endpoint_for(server, "clean");
  const auto result = chat_complete(e, {{"user", "add 5 7 ?"}});
  CHECK(result.text == "the answer is 12");
  CHECK(result.usage.prompt_tokens == 9);
  CHECK(result.usage.completion_tokens == 42);
  CHECK(result.usage.reasoning_tokens == 30);
  CHECK(result.attempts == 1);
  CHECK(hits == 1);

  std::lock_guard<std::mutex> lock(mu);
  const auto body = nlohmann::json::parse(seen_body);
  CHECK(body["model"] == "stub-model");
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "add 5 7 ?");
}

TEST_CASE("sampling knobs are forwarded only when set") {
  StubServer server;
  std::mutex mu;
  std::string seen_body;
  server.handle([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      seen_body = req.body;
    }
    res.set_content(chat_body("ok"), "application/json");
  });
  auto snapshot = [&] {
    std::lock_guard<std::mutex> lock(mu);
    return nlohmann::json::parse(seen_body);
  };

  auto e = endpoint_for(server, "knobs-default");
  chat_complete(e, {{"user", "q"}});
  auto seen = snapshot();
  CHECK_FALSE(seen.contains("temperature"));
  CHECK_FALSE(seen.contains("top_p"));

  e.name = "knobs-set";
  e.temperature = 0.0;
  e.top_p = 0.9;
  chat_complete(e, {{"user", "q"}});
  seen = snapshot();
  CHECK(seen["temperature"] == 0.0);
  CHECK(seen["top_p"] == 0.9);
}

TEST_CASE("transient server errors are retried with eventual success") {
  StubServer server;
  std::atomic<int> hits{0};
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    const int n = ++hits;
    if (n <= 2) {
      res.status = 500;
      return;
    }
    res.set_content(chat_body("recovered"), "application/json");
  });

  const auto e = endpoint_for(server, "flaky");
  const auto result = chat_complete(e, {{"user", "q"}});
  CHECK(result.text == "recovered");
  CHECK(result.attempts == 3);
  CHECK(hits == 3);
}

TEST_CASE("persistent failures exhaust the retry budget") {
  StubServer server;
  std::atomic<int> hits{0};
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });

  auto e = endpoint_for(server, "down");
  e.max_retries = 2;
  try {
    chat_complete(e, {{"user", "q"}});
    FAIL("expected TransportError");
  } catch (const TransportError& err) {
    CHECK(err.attempts() == 3);  // initial try plus two retries
    CHECK(std::string(err.what()).find("(attempts: 3)") != std::string::npos);
  }
  CHECK(hits == 3);
}

TEST_CASE("a stalled endpoint raises a timeout after exhausting retries") {
  StubServer server;
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(chat_body("too late"), "application/json");
  });

  auto e = endpoint_for(server, "stalled");
  e.timeout_s = 0.2;
  e.max_retries = 0;
  CHECK_THROWS_AS(chat_complete(e, {{"user", "q"}}), TimeoutError);
}

TEST_CASE("credential rejection aborts immediately") {
  StubServer server;
  std::atomic<int> hits{0};
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 401;
  });

  const auto e = endpoint_for(server, "locked");
  CHECK_THROWS_AS(chat_complete(e, {{"user", "q"}}), AuthFailureError);
  CHECK(hits == 1);  // no retries on auth failures
}

TEST_CASE("unusable payloads abort immediately") {
  StubServer server;
  std::atomic<int> hits{0};

  SUBCASE("unparseable body") {
    server.handle([&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.set_content("{not json", "application/json");
    });
    CHECK_THROWS_AS(chat_complete(endpoint_for(server, "garbled"), {{"user", "q"}}),
                    MalformedResponseError);
    CHECK(hits == 1);
  }

  SUBCASE("missing message content") {
    server.handle([&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.set_content(R"({"choices":[{"message":{"role":"assistant"}}]})", "application/json");
    });
    CHECK_THROWS_AS(chat_complete(endpoint_for(server, "hollow"), {{"user", "q"}}),
                    MalformedResponseError);
    CHECK(hits == 1);
  }
}

TEST_CASE("a missing credential variable fails before any request is sent") {
  StubServer server;
  std::atomic<int> hits{0};
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.set_content(chat_body("ok"), "application/json");
  });

  auto e = endpoint_for(server, "no-env");
  e.auth_env = "PROLIX_TEST_UNSET_VARIABLE";
  unsetenv("PROLIX_TEST_UNSET_VARIABLE");
  CHECK_THROWS_AS(chat_complete(e, {{"user", "q"}}), AuthFailureError);
  CHECK(hits == 0);
}

TEST_CASE("the bearer token is sent but never logged") {
  StubServer server;
  std::mutex mu;
  std::string seen_auth;
  server.handle([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      seen_auth = req.get_header_value("Authorization");
    }
    res.set_content(chat_body("ok", 1, 2), "application/json");
  });

  setenv("PROLIX_TEST_KEY", "hunter2-super-secret", 1);
  auto e = endpoint_for(server, "authed");
  e.auth_env = "PROLIX_TEST_KEY";

  std::vector<std::string> log;
  const auto result = chat_complete(e, {{"user", "q"}}, &log);
  CHECK(result.text == "ok");
  {
    std::lock_guard<std::mutex> lock(mu);
    CHECK(seen_auth == "Bearer hunter2-super-secret");
  }

  REQUIRE_FALSE(log.empty());
  bool named = false;
  for (const auto& line : log) {
    CHECK(line.find("hunter2-super-secret") == std::string::npos);
    if (line.find("$PROLIX_TEST_KEY") != std::string::npos) named = true;
  }
  CHECK(named);  // the variable name is loggable, the value is not
  unsetenv("PROLIX_TEST_KEY");
}

TEST_CASE("rate limiting spaces consecutive requests") {
  StubServer server;
  std::vector<std::chrono::steady_clock::time_point> arrivals;
  std::mutex mu;
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      arrivals.push_back(std::chrono::steady_clock::now());
    }
    res.set_content(chat_body("ok"), "application/json");
  });

  auto e = endpoint_for(server, "throttled");
  e.min_interval_s = 0.15;
  for (int i = 0; i < 3; ++i) chat_complete(e, {{"user", "q"}});

  REQUIRE(arrivals.size() == 3);
  for (std::size_t i = 1; i < arrivals.size(); ++i) {
    const double gap = std::chrono::duration<double>(arrivals[i] - arrivals[i - 1]).count();
    CHECK(gap >= 0.12);  // the configured floor minus scheduling slack
  }
}

TEST_CASE("transfer rows aggregate usage-derived counts per endpoint") {
  StubServer server;
  const std::string suffix = "wait hmm wait hmm";
  server.handle([&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const std::string content = body["messages"][0]["content"].get<std::string>();
    const bool attacked = content.find(suffix) != std::string::npos;
    if (attacked) {
      res.set_content(chat_body("long winding thoughts... the answer is 5", 10, 200, 150),
                      "application/json");
    } else {
      res.set_content(chat_body("the answer is 5", 10, 100, 60), "application/json");
    }
  });

  const std::vector<TransferQuestion> questions = {{"add 2 3 ?", "5"}, {"add 1 4 ?", "5"}};
  const auto rows =
      run_transfer_eval({endpoint_for(server, "usage-endpoint")}, questions, suffix, "tiny-lm");
  REQUIRE(rows.size() == 1);
  const auto& row = rows[0];
  CHECK_FALSE(row.failed);
  CHECK(row.endpoint == "usage-endpoint");
  CHECK(row.source_model == "tiny-lm");

  CHECK(row.baseline.full == 100.0);
  CHECK(row.baseline.rea == 60.0);
  CHECK(row.baseline.ans == 40.0);
  CHECK(row.baseline.acc == 100.0);
  CHECK(row.baseline.usage_derived);
  CHECK(row.baseline.rea_available);

  CHECK(row.attacked.full == 200.0);
  CHECK(row.attacked.rea == 150.0);
  CHECK(row.attacked.ans == 50.0);
  CHECK(row.full_delta() == 100.0);
}

TEST_CASE("without usage the visible text and its reasoning marker are counted") {
  StubServer server;
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_body("let me think deeply </think> answer is 7"), "application/json");
  });

  auto e = endpoint_for(server, "text-endpoint");
  e.eot_marker = "</think>";
  const auto rows = run_transfer_eval({e}, {{"q ?", "7"}}, "x y", "tiny-lm");
  REQUIRE(rows.size() == 1);
  const auto& cell = rows[0].baseline;
  CHECK_FALSE(cell.usage_derived);
  CHECK(cell.rea_available);
  CHECK(cell.rea == 4.0);   // words before the marker
  CHECK(cell.ans == 3.0);   // words after it
  CHECK(cell.full == 8.0);  // whole visible text, marker included
  CHECK(cell.acc == 100.0);
}

TEST_CASE("endpoint failures stay on their own row") {
  StubServer server;
  server.handle([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_body("fine", 5, 50, 20), "application/json");
  });

  EndpointSpec dead;
  dead.name = "unreachable";
  dead.base_url = "http://127.0.0.1:9";  // discard port; nothing listens
  dead.model = "m";
  dead.timeout_s = 0.3;
  dead.max_retries = 0;

  const auto rows = run_transfer_eval({dead, endpoint_for(server, "alive")},
                                      {{"q ?", "5"}}, "sfx", "tiny-lm");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].failed);
  CHECK_FALSE(rows[0].error.empty());
  CHECK_FALSE(rows[1].failed);
  CHECK(rows[1].baseline.full == 50.0);
}

TEST_CASE("transfer input validation") {
  CHECK_THROWS_AS(run_transfer_eval({}, {{"q", "1"}}, "", "m"), EmptyInputError);
  CHECK_THROWS_AS(run_transfer_eval({}, {}, "sfx", "m"), EmptyInputError);
}

TEST_CASE("report cells render the attacked count with a signed delta") {
  CHECK(format_with_delta(982.0, 386.0) == "982 (+596)");
  CHECK(format_with_delta(380.0, 386.0) == "380 (-6)");
  CHECK(format_with_delta(386.4, 386.0) == "386 (+0)");
}
