#pragma once

// Chat-completion plumbing: a backend interface, an OpenAI-compatible HTTP
// backend, a scripted replay backend for tests, and the Gateway that adds
// retries, n-way fan-out and run-level token accounting on top of either.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "codecor/detail/text.hpp"
#include "codecor/errors.hpp"

namespace codecor {

inline constexpr const char* kApiKeyEnv = "CODECOR_API_KEY";

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int n = 1;
  int max_tokens = 1024;

  void validate() const {
    if (messages.empty()) throw PreconditionViolation("chat request has no messages");
    if (messages.front().role == Role::Assistant)
      throw PreconditionViolation("first chat message must be a system or user message");
    if (temperature < 0.0) throw PreconditionViolation("temperature must be >= 0");
    if (n < 1) throw PreconditionViolation("n must be >= 1");
    if (max_tokens < 1) throw PreconditionViolation("max_tokens must be >= 1");
  }

  /// All message contents joined by newlines; what transcript matchers see.
  std::string outgoing_text() const {
    std::string out;
    for (const auto& m : messages) {
      if (!out.empty()) out += '\n';
      out += m.content;
    }
    return out;
  }
};

struct ChatResponse {
  std::vector<std::string> completions;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t latency_ms = 0;
};

/// One wire round-trip. Implementations throw NetworkError for anything worth
/// retrying and the other GatewayError subclasses for everything else.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse send(const ChatRequest& req) = 0;
  /// Whether a single request may ask for n > 1 completions.
  virtual bool supports_n() const { return true; }
};

// --- scripted replay ---------------------------------------------------------

struct TranscriptEntry {
  std::string matcher;
  std::vector<std::string> completions;
};

struct ScriptedTranscript {
  std::vector<TranscriptEntry> entries;
};

/// Transcript files are JSON lines: {"match": "...", "completions": ["...", ...]}.
/// Blank lines and lines starting with '#' are ignored.
inline ScriptedTranscript parse_transcript(std::istream& in, const std::string& origin = "<transcript>") {
  ScriptedTranscript t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    try {
      auto j = nlohmann::json::parse(body);
      TranscriptEntry e;
      e.matcher = j.at("match").get<std::string>();
      e.completions = j.at("completions").get<std::vector<std::string>>();
      if (e.completions.empty()) throw ConfigError("entry has no completions");
      t.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const ConfigError& ex) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return t;
}

inline ScriptedTranscript load_transcript(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open transcript " + path);
  return parse_transcript(in, path);
}

inline std::int64_t count_words(std::string_view s) { return static_cast<std::int64_t>(detail::split_ws(s).size()); }

/// Replays canned completions strictly in transcript order. Each request must
/// contain the next entry's matcher; otherwise the run fails loudly.
class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(ScriptedTranscript transcript) : transcript_(std::move(transcript)) {}

  ChatResponse send(const ChatRequest& req) override {
    std::lock_guard lock(mu_);
    const std::string outgoing = req.outgoing_text();
    if (cursor_ >= transcript_.entries.size())
      throw TranscriptExhausted("transcript exhausted after " + std::to_string(cursor_) +
                                " entries; unmatched request begins: " + preview(outgoing));
    const auto& entry = transcript_.entries[cursor_];
    if (outgoing.find(entry.matcher) == std::string::npos)
      throw TranscriptExhausted("transcript entry " + std::to_string(cursor_) + " expects \"" + entry.matcher +
                                "\" but request begins: " + preview(outgoing));
    ++cursor_;
    ChatResponse r;
    r.completions = entry.completions;
    r.prompt_tokens = count_words(outgoing);
    for (const auto& c : r.completions) r.completion_tokens += count_words(c);
    return r;
  }

  std::size_t consumed() const {
    std::lock_guard lock(mu_);
    return cursor_;
  }
  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return transcript_.entries.size() - cursor_;
  }

 private:
  static std::string preview(const std::string& s) {
    std::string p = s.substr(0, 160);
    detail::replace_all(p, "\n", "\\n");
    return p;
  }

  mutable std::mutex mu_;
  ScriptedTranscript transcript_;
  std::size_t cursor_ = 0;
};

// --- OpenAI-compatible HTTP --------------------------------------------------

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::chrono::seconds timeout{120};
  bool supports_n = true;
};

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + cfg_.base_url);
    const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    origin_ = cfg_.base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (origin_.rfind("https://", 0) == 0) throw ConfigError("built without TLS support; cannot use " + origin_);
#endif
  }

  bool supports_n() const override { return cfg_.supports_n; }

  ChatResponse send(const ChatRequest& req) override {
    nlohmann::ordered_json body;
    body["model"] = req.model;
    body["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : req.messages) body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
    body["temperature"] = req.temperature;
    body["n"] = req.n;
    body["max_tokens"] = req.max_tokens;

    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout.count());
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers{{"Authorization", "Bearer " + cfg_.api_key}};

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();

    if (!res) throw NetworkError("transport error: " + httplib::to_string(res.error()));
    const int status = res->status;
    if (status == 401 || status == 403) throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(status) + ")");
    if (status == 429 || status >= 500) throw NetworkError("HTTP " + std::to_string(status));
    if (status < 200 || status >= 300)
      throw RequestRejected(status, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 300));

    ChatResponse out;
    out.latency_ms = latency;
    try {
      auto j = nlohmann::json::parse(res->body);
      for (const auto& choice : j.at("choices")) out.completions.push_back(choice.at("message").at("content").get<std::string>());
      if (j.contains("usage") && j["usage"].is_object()) {
        out.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
        out.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
      }
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedResponse(std::string("unparseable completion body: ") + ex.what());
    }
    if (out.completions.empty()) throw MalformedResponse("response has no choices");
    return out;
  }

 private:
  HttpBackendConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

/// Reads the credential from CODECOR_API_KEY; throws ConfigError when unset.
inline std::shared_ptr<HttpChatBackend> make_http_backend_from_env(HttpBackendConfig cfg) {
  const char* key = std::getenv(kApiKeyEnv);
  if (key == nullptr || *key == '\0') throw ConfigError(std::string(kApiKeyEnv) + " is not set");
  cfg.api_key = key;
  return std::make_shared<HttpChatBackend>(std::move(cfg));
}

// --- gateway -----------------------------------------------------------------

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

struct LedgerSnapshot {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t requests = 0;
  std::int64_t wall_ms = 0;

  bool operator==(const LedgerSnapshot&) const = default;
};

/// The single entry point for agent traffic. Safe for concurrent callers.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<ChatBackend> backend, RetryPolicy retry = {})
      : backend_(std::move(backend)), retry_(retry) {}

  ChatResponse complete(const ChatRequest& req) {
    req.validate();
    if (req.n == 1 || backend_->supports_n()) return send_with_retry(req);
    ChatRequest single = req;
    single.n = 1;
    ChatResponse merged;
    for (int i = 0; i < req.n; ++i) {
      auto part = send_with_retry(single);
      merged.prompt_tokens += part.prompt_tokens;
      merged.completion_tokens += part.completion_tokens;
      merged.latency_ms += part.latency_ms;
      for (auto& c : part.completions) merged.completions.push_back(std::move(c));
    }
    return merged;
  }

  LedgerSnapshot run_ledger() const {
    return {prompt_tokens_.load(), completion_tokens_.load(), requests_.load(), wall_ms_.load()};
  }

  ChatBackend& backend() noexcept { return *backend_; }

 private:
  ChatResponse send_with_retry(const ChatRequest& req) {
    auto backoff = retry_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      const auto started = std::chrono::steady_clock::now();
      try {
        auto res = backend_->send(req);
        const auto elapsed =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
        if (res.latency_ms == 0) res.latency_ms = elapsed;
        prompt_tokens_ += res.prompt_tokens;
        completion_tokens_ += res.completion_tokens;
        requests_ += 1;
        wall_ms_ += res.latency_ms;
        return res;
      } catch (const NetworkError& ex) {
        if (attempt >= retry_.max_retries)
          throw NetworkError(std::string(ex.what()) + " (after " + std::to_string(attempt + 1) + " attempts)");
      }
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(backoff.count()) * retry_.multiplier));
    }
  }

  std::shared_ptr<ChatBackend> backend_;
  RetryPolicy retry_;
  std::atomic<std::int64_t> prompt_tokens_{0};
  std::atomic<std::int64_t> completion_tokens_{0};
  std::atomic<std::int64_t> requests_{0};
  std::atomic<std::int64_t> wall_ms_{0};
};

}  // namespace codecor
