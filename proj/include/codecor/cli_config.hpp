#pragma once

// Merged command-line configuration. Precedence: flag > config file >
// built-in default. Everything is validated before any backend is built.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "codecor/agents.hpp"
#include "codecor/errors.hpp"
#include "codecor/eval_harness.hpp"
#include "codecor/llm_gateway.hpp"
#include "codecor/orchestrator.hpp"
#include "codecor/sandbox.hpp"

namespace codecor {

enum class BackendKind { OpenAICompat, Transcript };

inline std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  if (s == "openai-compat") return BackendKind::OpenAICompat;
  if (s == "transcript") return BackendKind::Transcript;
  return std::nullopt;
}

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitGateway = 3,
  kExitStarved = 4,
  kExitSandboxUnavailable = 5,
};

struct CliConfig {
  RunConfig run;
  LlmSettings llm;
  SandboxConfig sandbox;

  BackendKind backend = BackendKind::OpenAICompat;
  std::string transcript;
  std::string base_url = "https://api.openai.com/v1";
  bool supports_n = true;
  int request_timeout_s = 120;
  int max_retries = 3;

  std::string dataset;
  std::string kind = "humaneval";
  std::optional<std::int64_t> limit;
  int jobs = 1;
  std::string report;
  std::string finals_dir;

  /// Checks that do not depend on the subcommand.
  void validate() const {
    run.validate();
    sandbox.validate();
    if (limit && *limit <= 0) throw ConfigError("--limit must be >= 1");
    if (jobs < 1) throw ConfigError("--jobs must be >= 1");
    if (backend == BackendKind::Transcript && jobs != 1)
      throw ConfigError("the transcript backend replays in order and needs --jobs 1");
    if (backend == BackendKind::Transcript && transcript.empty()) throw ConfigError("--backend transcript needs --transcript");
    if (request_timeout_s <= 0) throw ConfigError("request_timeout_s must be > 0");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (llm.model.empty()) throw ConfigError("model is empty");
    if (!parse_dataset_kind(kind)) throw ConfigError("unknown dataset kind: " + kind);
  }
};

namespace detail {

template <typename T>
std::function<void(CliConfig&, const nlohmann::json&)> setter(T CliConfig::*outer) {
  return [outer](CliConfig& c, const nlohmann::json& v) { c.*outer = v.get<T>(); };
}

inline const std::map<std::string, std::function<void(CliConfig&, const nlohmann::json&)>>& config_keys() {
  using J = nlohmann::json;
  static const std::map<std::string, std::function<void(CliConfig&, const J&)>> keys = {
      {"backend",
       [](CliConfig& c, const J& v) {
         auto k = parse_backend_kind(v.get<std::string>());
         if (!k) throw ConfigError("unknown backend: " + v.get<std::string>());
         c.backend = *k;
       }},
      {"transcript", setter(&CliConfig::transcript)},
      {"base_url", setter(&CliConfig::base_url)},
      {"supports_n", setter(&CliConfig::supports_n)},
      {"request_timeout_s", setter(&CliConfig::request_timeout_s)},
      {"max_retries", setter(&CliConfig::max_retries)},
      {"dataset", setter(&CliConfig::dataset)},
      {"kind", setter(&CliConfig::kind)},
      {"limit", [](CliConfig& c, const J& v) { c.limit = v.get<std::int64_t>(); }},
      {"jobs", setter(&CliConfig::jobs)},
      {"report", setter(&CliConfig::report)},
      {"finals_dir", setter(&CliConfig::finals_dir)},
      {"model", [](CliConfig& c, const J& v) { c.llm.model = v.get<std::string>(); }},
      {"generation_temperature", [](CliConfig& c, const J& v) { c.llm.generation_temperature = v.get<double>(); }},
      {"scoring_temperature", [](CliConfig& c, const J& v) { c.llm.scoring_temperature = v.get<double>(); }},
      {"max_tokens", [](CliConfig& c, const J& v) { c.llm.max_tokens = v.get<int>(); }},
      {"n_prompts", [](CliConfig& c, const J& v) { c.run.agent_cfg.n_prompts = v.get<int>(); }},
      {"n_tests", [](CliConfig& c, const J& v) { c.run.agent_cfg.n_tests = v.get<int>(); }},
      {"n_snippets", [](CliConfig& c, const J& v) { c.run.agent_cfg.n_snippets = v.get<int>(); }},
      {"parse_retry", [](CliConfig& c, const J& v) { c.run.agent_cfg.parse_retry = v.get<int>(); }},
      {"max_repair_rounds", [](CliConfig& c, const J& v) { c.run.max_repair_rounds = v.get<std::size_t>(); }},
      {"fallback_regen_attempts", [](CliConfig& c, const J& v) { c.run.fallback_regen_attempts = v.get<int>(); }},
      {"stop_similarity", [](CliConfig& c, const J& v) { c.run.stop_similarity = v.get<double>(); }},
      {"parallelism", [](CliConfig& c, const J& v) { c.run.parallelism = v.get<int>(); }},
      {"score_parse_retry", [](CliConfig& c, const J& v) { c.run.score_parse_retry = v.get<int>(); }},
      {"interpreter", [](CliConfig& c, const J& v) { c.sandbox.interpreter_path = v.get<std::string>(); }},
      {"runner_script", [](CliConfig& c, const J& v) { c.sandbox.runner_script = v.get<std::string>(); }},
      {"per_case_timeout_ms", [](CliConfig& c, const J& v) { c.sandbox.per_case_timeout_ms = v.get<std::int64_t>(); }},
      {"total_timeout_ms", [](CliConfig& c, const J& v) { c.sandbox.total_timeout_ms = v.get<std::int64_t>(); }},
      {"workdir", [](CliConfig& c, const J& v) { c.sandbox.workdir = v.get<std::string>(); }},
      {"env_allowlist", [](CliConfig& c, const J& v) { c.sandbox.env_allowlist = v.get<std::vector<std::string>>(); }},
  };
  return keys;
}

}  // namespace detail

/// Applies a config document on top of `cfg`. Unknown keys and ill-typed
/// values are ConfigError.
inline void apply_config_json(CliConfig& cfg, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  const auto& keys = detail::config_keys();
  for (const auto& [key, value] : doc.items()) {
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown config key: " + key);
    if (key == "limit" && value.is_number_integer() && value.get<std::int64_t>() <= 0)
      throw ConfigError("limit must be >= 1");
    try {
      it->second(cfg, value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key " + key + " has the wrong type");
    }
  }
}

inline void apply_config_file(CliConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + ex.what());
  }
  apply_config_json(cfg, doc);
}

/// Builds the chat backend. The network backend requires CODECOR_API_KEY;
/// its absence is a ConfigError raised before any request.
inline std::shared_ptr<ChatBackend> make_backend(const CliConfig& cfg) {
  if (cfg.backend == BackendKind::Transcript) return std::make_shared<ScriptedBackend>(load_transcript(cfg.transcript));
  HttpBackendConfig http;
  http.base_url = cfg.base_url;
  http.timeout = std::chrono::seconds(cfg.request_timeout_s);
  http.supports_n = cfg.supports_n;
  return make_http_backend_from_env(std::move(http));
}

inline RetryPolicy retry_policy(const CliConfig& cfg) {
  RetryPolicy p;
  p.max_retries = cfg.max_retries;
  return p;
}

/// Exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& ex) {
  if (dynamic_cast<const ConfigError*>(&ex)) return kExitConfig;
  if (dynamic_cast<const SandboxUnavailable*>(&ex)) return kExitSandboxUnavailable;
  if (dynamic_cast<const GatewayError*>(&ex)) return kExitGateway;
  if (dynamic_cast<const PipelineStarved*>(&ex)) return kExitStarved;
  return kExitFailure;
}

}  // namespace codecor
