#pragma once

// Runs candidate programs in a child interpreter process. The child gets a
// fresh temporary working directory, a filtered environment (never the API
// key) and hard timeouts. Test execution speaks the runner line protocol:
//
//   stdin  <- {"source": ..., "entry_point": ..., "cases": [{"id", "assertion_text"}],
//              "per_case_timeout_ms": N}
//   stdout -> {"id": ..., "verdict": "pass|fail|error|timeout", "message": ..., "duration_ms": N}
//             ... one line per case ...
//             {"done": true}

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "codecor/core_model.hpp"
#include "codecor/detail/subprocess.hpp"
#include "codecor/errors.hpp"
#include "codecor/llm_gateway.hpp"

namespace codecor {

struct SandboxConfig {
  std::string interpreter_path = "python3";
  /// Runner script copied into each work directory. Supplied by the runner
  /// component; run_tests is unavailable without it.
  std::string runner_script;
  std::int64_t per_case_timeout_ms = 5000;
  std::int64_t total_timeout_ms = 60000;
  /// Parent directory for the per-execution temp directories.
  std::filesystem::path workdir = std::filesystem::temp_directory_path();
  std::vector<std::string> env_allowlist = {"PATH", "LANG", "LC_ALL", "LC_CTYPE"};
  /// Extra wall time the controller grants past per_case_timeout_ms before it
  /// kills a runner that stopped reporting.
  std::int64_t kill_grace_ms = 300;

  void validate() const {
    if (per_case_timeout_ms <= 0 || total_timeout_ms <= 0) throw ConfigError("sandbox timeouts must be > 0");
    if (interpreter_path.empty()) throw ConfigError("sandbox interpreter_path is empty");
  }
};

/// Syntax checking and test execution, as seen by pruning and orchestration.
class CodeExecutor {
 public:
  virtual ~CodeExecutor() = default;
  virtual SyntaxCheckResult syntax_check(const std::string& source) = 0;
  virtual ExecutionReport run_tests(const CodeSnippet& snippet, const std::vector<GeneratedTestCase>& tests,
                                    const std::string& entry_point) = 0;
};

namespace detail {

inline constexpr const char* kSyntaxCheckProgram =
    "import sys, json\n"
    "src = sys.stdin.buffer.read().decode('utf-8', 'replace')\n"
    "try:\n"
    "    compile(src, '<snippet>', 'exec', dont_inherit=True)\n"
    "    r = {'ok': True}\n"
    "except SyntaxError as e:\n"
    "    r = {'ok': False, 'message': type(e).__name__ + ': ' + str(e.msg), 'line': e.lineno or 0}\n"
    "except (ValueError, TypeError) as e:\n"
    "    r = {'ok': False, 'message': type(e).__name__ + ': ' + str(e), 'line': 0}\n"
    "sys.stdout.write(json.dumps(r) + '\\n')\n";

inline std::int64_t ms_since(Clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t).count();
}

}  // namespace detail

class ProcessSandbox final : public CodeExecutor {
 public:
  explicit ProcessSandbox(SandboxConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const SandboxConfig& config() const noexcept { return cfg_; }

  /// Environment handed to every child: allowlisted variables only, and
  /// never the API key even when allowlisted.
  std::vector<std::string> child_environment(const std::filesystem::path& workdir) const {
    std::vector<std::string> env;
    for (const auto& name : cfg_.env_allowlist) {
      if (name == kApiKeyEnv) continue;
      if (const char* v = std::getenv(name.c_str())) env.push_back(name + "=" + v);
    }
    env.push_back("HOME=" + workdir.string());
    env.push_back("TMPDIR=" + workdir.string());
    env.push_back("PYTHONDONTWRITEBYTECODE=1");
    env.push_back("PYTHONIOENCODING=utf-8");
    return env;
  }

  SyntaxCheckResult syntax_check(const std::string& source) override {
    const auto exe = interpreter();
    detail::TempDir dir(cfg_.workdir);
    detail::Subprocess child(exe, {"-I", "-c", detail::kSyntaxCheckProgram}, child_environment(dir.path()), dir.path());
    child.write_and_close_stdin(source);
    std::string line;
    const auto deadline = detail::Clock::now() + std::chrono::milliseconds(cfg_.per_case_timeout_ms + cfg_.kill_grace_ms);
    const auto status = child.read_line(line, deadline);
    if (status != detail::ReadStatus::Line) {
      child.kill();
      const auto info = child.wait();
      throw SandboxError("syntax check produced no result (" + info.describe() + "): " + child.diagnostics());
    }
    child.wait();
    try {
      const auto j = nlohmann::json::parse(line);
      SyntaxCheckResult r;
      r.ok = j.at("ok").get<bool>();
      r.message = j.value("message", std::string());
      r.line = j.value("line", 0);
      return r;
    } catch (const nlohmann::json::exception& ex) {
      throw ProtocolError(std::string("syntax check output unparseable: ") + ex.what());
    }
  }

  ExecutionReport run_tests(const CodeSnippet& snippet, const std::vector<GeneratedTestCase>& tests,
                            const std::string& entry_point) override {
    if (snippet.syntax_ok != SyntaxState::Ok) throw PreconditionViolation("run_tests needs a syntax-checked snippet");
    std::set<std::string> ids;
    for (const auto& t : tests) {
      if (t.classification != TestClassification::Valid) throw PreconditionViolation("run_tests needs Valid test cases");
      if (!ids.insert(t.id).second) throw PreconditionViolation("duplicate test id " + t.id);
    }
    ExecutionReport report;
    if (tests.empty()) return report;

    const auto exe = interpreter();
    if (cfg_.runner_script.empty() || !std::filesystem::is_regular_file(cfg_.runner_script))
      throw SandboxUnavailable("runner script not found: " + (cfg_.runner_script.empty() ? "<unset>" : cfg_.runner_script));

    const auto started = detail::Clock::now();
    const auto total_deadline = started + std::chrono::milliseconds(cfg_.total_timeout_ms);
    std::map<std::string, CaseResult> results;

    std::vector<const GeneratedTestCase*> pending;
    for (const auto& t : tests) pending.push_back(&t);

    // One child for everything; after a mid-run death, one child per case.
    if (run_batch(exe, snippet, pending, entry_point, total_deadline, results)) {
      for (const auto* t : pending) {
        if (results.count(t->id)) continue;
        if (detail::Clock::now() >= total_deadline) break;
        run_batch(exe, snippet, {t}, entry_point, total_deadline, results);
      }
    }

    for (const auto& t : tests) {
      auto it = results.find(t.id);
      if (it != results.end()) {
        report.per_case.push_back(std::move(it->second));
      } else {
        report.per_case.push_back({t.id, Verdict::Timeout, "total time budget exhausted", 0});
      }
    }
    return report;
  }

 private:
  std::string interpreter() const {
    auto exe = detail::resolve_executable(cfg_.interpreter_path);
    if (!exe) throw SandboxUnavailable("interpreter not found: " + cfg_.interpreter_path);
    return *exe;
  }

  /// Runs `cases` in one child. Returns true when the child died (or had to
  /// be killed) before reporting every case, so the caller can fall back.
  bool run_batch(const std::string& exe, const CodeSnippet& snippet, const std::vector<const GeneratedTestCase*>& cases,
                 const std::string& entry_point, detail::Clock::time_point total_deadline,
                 std::map<std::string, CaseResult>& results) {
    detail::TempDir dir(cfg_.workdir);
    const auto runner = dir.path() / "codecor_runner.py";
    std::filesystem::copy_file(cfg_.runner_script, runner);

    nlohmann::ordered_json req;
    req["source"] = snippet.source;
    req["entry_point"] = entry_point;
    req["cases"] = nlohmann::ordered_json::array();
    for (const auto* c : cases) req["cases"].push_back({{"id", c->id}, {"assertion_text", c->assertion_text}});
    req["per_case_timeout_ms"] = cfg_.per_case_timeout_ms;

    detail::Subprocess child(exe, {"-I", runner.filename().string()}, child_environment(dir.path()), dir.path());
    child.write_and_close_stdin(req.dump() + "\n");

    std::set<std::string> expected;
    for (const auto* c : cases) expected.insert(c->id);
    std::size_t reported = 0;
    auto in_flight = [&]() -> const GeneratedTestCase* {
      for (const auto* c : cases)
        if (!results.count(c->id)) return c;
      return nullptr;
    };

    auto case_started = detail::Clock::now();
    std::string line;
    while (true) {
      const auto per_case_deadline = case_started + std::chrono::milliseconds(cfg_.per_case_timeout_ms + cfg_.kill_grace_ms);
      const auto deadline = std::min(per_case_deadline, total_deadline);
      const auto status = child.read_line(line, deadline);
      if (status == detail::ReadStatus::TimedOut) {
        child.kill();
        child.wait();
        if (deadline == total_deadline) {
          for (const auto* c : cases)
            if (!results.count(c->id))
              results[c->id] = {c->id, Verdict::Timeout, "total time budget exhausted", detail::ms_since(case_started)};
          return false;
        }
        if (const auto* c = in_flight())
          results[c->id] = {c->id, Verdict::Timeout, "exceeded per-case timeout", detail::ms_since(case_started)};
        return in_flight() != nullptr;
      }
      if (status == detail::ReadStatus::Eof) {
        const auto info = child.wait();
        const auto* c = in_flight();
        if (c == nullptr) throw ProtocolError("runner exited without the terminal sentinel");
        std::string msg = "runner died before reporting (" + info.describe() + ")";
        if (!child.diagnostics().empty()) msg += ": " + last_line(child.diagnostics());
        results[c->id] = {c->id, Verdict::Error, msg, detail::ms_since(case_started)};
        return in_flight() != nullptr;
      }

      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw ProtocolError("runner emitted a non-JSON line: " + line.substr(0, 200));
      }
      if (!j.is_object()) throw ProtocolError("runner emitted a non-object line: " + line.substr(0, 200));
      if (j.contains("done")) {
        if (reported != cases.size())
          throw ProtocolError("runner sentinel after " + std::to_string(reported) + " of " + std::to_string(cases.size()) +
                              " cases");
        child.wait();
        return false;
      }
      CaseResult r;
      try {
        r.test_id = j.at("id").get<std::string>();
        const auto verdict = parse_verdict(j.at("verdict").get<std::string>());
        if (!verdict) throw ProtocolError("unknown verdict in: " + line.substr(0, 200));
        r.verdict = *verdict;
        r.message = j.value("message", std::string());
        r.duration_ms = j.value("duration_ms", std::int64_t{0});
      } catch (const nlohmann::json::exception& ex) {
        throw ProtocolError(std::string("runner result line missing fields: ") + ex.what());
      }
      if (!expected.count(r.test_id)) throw ProtocolError("runner reported unknown case id " + r.test_id);
      if (results.count(r.test_id)) throw ProtocolError("runner reported case " + r.test_id + " twice");
      results[r.test_id] = std::move(r);
      ++reported;
      case_started = detail::Clock::now();
    }
  }

  static std::string last_line(const std::string& s) {
    auto t = std::string(detail::trim(s));
    const auto nl = t.rfind('\n');
    return nl == std::string::npos ? t : t.substr(nl + 1);
  }

  SandboxConfig cfg_;
};

}  // namespace codecor
