#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "codecor/sandbox.hpp"
#include "support/replay.hpp"

using namespace codecor;
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kPerCaseMs = 400;

GeneratedTestCase valid(std::string text) {
  auto tc = make_test_case(std::move(text));
  tc.classification = TestClassification::Valid;
  return tc;
}

CodeSnippet checked(std::string src) {
  CodeSnippet s;
  s.source = std::move(src);
  s.syntax_ok = SyntaxState::Ok;
  return s;
}

/// Work root private to one test, so leftovers can be counted.
struct ScratchRoot {
  fs::path path;
  ScratchRoot() {
    std::string tmpl = (fs::temp_directory_path() / "codecor-test-XXXXXX").string();
    REQUIRE(::mkdtemp(tmpl.data()) != nullptr);
    path = tmpl;
  }
  ~ScratchRoot() { fs::remove_all(path); }
  std::size_t entries() const { return static_cast<std::size_t>(std::distance(fs::directory_iterator(path), {})); }
};

SandboxConfig stub_config(const fs::path& root) {
  SandboxConfig c;
  c.runner_script = testing::fixture_path("stub_runner.py").string();
  c.per_case_timeout_ms = kPerCaseMs;
  c.total_timeout_ms = 20000;
  c.workdir = root;
  return c;
}

const CaseResult& verdict_of(const ExecutionReport& r, const GeneratedTestCase& tc) {
  for (const auto& c : r.per_case)
    if (c.test_id == tc.id) return c;
  throw std::runtime_error("missing case " + tc.id);
}

}  // namespace

TEST_CASE("syntax check parses without executing") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  CHECK(sb.syntax_check("x = 1").ok);
  CHECK(sb.syntax_check("").ok);
  const auto bad = sb.syntax_check("def f(:");
  CHECK_FALSE(bad.ok);
  CHECK(bad.line == 1);
  CHECK(bad.message.find("SyntaxError") == 0);
  const auto indent = sb.syntax_check("def f(x):\nreturn x");
  CHECK_FALSE(indent.ok);
  CHECK(indent.line == 2);
  CHECK(indent.message.find("IndentationError") == 0);
  CHECK(sb.syntax_check("import os\nos._exit(9)\n").ok);
  CHECK(sb.syntax_check("print('caf\xc3\xa9')").ok);
  CHECK(root.entries() == 0);
}

TEST_CASE("missing interpreter or runner is SandboxUnavailable") {
  ScratchRoot root;
  auto cfg = stub_config(root.path);
  cfg.interpreter_path = "/nonexistent/python3";
  ProcessSandbox no_python(cfg);
  CHECK_THROWS_AS(no_python.syntax_check("x = 1"), SandboxUnavailable);

  auto cfg2 = stub_config(root.path);
  cfg2.runner_script = (root.path / "missing.py").string();
  ProcessSandbox no_runner(cfg2);
  CHECK_THROWS_AS(no_runner.run_tests(checked("x = 1"), {valid("assert x == 1")}, "f"), SandboxUnavailable);
}

TEST_CASE("run_tests preconditions") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  CodeSnippet unchecked;
  unchecked.source = "x = 1";
  CHECK_THROWS_AS(sb.run_tests(unchecked, {valid("assert x")}, "f"), PreconditionViolation);
  CHECK_THROWS_AS(sb.run_tests(checked("x = 1"), {make_test_case("assert x")}, "f"), PreconditionViolation);
  CHECK_THROWS_AS(sb.run_tests(checked("x = 1"), {valid("assert x"), valid("assert  x")}, "f"), PreconditionViolation);
  CHECK(sb.run_tests(checked("x = 1"), {}, "f").per_case.empty());
}

TEST_CASE("all-pass snippet") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const std::vector<GeneratedTestCase> tests = {valid("assert f(1) == 2"), valid("assert f(2) == 4"), valid("assert f(0) == 0")};
  const auto r = sb.run_tests(checked("def f(x):\n    return 2 * x\n"), tests, "f");
  CHECK(r.passed_count() == 3);
  CHECK(r.failed_set().empty());
  REQUIRE(r.per_case.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.per_case[i].test_id == tests[i].id);
  CHECK(root.entries() == 0);
}

TEST_CASE("a raising case is an Error and the others are unaffected") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const auto ok1 = valid("assert f(4) == 0.25");
  const auto boom = valid("assert f(0) == 0");
  const auto wrong = valid("assert f(2) == 1");
  const auto r = sb.run_tests(checked("def f(x):\n    return 1 / x\n"), {ok1, boom, wrong}, "f");
  CHECK(verdict_of(r, ok1).verdict == Verdict::Pass);
  CHECK(verdict_of(r, boom).verdict == Verdict::Error);
  CHECK(verdict_of(r, boom).message.find("ZeroDivisionError") != std::string::npos);
  CHECK(verdict_of(r, wrong).verdict == Verdict::Fail);
}

TEST_CASE("verdicts are deterministic across runs") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const std::vector<GeneratedTestCase> tests = {valid("assert f(1) == 1"), valid("assert f(2) == 3"), valid("assert f(None)")};
  const auto snippet = checked("def f(x):\n    return x + 0\n");
  const auto a = sb.run_tests(snippet, tests, "f");
  const auto b = sb.run_tests(snippet, tests, "f");
  REQUIRE(a.per_case.size() == b.per_case.size());
  for (std::size_t i = 0; i < a.per_case.size(); ++i) {
    CHECK(a.per_case[i].test_id == b.per_case[i].test_id);
    CHECK(a.per_case[i].verdict == b.per_case[i].verdict);
  }
}

TEST_CASE("generated code cannot read the API key") {
  ScratchRoot root;
  ::setenv(kApiKeyEnv, "sk-secret", 1);
  auto cfg = stub_config(root.path);
  cfg.env_allowlist.push_back(kApiKeyEnv);  // even when allowlisted
  ProcessSandbox sb(cfg);
  for (const auto& e : sb.child_environment(root.path)) CHECK(e.rfind(std::string(kApiKeyEnv) + "=", 0) != 0);
  const auto via_code = valid("assert KEY is None");
  const auto via_runner = valid("assert STUB_ENV");
  const auto r = sb.run_tests(checked("import os\nKEY = os.environ.get('CODECOR_API_KEY')\n"), {via_code, via_runner}, "f");
  CHECK(verdict_of(r, via_code).verdict == Verdict::Pass);
  CHECK(verdict_of(r, via_runner).verdict == Verdict::Pass);
  ::unsetenv(kApiKeyEnv);
}

TEST_CASE("each execution gets a fresh working directory that is removed afterwards") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const auto cwd = valid("assert STUB_CWD");
  const auto write = valid("assert open('scratch.txt', 'w').write('x') == 1");
  const auto r = sb.run_tests(checked("x = 1"), {cwd, write}, "f");
  CHECK(verdict_of(r, cwd).verdict == Verdict::Pass);
  CHECK(fs::path(verdict_of(r, cwd).message).parent_path() == root.path);
  CHECK(verdict_of(r, write).verdict == Verdict::Pass);
  const auto again = sb.run_tests(checked("import os\nSEEN = os.path.exists('scratch.txt')\n"), {valid("assert not SEEN")}, "f");
  CHECK(again.all_passed());
  CHECK(root.entries() == 0);
}

TEST_CASE("a crashing case does not poison the others") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const auto before = valid("assert f(1) == 1");
  const auto crash = valid("assert STUB_DIE");
  const auto after = valid("assert f(2) == 2");
  const auto r = sb.run_tests(checked("def f(x):\n    return x\n"), {before, crash, after}, "f");
  REQUIRE(r.per_case.size() == 3);
  CHECK(verdict_of(r, before).verdict == Verdict::Pass);
  CHECK(verdict_of(r, crash).verdict == Verdict::Error);
  CHECK(verdict_of(r, crash).message.find("runner died") != std::string::npos);
  CHECK(verdict_of(r, crash).message.find("stub runner crashing on purpose") != std::string::npos);
  CHECK(verdict_of(r, after).verdict == Verdict::Pass);
}

TEST_CASE("a non-terminating snippet times out per case") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const std::vector<GeneratedTestCase> tests = {valid("assert f(1)"), valid("assert f(2)")};
  const auto started = detail::Clock::now();
  const auto r = sb.run_tests(checked("while True:\n    pass\n"), tests, "f");
  const auto elapsed = detail::ms_since(started);
  REQUIRE(r.per_case.size() == 2);
  for (const auto& c : r.per_case) {
    CHECK(c.verdict == Verdict::Timeout);
    CHECK(c.duration_ms >= kPerCaseMs);
    CHECK(c.duration_ms <= kPerCaseMs + 500);
  }
  CHECK(elapsed < 2 * (kPerCaseMs + 500) + 500);
  CHECK(root.entries() == 0);
}

TEST_CASE("hanging case among passing ones") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  const auto ok = valid("assert x == 1");
  const auto hang = valid("assert STUB_HANG");
  const auto ok2 = valid("assert x + 1 == 2");
  const auto r = sb.run_tests(checked("x = 1"), {ok, hang, ok2}, "f");
  CHECK(verdict_of(r, ok).verdict == Verdict::Pass);
  CHECK(verdict_of(r, hang).verdict == Verdict::Timeout);
  CHECK(verdict_of(r, ok2).verdict == Verdict::Pass);
}

TEST_CASE("total budget marks the remaining cases Timeout") {
  ScratchRoot root;
  auto cfg = stub_config(root.path);
  cfg.total_timeout_ms = 600;
  ProcessSandbox sb(cfg);
  const std::vector<GeneratedTestCase> tests = {valid("assert STUB_HANG"), valid("assert 1"), valid("assert 2")};
  const auto started = detail::Clock::now();
  const auto r = sb.run_tests(checked("x = 1"), tests, "f");
  CHECK(detail::ms_since(started) < 1500);
  REQUIRE(r.per_case.size() == 3);
  for (const auto& c : r.per_case) CHECK(c.verdict == Verdict::Timeout);
}

TEST_CASE("malformed runner output is a ProtocolError") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  CHECK_THROWS_AS(sb.run_tests(checked("x = 1"), {valid("assert STUB_GARBAGE")}, "f"), ProtocolError);
  CHECK_THROWS_AS(sb.run_tests(checked("x = 1"), {valid("assert 1"), valid("assert STUB_EARLY_DONE")}, "f"), ProtocolError);
  CHECK_THROWS_AS(sb.run_tests(checked("x = 1"), {valid("assert STUB_UNKNOWN_ID")}, "f"), ProtocolError);
  CHECK(root.entries() == 0);
}

TEST_CASE("large programs go through the pipe intact") {
  ScratchRoot root;
  ProcessSandbox sb(stub_config(root.path));
  std::string src = "def f():\n    return 7\n";
  src += "# " + std::string(1 << 20, 'x') + "\n";
  const auto r = sb.run_tests(checked(src), {valid("assert f() == 7")}, "f");
  CHECK(r.all_passed());
  CHECK(sb.syntax_check(src).ok);
}
