#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "codecor/detail/subprocess.hpp"
#include "support/replay.hpp"

#ifndef CODECOR_CLI
#error "CODECOR_CLI must name the codecor binary"
#endif

using namespace codecor;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

/// Runs the binary through the shell with stdout and stderr captured apart.
CliResult run_cli(const std::vector<std::string>& args, const std::string& env_prefix = "") {
  const detail::TempDir scratch(fs::temp_directory_path());
  const auto err_path = scratch.path() / "stderr";
  std::string cmd = env_prefix + " " + quote(CODECOR_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>" + quote(err_path.string());
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = testing::slurp(err_path);
  return r;
}

/// Output lines without the empty piece after the final newline.
std::vector<std::string> lines_of(const std::string& text) {
  auto lines = detail::split_lines(text);
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::string fixture(const std::string& rel) { return testing::fixture_path(rel).string(); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<std::string> bench_args() {
  return {"bench",        "--config",     fixture("bench.config.json"),
          "--dataset",    fixture("datasets/bench_two_tasks.jsonl"),
          "--transcript", fixture("bench_two_tasks.transcript.jsonl"),
          "--runner-script", fixture("stub_runner.py"),
          "--mask-timings"};
}

}  // namespace

TEST_CASE("configuration errors exit 2 before any request") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post(R"(.*)", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  const auto url = "http://127.0.0.1:" + std::to_string(port) + "/v1";

  const auto missing_key = run_cli({"solve", "-t", "def f(x):\n    pass\n", "--base-url", url}, "env -u CODECOR_API_KEY");
  CHECK(missing_key.exit_code == 2);
  CHECK(missing_key.out.empty());
  CHECK(missing_key.err.find("CODECOR_API_KEY") != std::string::npos);
  server.stop();
  th.join();
  CHECK(hits == 0);

  CHECK(run_cli({"bench", "--dataset", fixture("datasets/bench_two_tasks.jsonl"), "--limit", "0"}).exit_code == 2);
  CHECK(run_cli({"bench", "--backend", "transcript", "--transcript", fixture("bench_two_tasks.transcript.jsonl"), "--jobs",
                 "2", "--dataset", fixture("datasets/bench_two_tasks.jsonl")})
            .exit_code == 2);
  CHECK(run_cli({"solve", "--backend", "nonsense", "-t", "x"}).exit_code == 2);
  CHECK(run_cli({"solve"}).exit_code == 2);

  const detail::TempDir dir(fs::temp_directory_path());
  write_file(dir.path() / "bad.json", R"({"bogus": 1})");
  const auto unknown = run_cli({"solve", "--config", (dir.path() / "bad.json").string(), "-t", "x"});
  CHECK(unknown.exit_code == 2);
  CHECK(unknown.err.find("bogus") != std::string::npos);
  write_file(dir.path() / "typed.json", R"({"n_prompts": "three"})");
  CHECK(run_cli({"solve", "--config", (dir.path() / "typed.json").string(), "-t", "x"}).exit_code == 2);
}

TEST_CASE("solve replays a transcript and prints only the program") {
  const detail::TempDir dir(fs::temp_directory_path());
  const auto task = testing::read_json(testing::fixture_path("replay/happy_path/task.json"));
  write_file(dir.path() / "task.txt", task["description"].get<std::string>());
  auto cfg = task["config"];
  cfg["backend"] = "transcript";
  write_file(dir.path() / "config.json", cfg.dump());
  const std::vector<std::string> args = {"solve", "--config", (dir.path() / "config.json").string(), "--transcript",
                                         fixture("replay/happy_path/transcript.jsonl"), "--runner-script",
                                         fixture("stub_runner.py"), "-t", (dir.path() / "task.txt").string(),
                                         "--task-id", "fixture/truncate_number", "--record",
                                         (dir.path() / "record.json").string(), "--mask-timings"};
  const auto a = run_cli(args);
  REQUIRE(a.exit_code == 0);
  CHECK(a.out == "def truncate_number(number: float) -> float:\n    return number % 1.0\n");
  CHECK(a.err.empty());
  const auto record = testing::read_json(dir.path() / "record.json");
  CHECK(record["status"] == "solved");
  CHECK(record["counters"]["llm_calls"] == 8);
  CHECK(record["wall_ms"] == 0);

  const auto b = run_cli(args);
  CHECK(b.out == a.out);
}

TEST_CASE("bench output matches the golden report") {
  const auto r = run_cli(bench_args());
  REQUIRE(r.exit_code == 0);
  CHECK(testing::matches_golden("bench_report.jsonl", r.out));
  CHECK(r.err.empty());
}

TEST_CASE("score needs no LLM and is perfect on canonical programs") {
  const detail::TempDir dir(fs::temp_directory_path());
  const auto finals = (dir.path() / "finals").string();
  const auto exported =
      run_cli({"export-canonical", "--dataset", fixture("datasets/humaneval_first10.jsonl"), "--finals-dir", finals});
  REQUIRE(exported.exit_code == 0);
  CHECK(exported.out.empty());

  // No backend is configured: a request would fail for want of an API key.
  const std::vector<std::string> score = {"score",        "--dataset",       fixture("datasets/humaneval_first10.jsonl"),
                                          "--finals-dir", finals,            "--runner-script",
                                          fixture("stub_runner.py"),         "--mask-timings"};
  const auto perfect = run_cli(score, "env -u CODECOR_API_KEY");
  REQUIRE(perfect.exit_code == 0);
  const auto lines = lines_of(perfect.out);
  REQUIRE(lines.size() == 11);
  const auto agg = nlohmann::json::parse(lines.back());
  CHECK(agg["pass_at_1"] == 1.0);
  CHECK(agg["mean_edit_distance"] == 0.0);
  CHECK(agg["mean_bleu"] == 1.0);

  write_file(fs::path(finals) / "HumanEval_3.py", "def below_zero(operations:\n");
  fs::remove(fs::path(finals) / "HumanEval_4.py");
  const auto damaged = run_cli(score, "env -u CODECOR_API_KEY");
  REQUIRE(damaged.exit_code == 0);
  const auto dl = lines_of(damaged.out);
  REQUIRE(dl.size() == 11);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto t = nlohmann::json::parse(dl[i]);
    CHECK(t["passed_hidden"] == (i != 3 && i != 4));
  }
  CHECK(nlohmann::json::parse(dl.back())["pass_at_1"] == Catch::Approx(0.8));
  CHECK(damaged.err.find("missing final for HumanEval/4") != std::string::npos);
}

TEST_CASE("empty finals directory scores zero") {
  const detail::TempDir dir(fs::temp_directory_path());
  const auto r = run_cli({"score", "--dataset", fixture("datasets/mbpp_sample.jsonl"), "--kind", "mbpp", "--finals-dir",
                          dir.path().string(), "--runner-script", fixture("stub_runner.py"), "--report",
                          (dir.path() / "report.jsonl").string()});
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.empty());
  const auto lines = lines_of(testing::slurp(dir.path() / "report.jsonl"));
  REQUIRE(lines.size() == 4);
  CHECK(nlohmann::json::parse(lines.back())["pass_at_1"] == 0.0);
}

TEST_CASE("flags override the config file") {
  const detail::TempDir dir(fs::temp_directory_path());
  auto args = bench_args();
  args.insert(args.end(), {"--limit", "1", "--report", (dir.path() / "one.jsonl").string()});
  const auto r = run_cli(args);
  REQUIRE(r.exit_code == 0);
  CHECK(lines_of(testing::slurp(dir.path() / "one.jsonl")).size() == 2);

  write_file(dir.path() / "limit.json", R"({"limit": 1, "backend": "transcript", "n_prompts": 1, "n_tests": 2, "n_snippets": 1})");
  auto from_file = bench_args();
  from_file[2] = (dir.path() / "limit.json").string();
  CHECK(lines_of(run_cli(from_file).out).size() == 2);
  from_file.insert(from_file.end(), {"--limit", "2"});
  CHECK(lines_of(run_cli(from_file).out).size() == 3);
}
