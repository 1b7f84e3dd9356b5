#pragma once

// Loads a replay fixture directory (task.json, transcript.jsonl,
// executor.json) and runs the pipeline against it.

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "codecor/cli_config.hpp"
#include "codecor/orchestrator.hpp"
#include "support/fixture_executor.hpp"

#ifndef CODECOR_FIXTURES
#error "CODECOR_FIXTURES must point at tests/fixtures"
#endif
#ifndef CODECOR_GOLDEN
#error "CODECOR_GOLDEN must point at tests/golden"
#endif

namespace codecor::testing {

inline std::filesystem::path fixture_path(const std::string& rel) { return std::filesystem::path(CODECOR_FIXTURES) / rel; }
inline std::filesystem::path golden_path(const std::string& rel) { return std::filesystem::path(CODECOR_GOLDEN) / rel; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

struct ReplayRun {
  TaskRunRecord record;
  std::shared_ptr<ScriptedBackend> backend;
  std::shared_ptr<FixtureExecutor> executor;
  LedgerSnapshot ledger;
};

inline Task fixture_task(const nlohmann::json& j) {
  Task t;
  t.task_id = j.at("task_id");
  t.description = j.at("description");
  t.entry_point = j.value("entry_point", "");
  t.source_dataset = SourceDataset::Custom;
  return t;
}

/// The "config" object of task.json uses the CLI config keys.
inline RunConfig fixture_config(const nlohmann::json& task_json) {
  CliConfig cfg;
  if (task_json.contains("config")) apply_config_json(cfg, task_json["config"]);
  return cfg.run;
}

inline ReplayRun run_replay(const std::string& name) {
  const auto dir = fixture_path("replay/" + name);
  const auto task_json = read_json(dir / "task.json");
  ReplayRun run;
  run.backend = std::make_shared<ScriptedBackend>(load_transcript((dir / "transcript.jsonl").string()));
  run.executor = FixtureExecutor::from_json(read_json(dir / "executor.json"));
  Gateway gateway(run.backend);
  run.record = solve_task(fixture_task(task_json), fixture_config(task_json), gateway, *run.executor);
  run.ledger = gateway.run_ledger();
  return run;
}

inline std::string render_record(const TaskRunRecord& rec) { return to_json(rec, true).dump(2) + "\n"; }

/// Compares against the golden file; with CODECOR_UPDATE_GOLDEN set, rewrites
/// it instead and reports a match.
inline bool matches_golden(const std::string& rel, const std::string& actual) {
  const auto path = golden_path(rel);
  if (std::getenv("CODECOR_UPDATE_GOLDEN")) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary | std::ios::trunc) << actual;
    return true;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str() == actual;
}

}  // namespace codecor::testing
