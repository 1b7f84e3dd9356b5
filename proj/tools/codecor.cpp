// codecor: solve one task, run a benchmark, or rescore finals on disk.
// Data goes to stdout; diagnostics go to stderr.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "codecor/cli_config.hpp"

namespace fs = std::filesystem;
using namespace codecor;

namespace {

struct Flags {
  std::string config;
  std::string backend;
  std::string transcript;
  std::string model;
  std::string base_url;
  std::size_t max_repair_rounds = 0;
  std::string runner_script;
  std::string interpreter;
  std::string workdir;

  std::string task;
  std::string entry_point;
  std::string task_id = "task";
  std::string record;

  std::string dataset;
  std::string kind;
  std::int64_t limit = 0;
  int jobs = 1;
  std::string report;
  std::string finals_dir;
  bool mask_timings = false;
};

void add_shared(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--backend", f.backend, "openai-compat or transcript")->check(CLI::IsMember({"openai-compat", "transcript"}));
  cmd->add_option("--transcript", f.transcript, "Scripted transcript (JSON lines)");
  cmd->add_option("--model", f.model, "Model name");
  cmd->add_option("--base-url", f.base_url, "OpenAI-compatible endpoint base URL");
  cmd->add_option("--max-repair-rounds", f.max_repair_rounds, "Repair round bound");
  cmd->add_option("--runner-script", f.runner_script, "Sandbox runner script");
  cmd->add_option("--interpreter", f.interpreter, "Python interpreter");
  cmd->add_option("--workdir", f.workdir, "Parent directory for sandbox work dirs");
}

void add_dataset(CLI::App* cmd, Flags& f) {
  cmd->add_option("--dataset", f.dataset, "Dataset file (JSON lines)");
  cmd->add_option("--kind", f.kind, "humaneval, humaneval-et, mbpp, mbpp-et or custom");
}

/// Defaults, then the config file, then whichever flags were given.
CliConfig merge(const CLI::App* cmd, const Flags& f) {
  CliConfig cfg;
  if (!f.config.empty()) apply_config_file(cfg, f.config);
  auto given = [cmd](const char* name) { return cmd->get_option_no_throw(name) && cmd->count(name) > 0; };
  if (given("--backend")) cfg.backend = *parse_backend_kind(f.backend);
  if (given("--transcript")) cfg.transcript = f.transcript;
  if (given("--model")) cfg.llm.model = f.model;
  if (given("--base-url")) cfg.base_url = f.base_url;
  if (given("--max-repair-rounds")) cfg.run.max_repair_rounds = f.max_repair_rounds;
  if (given("--runner-script")) cfg.sandbox.runner_script = f.runner_script;
  if (given("--interpreter")) cfg.sandbox.interpreter_path = f.interpreter;
  if (given("--workdir")) cfg.sandbox.workdir = f.workdir;
  if (given("--dataset")) cfg.dataset = f.dataset;
  if (given("--kind")) cfg.kind = f.kind;
  if (given("--limit")) {
    if (f.limit <= 0) throw ConfigError("--limit must be >= 1");
    cfg.limit = f.limit;
  }
  if (given("--jobs")) cfg.jobs = f.jobs;
  if (given("--report")) cfg.report = f.report;
  if (given("--finals-dir")) cfg.finals_dir = f.finals_dir;
  cfg.validate();
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !(out << data)) throw IoError("cannot write " + p.string());
}

std::vector<DatasetRecord> load_records(const CliConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("--dataset is required");
  auto records = load_dataset(cfg.dataset, *parse_dataset_kind(cfg.kind));
  if (cfg.limit && static_cast<std::size_t>(*cfg.limit) < records.size()) records.resize(static_cast<std::size_t>(*cfg.limit));
  return records;
}

int cmd_solve(const CliConfig& cfg, const Flags& f) {
  Task task;
  task.task_id = f.task_id;
  std::error_code ec;
  task.description = fs::is_regular_file(f.task, ec) ? read_file(f.task) : f.task;
  task.entry_point = f.entry_point.empty() ? first_function_name(task.description) : f.entry_point;
  task.source_dataset = SourceDataset::Custom;

  Gateway gateway(make_backend(cfg), retry_policy(cfg));
  ProcessSandbox sandbox(cfg.sandbox);
  const auto rec = solve_task(task, cfg.run, gateway, sandbox, cfg.llm);
  if (!f.record.empty()) write_file(f.record, to_json(rec, f.mask_timings).dump(2) + "\n");
  std::cout << rec.final_code;
  if (!rec.final_code.empty() && rec.final_code.back() != '\n') std::cout << '\n';
  if (rec.status == RunStatus::Starved) {
    std::cerr << "codecor: pipeline starved; printed the last generated snippet\n";
    return kExitStarved;
  }
  return kExitOk;
}

int cmd_bench(const CliConfig& cfg, const Flags& f) {
  const auto records = load_records(cfg);
  Gateway gateway(make_backend(cfg), retry_policy(cfg));
  ProcessSandbox sandbox(cfg.sandbox);
  const auto result = run_benchmark(records, cfg.run, gateway, sandbox, cfg.llm, cfg.jobs);
  for (const auto& t : result.report.per_task)
    if (!t.error.empty()) std::cerr << "codecor: " << t.task_id << ": " << t.error << '\n';
  if (!cfg.finals_dir.empty())
    for (std::size_t i = 0; i < records.size(); ++i)
      if (result.records[i]) write_final(cfg.finals_dir, records[i].task.task_id, result.records[i]->final_code);
  if (!f.record.empty()) {
    std::ostringstream lines;
    for (const auto& r : result.records)
      if (r) lines << to_json(*r, f.mask_timings).dump() << '\n';
    write_file(f.record, lines.str());
  }
  if (cfg.report.empty()) {
    std::cout << render_report(result.report, f.mask_timings);
  } else {
    emit_report(result.report, cfg.report, f.mask_timings);
  }
  return kExitOk;
}

int cmd_score(const CliConfig& cfg, const Flags& f) {
  if (cfg.finals_dir.empty()) throw ConfigError("--finals-dir is required");
  const auto records = load_records(cfg);
  const auto finals = load_finals(cfg.finals_dir, records, [](const std::string& w) { std::cerr << "codecor: " << w << '\n'; });
  ProcessSandbox sandbox(cfg.sandbox);
  const auto report = score_finals(records, finals, sandbox);
  if (cfg.report.empty()) {
    std::cout << render_report(report, f.mask_timings);
  } else {
    emit_report(report, cfg.report, f.mask_timings);
  }
  return kExitOk;
}

int cmd_export(const CliConfig& cfg) {
  if (cfg.finals_dir.empty()) throw ConfigError("--finals-dir is required");
  std::size_t written = 0;
  for (const auto& r : load_records(cfg)) {
    if (!r.reference_solution) continue;
    write_final(cfg.finals_dir, r.task.task_id, *r.reference_solution);
    ++written;
  }
  std::cerr << "codecor: wrote " << written << " reference programs to " << cfg.finals_dir << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);

  CLI::App app{"Multi-agent code generation with pruning and self-repair"};
  app.require_subcommand(1);
  Flags f;

  auto* solve = app.add_subcommand("solve", "Solve one task and print the final program");
  add_shared(solve, f);
  solve->add_option("-t,--task", f.task, "Task description, or a file holding it")->required();
  solve->add_option("--entry-point", f.entry_point, "Function the program must define");
  solve->add_option("--task-id", f.task_id, "Identifier recorded in the run record");
  solve->add_option("--record", f.record, "Write the run record (JSON) here");
  solve->add_flag("--mask-timings", f.mask_timings, "Zero all timing fields in written records");

  auto* bench = app.add_subcommand("bench", "Solve and score every task in a dataset");
  add_shared(bench, f);
  add_dataset(bench, f);
  bench->add_option("--limit", f.limit, "Only the first N tasks");
  bench->add_option("--jobs", f.jobs, "Tasks solved concurrently");
  bench->add_option("--report", f.report, "Report file (JSON lines); stdout when absent");
  bench->add_option("--finals-dir", f.finals_dir, "Write each final program here");
  bench->add_option("--record", f.record, "Write run records (JSON lines) here");
  bench->add_flag("--mask-timings", f.mask_timings, "Zero all timing fields in the output");

  auto* score = app.add_subcommand("score", "Rescore final programs without any LLM calls");
  add_shared(score, f);
  add_dataset(score, f);
  score->add_option("--limit", f.limit, "Only the first N tasks");
  score->add_option("--finals-dir", f.finals_dir, "Directory with one final program per task");
  score->add_option("--report", f.report, "Report file (JSON lines); stdout when absent");
  score->add_flag("--mask-timings", f.mask_timings, "Zero all timing fields in the output");

  auto* exp = app.add_subcommand("export-canonical", "Write each record's reference program as a final");
  add_shared(exp, f);
  add_dataset(exp, f);
  exp->add_option("--limit", f.limit, "Only the first N tasks");
  exp->add_option("--finals-dir", f.finals_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (solve->parsed()) return cmd_solve(merge(solve, f), f);
    if (bench->parsed()) return cmd_bench(merge(bench, f), f);
    if (score->parsed()) return cmd_score(merge(score, f), f);
    if (exp->parsed()) return cmd_export(merge(exp, f));
  } catch (const std::exception& ex) {
    std::cerr << "codecor: " << ex.what() << '\n';
    return exit_code_for(ex);
  }
  return kExitFailure;
}
