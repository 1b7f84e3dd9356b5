#pragma once

// End-to-end pipeline for one task:
//   I   plans      -> prune by score
//   II  test cases -> prune by static checks + classification
//   III snippets   -> prune by syntax
//   IV  execute every snippet; passers (and hopeless ones) go to the ranked set
//   V   advise, prune advice, repair, re-execute, until every lineage is ranked
// The head of the ranked set is the final program.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "codecor/agents.hpp"
#include "codecor/core_model.hpp"
#include "codecor/errors.hpp"
#include "codecor/llm_gateway.hpp"
#include "codecor/pruning.hpp"
#include "codecor/sandbox.hpp"

namespace codecor {

struct RunConfig {
  AgentConfig agent_cfg;
  std::size_t max_repair_rounds = 3;
  int fallback_regen_attempts = 1;
  /// Repair stops once the Jaccard similarity of consecutive failed sets
  /// reaches this value. 1.0 means "identical sets".
  double stop_similarity = 1.0;
  /// Concurrent sandbox executions within one phase.
  int parallelism = 1;
  /// Parse retries for a malformed score or classification.
  int score_parse_retry = 1;

  void validate() const {
    agent_cfg.validate();
    if (fallback_regen_attempts < 0) throw ConfigError("fallback_regen_attempts must be >= 0");
    if (stop_similarity <= 0.0 || stop_similarity > 1.0) throw ConfigError("stop_similarity must be in (0, 1]");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (score_parse_retry < 0) throw ConfigError("score_parse_retry must be >= 0");
  }
};

struct RunCounters {
  std::int64_t llm_calls = 0;
  std::int64_t repairs_performed = 0;
  std::int64_t snippets_pruned = 0;
  std::int64_t tests_pruned = 0;
  std::int64_t prompts_pruned = 0;
  std::int64_t sandbox_runs = 0;

  bool operator==(const RunCounters&) const = default;
};

enum class RunStatus { Solved, Starved };

struct TaskRunRecord {
  std::string task_id;
  RunStatus status = RunStatus::Solved;
  std::string final_code;
  /// False when no plan survived pruning and the task description stood in.
  bool used_cot_plan = true;
  std::vector<GeneratedTestCase> selected_tests;
  RankedCodeSet ranked;
  std::vector<TranscriptRecord> transcripts;
  RunCounters counters;
  std::int64_t tokens = 0;
  std::int64_t wall_ms = 0;
};

// --- stop rule and selection -------------------------------------------------

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

inline bool should_stop_repair(const std::set<std::string>& current_failed,
                               const std::optional<std::set<std::string>>& previous_failed, std::size_t round,
                               const RunConfig& cfg) {
  if (current_failed.empty()) throw PreconditionViolation("stop rule evaluated for a snippet with no failures");
  if (round >= cfg.max_repair_rounds) return true;
  return previous_failed && jaccard(current_failed, *previous_failed) >= cfg.stop_similarity;
}

inline const std::string& select_final(const RankedCodeSet& ranked) {
  if (ranked.empty()) throw EmptyRankedSet("no candidate reached the ranked set");
  return ranked.front().snippet.source;
}

// --- starvation fallbacks ----------------------------------------------------

enum class PipelineStage { Prompts, Tests, Snippets };

enum class RecoveryAction { Regenerate, UseTaskDescription, ProceedWithoutTests };

/// What to do after `failed_attempts` generations of `stage` produced an
/// empty kept pool. Throws PipelineStarved once snippets are out of retries.
inline RecoveryAction apply_fallbacks(PipelineStage stage, int failed_attempts, const RunConfig& cfg) {
  if (failed_attempts <= cfg.fallback_regen_attempts) return RecoveryAction::Regenerate;
  switch (stage) {
    case PipelineStage::Prompts: return RecoveryAction::UseTaskDescription;
    case PipelineStage::Tests: return RecoveryAction::ProceedWithoutTests;
    case PipelineStage::Snippets: break;
  }
  throw PipelineStarved("every generated snippet was pruned after " + std::to_string(failed_attempts) + " attempt(s)");
}

// --- execution fan-out -------------------------------------------------------

inline std::vector<ExecutionReport> execute_all(CodeExecutor& exec, const std::vector<CodeSnippet>& snippets,
                                                const std::vector<GeneratedTestCase>& tests,
                                                const std::string& entry_point, int parallelism) {
  std::vector<ExecutionReport> reports(snippets.size());
  if (parallelism <= 1 || snippets.size() <= 1) {
    for (std::size_t i = 0; i < snippets.size(); ++i) reports[i] = exec.run_tests(snippets[i], tests, entry_point);
    return reports;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < snippets.size(); i = next++) {
      try {
        reports[i] = exec.run_tests(snippets[i], tests, entry_point);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(parallelism), snippets.size());
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return reports;
}

// --- the pipeline ------------------------------------------------------------

namespace detail {

struct Lineage {
  CodeSnippet snippet;
  ExecutionReport report;
};

}  // namespace detail

inline TaskRunRecord solve_task(const Task& task, const RunConfig& cfg, Gateway& gateway, CodeExecutor& exec,
                                const LlmSettings& settings = {}) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  AgentChannel ch(gateway, settings);
  TaskRunRecord rec;
  rec.task_id = task.task_id;
  auto& counters = rec.counters;

  auto finish = [&]() -> TaskRunRecord {
    rec.transcripts = ch.log();
    counters.llm_calls = ch.calls();
    rec.tokens = ch.tokens();
    rec.wall_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    return std::move(rec);
  };

  // Phase I: plans.
  std::vector<CotPrompt> selected_prompts;
  for (int attempt = 1;; ++attempt) {
    std::vector<CotPrompt> generated;
    try {
      generated = prompt_agent_generate(ch, task, cfg.agent_cfg);
    } catch (const GenerationEmpty&) {
    }
    auto outcome = prune_prompts(
        std::move(generated), [&](const CotPrompt& p) { return prompt_agent_score(ch, task, p); }, cfg.score_parse_retry);
    counters.prompts_pruned += static_cast<std::int64_t>(outcome.pruned.size());
    if (!outcome.kept.empty()) {
      selected_prompts = std::move(outcome.kept);
      break;
    }
    if (apply_fallbacks(PipelineStage::Prompts, attempt, cfg) != RecoveryAction::Regenerate) break;
  }
  rec.used_cot_plan = !selected_prompts.empty();
  const auto plan = plan_digest(selected_prompts, task);

  // Phase II: test cases.
  std::vector<GeneratedTestCase> tests;
  for (int attempt = 1;; ++attempt) {
    std::vector<GeneratedTestCase> generated;
    try {
      generated = test_agent_generate(ch, task, plan, cfg.agent_cfg);
    } catch (const GenerationEmpty&) {
    }
    auto outcome = prune_tests(
        std::move(generated), task, [&](const GeneratedTestCase& t) { return test_agent_classify(ch, task, t); },
        cfg.score_parse_retry);
    counters.tests_pruned += static_cast<std::int64_t>(outcome.pruned.size());
    if (!outcome.kept.empty()) {
      tests = std::move(outcome.kept);
      break;
    }
    if (apply_fallbacks(PipelineStage::Tests, attempt, cfg) != RecoveryAction::Regenerate) break;
  }
  rec.selected_tests = tests;

  // Phase III: code snippets.
  const SyntaxChecker check = [&](const std::string& src) { return exec.syntax_check(src); };
  std::vector<CodeSnippet> snippets;
  std::optional<std::string> last_generated;
  for (int attempt = 1;; ++attempt) {
    std::vector<CodeSnippet> generated;
    try {
      generated = coding_agent_generate(ch, task, plan, cfg.agent_cfg);
    } catch (const GenerationEmpty&) {
    }
    if (!generated.empty()) last_generated = generated.back().source;
    auto outcome = prune_code(std::move(generated), check);
    counters.snippets_pruned += static_cast<std::int64_t>(outcome.pruned.size());
    if (!outcome.kept.empty()) {
      snippets = std::move(outcome.kept);
      break;
    }
    try {
      apply_fallbacks(PipelineStage::Snippets, attempt, cfg);
    } catch (const PipelineStarved&) {
      rec.status = RunStatus::Starved;
      rec.final_code = last_generated.value_or("");
      return finish();
    }
  }

  // Phase IV: result checking.
  std::vector<detail::Lineage> failing;
  {
    auto reports = execute_all(exec, snippets, tests, task.entry_point, cfg.parallelism);
    counters.sandbox_runs += static_cast<std::int64_t>(reports.size());
    for (std::size_t i = 0; i < snippets.size(); ++i) {
      auto& s = snippets[i];
      auto& r = reports[i];
      s.last_report = r;
      const auto failed = r.failed_set();
      if (failed.empty() || should_stop_repair(failed, std::nullopt, s.repair_round, cfg))
        rec.ranked.insert(std::move(s), std::move(r));
      else
        failing.push_back({std::move(s), std::move(r)});
    }
  }

  // Phase V: repair, one round across all failing lineages at a time.
  while (!failing.empty()) {
    std::vector<detail::Lineage> parents;
    std::vector<CodeSnippet> repaired;
    for (auto& lineage : failing) {
      RepairAdvice advice;
      try {
        advice = repair_agent_advise(ch, lineage.snippet, lineage.report, task, tests, cfg.agent_cfg.parse_retry);
        advice = prune_repair_advice(
            std::move(advice), lineage.report, tests, [&](const RepairAdvice& a) { return repair_agent_score(ch, task, a); },
            cfg.score_parse_retry);
      } catch (const GenerationEmpty&) {
        advice = RepairAdvice{failed_case_digest(lineage.report, tests), std::nullopt, true};
      }
      std::optional<CodeSnippet> next;
      try {
        next = coding_agent_repair(ch, lineage.snippet, advice, task, cfg.max_repair_rounds, cfg.agent_cfg.parse_retry);
      } catch (const GenerationEmpty&) {
      }
      if (next) {
        ++counters.repairs_performed;
        const auto syntax = exec.syntax_check(next->source);
        if (syntax.ok) {
          next->syntax_ok = SyntaxState::Ok;
          parents.push_back(std::move(lineage));
          repaired.push_back(std::move(*next));
          continue;
        }
        ++counters.snippets_pruned;
      }
      // The repair produced nothing runnable: the lineage ends with its
      // current snippet.
      rec.ranked.insert(std::move(lineage.snippet), std::move(lineage.report));
    }

    auto reports = execute_all(exec, repaired, tests, task.entry_point, cfg.parallelism);
    counters.sandbox_runs += static_cast<std::int64_t>(reports.size());
    std::vector<detail::Lineage> still_failing;
    for (std::size_t i = 0; i < repaired.size(); ++i) {
      auto& s = repaired[i];
      auto& r = reports[i];
      s.last_report = r;
      const auto failed = r.failed_set();
      if (failed.empty() || should_stop_repair(failed, parents[i].report.failed_set(), s.repair_round, cfg))
        rec.ranked.insert(std::move(s), std::move(r));
      else
        still_failing.push_back({std::move(s), std::move(r)});
    }
    failing = std::move(still_failing);
  }

  rec.final_code = select_final(rec.ranked);
  return finish();
}

// --- serialization -----------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const ExecutionReport& r, bool mask_timings) {
  nlohmann::ordered_json j;
  j["passed_count"] = r.passed_count();
  j["failed"] = r.failed_set();
  j["per_case"] = nlohmann::ordered_json::array();
  for (const auto& c : r.per_case)
    j["per_case"].push_back({{"id", c.test_id},
                             {"verdict", to_string(c.verdict)},
                             {"message", c.message},
                             {"duration_ms", mask_timings ? 0 : c.duration_ms}});
  return j;
}

/// Stable field order; `mask_timings` zeroes every wall-clock field so replay
/// runs can be compared byte for byte.
inline nlohmann::ordered_json to_json(const TaskRunRecord& rec, bool mask_timings = false) {
  nlohmann::ordered_json j;
  j["task_id"] = rec.task_id;
  j["status"] = rec.status == RunStatus::Solved ? "solved" : "starved";
  j["final_code"] = rec.final_code;
  j["used_cot_plan"] = rec.used_cot_plan;
  j["selected_tests"] = nlohmann::ordered_json::array();
  for (const auto& t : rec.selected_tests) j["selected_tests"].push_back({{"id", t.id}, {"assertion_text", t.assertion_text}});
  j["ranked"] = nlohmann::ordered_json::array();
  for (const auto& e : rec.ranked.entries()) {
    nlohmann::ordered_json entry;
    entry["origin_index"] = e.snippet.origin_index;
    entry["repair_round"] = e.snippet.repair_round;
    entry["source"] = e.snippet.source;
    entry["report"] = report_to_json(e.report, mask_timings);
    j["ranked"].push_back(std::move(entry));
  }
  j["transcripts"] = nlohmann::ordered_json::array();
  for (const auto& t : rec.transcripts)
    j["transcripts"].push_back({{"agent", t.agent}, {"request", t.request_digest}, {"response", t.response_digest}});
  const auto& c = rec.counters;
  j["counters"] = {{"llm_calls", c.llm_calls},         {"repairs_performed", c.repairs_performed},
                   {"snippets_pruned", c.snippets_pruned}, {"tests_pruned", c.tests_pruned},
                   {"prompts_pruned", c.prompts_pruned}, {"sandbox_runs", c.sandbox_runs}};
  j["tokens"] = rec.tokens;
  j["wall_ms"] = mask_timings ? 0 : rec.wall_ms;
  return j;
}

}  // namespace codecor
