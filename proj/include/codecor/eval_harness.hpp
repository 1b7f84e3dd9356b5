#pragma once

// Benchmark plumbing: JSON-lines dataset loaders (HumanEval / MBPP and their
// ET variants), hidden-test Pass@1 scoring, character edit distance,
// whitespace-token BLEU-4, and the JSON-lines run report.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "codecor/core_model.hpp"
#include "codecor/detail/text.hpp"
#include "codecor/errors.hpp"
#include "codecor/orchestrator.hpp"
#include "codecor/sandbox.hpp"

namespace codecor {

struct DatasetRecord {
  Task task;
  /// Complete runnable reference program. For HumanEval this is the prompt
  /// followed by the canonical body.
  std::optional<std::string> reference_solution;
  /// MBPP setup code run before each hidden test.
  std::string test_setup_code;

  bool operator==(const DatasetRecord&) const = default;
};

// --- loading -----------------------------------------------------------------

/// Name of the first function defined in `code`, or empty.
inline std::string first_function_name(const std::string& code) {
  static const std::regex def(R"((?:^|\n)\s*def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\()");
  std::smatch m;
  return std::regex_search(code, m, def) ? m[1].str() : std::string();
}

namespace detail {

inline std::string required_string(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw MalformedRecord(line, std::string("missing field \"") + key + "\"");
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw MalformedRecord(line, std::string("field \"") + key + "\" must be a string");
}

inline std::vector<std::string> string_list(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_array()) throw MalformedRecord(line, std::string("field \"") + key + "\" must be a list");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw MalformedRecord(line, std::string("field \"") + key + "\" must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline DatasetRecord parse_record(const nlohmann::json& j, SourceDataset kind, std::size_t line) {
  if (!j.is_object()) throw MalformedRecord(line, "record is not an object");
  DatasetRecord r;
  r.task.source_dataset = kind;
  switch (kind) {
    case SourceDataset::HumanEval:
    case SourceDataset::HumanEvalET: {
      r.task.task_id = required_string(j, "task_id", line);
      r.task.description = required_string(j, "prompt", line);
      r.task.entry_point = required_string(j, "entry_point", line);
      if (r.task.entry_point.empty()) throw MalformedRecord(line, "entry_point is empty");
      r.reference_solution = r.task.description + required_string(j, "canonical_solution", line);
      r.task.hidden_tests = {required_string(j, "test", line)};
      break;
    }
    case SourceDataset::MBPP:
    case SourceDataset::MBPPET: {
      r.task.task_id = required_string(j, "task_id", line);
      r.task.description = required_string(j, "text", line);
      r.reference_solution = required_string(j, "code", line);
      r.task.hidden_tests = string_list(j, "test_list", line);
      if (j.contains("test_setup_code") && j["test_setup_code"].is_string()) r.test_setup_code = j["test_setup_code"];
      r.task.entry_point = first_function_name(*r.reference_solution);
      if (r.task.entry_point.empty()) throw MalformedRecord(line, "no function definition in \"code\"");
      break;
    }
    case SourceDataset::Custom: {
      r.task.task_id = required_string(j, "task_id", line);
      r.task.description = required_string(j, "description", line);
      if (j.contains("entry_point")) r.task.entry_point = required_string(j, "entry_point", line);
      if (j.contains("hidden_tests")) r.task.hidden_tests = string_list(j, "hidden_tests", line);
      if (j.contains("reference")) r.reference_solution = required_string(j, "reference", line);
      break;
    }
  }
  if (r.task.task_id.empty()) throw MalformedRecord(line, "task_id is empty");
  return r;
}

}  // namespace detail

inline std::vector<DatasetRecord> parse_dataset(std::istream& in, SourceDataset kind) {
  std::vector<DatasetRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedRecord(lineno, std::string("invalid JSON: ") + ex.what());
    }
    auto rec = detail::parse_record(j, kind, lineno);
    if (!ids.insert(rec.task.task_id).second) throw MalformedRecord(lineno, "duplicate task_id " + rec.task.task_id);
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, SourceDataset kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return parse_dataset(in, kind);
}

/// Inverse of parse_record for the given kind.
inline nlohmann::ordered_json serialize_record(const DatasetRecord& r) {
  nlohmann::ordered_json j;
  const auto& t = r.task;
  switch (t.source_dataset) {
    case SourceDataset::HumanEval:
    case SourceDataset::HumanEvalET: {
      const auto& ref = r.reference_solution.value_or(t.description);
      j["task_id"] = t.task_id;
      j["prompt"] = t.description;
      j["entry_point"] = t.entry_point;
      j["canonical_solution"] = ref.rfind(t.description, 0) == 0 ? ref.substr(t.description.size()) : ref;
      j["test"] = t.hidden_tests.empty() ? std::string() : t.hidden_tests.front();
      break;
    }
    case SourceDataset::MBPP:
    case SourceDataset::MBPPET:
      j["task_id"] = t.task_id;
      j["text"] = t.description;
      j["code"] = r.reference_solution.value_or("");
      j["test_list"] = t.hidden_tests;
      if (!r.test_setup_code.empty()) j["test_setup_code"] = r.test_setup_code;
      break;
    case SourceDataset::Custom:
      j["task_id"] = t.task_id;
      j["description"] = t.description;
      if (!t.entry_point.empty()) j["entry_point"] = t.entry_point;
      if (!t.hidden_tests.empty()) j["hidden_tests"] = t.hidden_tests;
      if (r.reference_solution) j["reference"] = *r.reference_solution;
      break;
  }
  return j;
}

inline void write_dataset(std::ostream& out, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) out << serialize_record(r).dump() << '\n';
}

// --- hidden-test scoring -----------------------------------------------------

/// Executable form of a record's hidden tests. HumanEval's single `check`
/// program is invoked on the entry point.
inline std::vector<GeneratedTestCase> hidden_cases(const DatasetRecord& r) {
  std::vector<GeneratedTestCase> out;
  for (std::size_t i = 0; i < r.task.hidden_tests.size(); ++i) {
    GeneratedTestCase tc;
    tc.id = "hidden-" + std::to_string(i);
    std::string text = r.test_setup_code.empty() ? std::string() : r.test_setup_code + "\n";
    text += r.task.hidden_tests[i];
    if (is_humaneval_family(r.task.source_dataset)) text += "\n\ncheck(" + r.task.entry_point + ")\n";
    tc.assertion_text = std::move(text);
    tc.classification = TestClassification::Valid;
    out.push_back(std::move(tc));
  }
  return out;
}

/// True iff `final_code` parses and passes every hidden test. Only
/// SandboxUnavailable escapes; any other sandbox failure counts as a miss.
inline bool passes_hidden_tests(const DatasetRecord& r, const std::optional<std::string>& final_code, CodeExecutor& exec) {
  if (!final_code) return false;
  const auto cases = hidden_cases(r);
  if (cases.empty()) return false;
  try {
    if (!exec.syntax_check(*final_code).ok) return false;
    CodeSnippet s;
    s.source = *final_code;
    s.syntax_ok = SyntaxState::Ok;
    const auto report = exec.run_tests(s, cases, r.task.entry_point);
    return report.all_passed();
  } catch (const SandboxUnavailable&) {
    throw;
  } catch (const SandboxError&) {
    return false;
  }
}

/// Fraction of records whose final program passes all hidden tests; a record
/// without a final counts as failed. 0 for an empty record list.
inline double score_pass_at_1(const std::vector<DatasetRecord>& records,
                              const std::map<std::string, std::string>& finals, CodeExecutor& exec) {
  if (records.empty()) return 0.0;
  std::size_t passed = 0;
  for (const auto& r : records) {
    auto it = finals.find(r.task.task_id);
    passed += passes_hidden_tests(r, it == finals.end() ? std::nullopt : std::optional(it->second), exec) ? 1 : 0;
  }
  return static_cast<double>(passed) / static_cast<double>(records.size());
}

// --- text metrics ------------------------------------------------------------

/// Levenshtein distance over Unicode code points (unit costs).
inline std::int64_t edit_distance(std::string_view a, std::string_view b) {
  const auto x = detail::utf8_decode(a);
  const auto y = detail::utf8_decode(b);
  const auto& shorter = x.size() < y.size() ? x : y;
  const auto& longer = x.size() < y.size() ? y : x;
  std::vector<std::int64_t> row(shorter.size() + 1);
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= longer.size(); ++i) {
    std::int64_t diag = row[0];
    row[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= shorter.size(); ++j) {
      const std::int64_t up = row[j];
      const std::int64_t sub = diag + (longer[i - 1] == shorter[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row.back();
}

namespace detail {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, std::int64_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::int64_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace detail

/// Sentence BLEU over whitespace tokens: clipped n-gram precisions for
/// n = 1..min(4, |candidate|) with uniform weights, add-one smoothing for
/// zero-match orders n >= 2, times the brevity penalty min(1, e^(1 - r/c)).
inline double bleu(std::string_view candidate, std::string_view reference) {
  const auto cand = detail::split_ws(candidate);
  const auto ref = detail::split_ws(reference);
  if (cand.empty()) return 0.0;
  const std::size_t max_order = std::min<std::size_t>(4, cand.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    const auto c_counts = detail::ngram_counts(cand, n);
    const auto r_counts = detail::ngram_counts(ref, n);
    std::int64_t matched = 0;
    std::int64_t total = 0;
    for (const auto& [gram, count] : c_counts) {
      total += count;
      auto it = r_counts.find(gram);
      if (it != r_counts.end()) matched += std::min(count, it->second);
    }
    double p;
    if (matched == 0) {
      if (n == 1) return 0.0;
      p = 1.0 / static_cast<double>(total + 1);
    } else {
      p = static_cast<double>(matched) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = std::min(1.0, std::exp(1.0 - r / c));
  return bp * std::exp(log_sum / static_cast<double>(max_order));
}

// --- report ------------------------------------------------------------------

struct TaskResult {
  std::string task_id;
  bool passed_hidden = false;
  std::optional<std::int64_t> edit_distance;
  std::optional<double> bleu;
  std::int64_t wall_ms = 0;
  std::int64_t llm_calls = 0;
  std::int64_t tokens = 0;
  /// Set when solving this task failed; the run carried on.
  std::string error;
};

struct RunAggregate {
  std::optional<double> pass_at_1;
  std::optional<double> mean_edit_distance;
  std::optional<double> mean_bleu;
  double total_runtime_s = 0.0;
};

struct RunReport {
  std::vector<TaskResult> per_task;
  double total_runtime_s = 0.0;

  /// Arithmetic means over per_task; a metric is absent when no task has it.
  RunAggregate aggregate() const {
    RunAggregate a;
    a.total_runtime_s = total_runtime_s;
    if (per_task.empty()) return a;
    double passed = 0, ed = 0, bl = 0;
    std::size_t n_ed = 0, n_bl = 0;
    for (const auto& t : per_task) {
      passed += t.passed_hidden ? 1 : 0;
      if (t.edit_distance) {
        ed += static_cast<double>(*t.edit_distance);
        ++n_ed;
      }
      if (t.bleu) {
        bl += *t.bleu;
        ++n_bl;
      }
    }
    a.pass_at_1 = passed / static_cast<double>(per_task.size());
    if (n_ed) a.mean_edit_distance = ed / static_cast<double>(n_ed);
    if (n_bl) a.mean_bleu = bl / static_cast<double>(n_bl);
    return a;
  }
};

inline std::string render_report(const RunReport& report, bool mask_timings = false) {
  auto opt = [](const auto& v) -> nlohmann::ordered_json {
    if (v) return *v;
    return nullptr;
  };
  std::ostringstream out;
  for (const auto& t : report.per_task) {
    nlohmann::ordered_json j;
    j["type"] = "task";
    j["task_id"] = t.task_id;
    j["passed_hidden"] = t.passed_hidden;
    j["edit_distance"] = opt(t.edit_distance);
    j["bleu"] = opt(t.bleu);
    j["wall_ms"] = mask_timings ? 0 : t.wall_ms;
    j["llm_calls"] = t.llm_calls;
    j["tokens"] = t.tokens;
    if (!t.error.empty()) j["error"] = t.error;
    out << j.dump() << '\n';
  }
  const auto a = report.aggregate();
  nlohmann::ordered_json j;
  j["type"] = "aggregate";
  j["tasks"] = report.per_task.size();
  j["pass_at_1"] = opt(a.pass_at_1);
  j["mean_edit_distance"] = opt(a.mean_edit_distance);
  j["mean_bleu"] = opt(a.mean_bleu);
  j["total_runtime_s"] = mask_timings ? 0.0 : a.total_runtime_s;
  out << j.dump() << '\n';
  return out.str();
}

inline void emit_report(const RunReport& report, const std::filesystem::path& path, bool mask_timings = false) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << render_report(report, mask_timings);
  if (!out) throw IoError("failed writing report " + path.string());
}

// --- finals on disk ----------------------------------------------------------

/// File name used for a task's final program ("HumanEval/3" -> "HumanEval_3.py").
inline std::string finals_filename(const std::string& task_id) {
  std::string name;
  for (char c : task_id) name.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return name + ".py";
}

inline void write_final(const std::filesystem::path& dir, const std::string& task_id, const std::string& code) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / finals_filename(task_id), std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write final program for " + task_id);
  out << code;
}

/// Reads one final per record. Missing or unreadable files are reported
/// through `warn` and left out of the map.
inline std::map<std::string, std::string> load_finals(const std::filesystem::path& dir,
                                                      const std::vector<DatasetRecord>& records,
                                                      const std::function<void(const std::string&)>& warn = {}) {
  std::map<std::string, std::string> finals;
  for (const auto& r : records) {
    const auto path = dir / finals_filename(r.task.task_id);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      if (warn) warn("missing final for " + r.task.task_id + " (" + path.string() + ")");
      continue;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    finals[r.task.task_id] = ss.str();
  }
  return finals;
}

// --- scoring and benchmark runs ----------------------------------------------

inline TaskResult score_task(const DatasetRecord& r, const std::optional<std::string>& final_code, CodeExecutor& exec) {
  TaskResult t;
  t.task_id = r.task.task_id;
  t.passed_hidden = passes_hidden_tests(r, final_code, exec);
  if (r.reference_solution) {
    const std::string& code = final_code ? *final_code : std::string();
    t.edit_distance = edit_distance(code, *r.reference_solution);
    t.bleu = bleu(code, *r.reference_solution);
  }
  return t;
}

/// Metrics for existing finals; no LLM traffic.
inline RunReport score_finals(const std::vector<DatasetRecord>& records, const std::map<std::string, std::string>& finals,
                              CodeExecutor& exec) {
  RunReport report;
  const auto started = std::chrono::steady_clock::now();
  for (const auto& r : records) {
    auto it = finals.find(r.task.task_id);
    report.per_task.push_back(score_task(r, it == finals.end() ? std::nullopt : std::optional(it->second), exec));
  }
  report.total_runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

struct BenchResult {
  RunReport report;
  std::vector<std::optional<TaskRunRecord>> records;
};

/// Solves and scores every record with a bounded worker pool. A task whose
/// solve fails is recorded with its error; AuthError and SandboxUnavailable
/// abort the run.
inline BenchResult run_benchmark(const std::vector<DatasetRecord>& records, const RunConfig& cfg, Gateway& gateway,
                                 CodeExecutor& exec, const LlmSettings& settings, int jobs = 1) {
  BenchResult out;
  out.report.per_task.resize(records.size());
  out.records.resize(records.size());
  const auto started = std::chrono::steady_clock::now();

  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      {
        std::lock_guard lock(fatal_mu);
        if (fatal) return;
      }
      const auto& r = records[i];
      try {
        std::optional<std::string> final_code;
        TaskResult result;
        std::string error;
        try {
          auto rec = solve_task(r.task, cfg, gateway, exec, settings);
          if (rec.status == RunStatus::Starved) error = "pipeline starved";
          final_code = rec.final_code;
          out.records[i] = std::move(rec);
        } catch (const AuthError&) {
          throw;
        } catch (const SandboxUnavailable&) {
          throw;
        } catch (const Error& ex) {
          error = ex.what();
        }
        result = score_task(r, final_code, exec);
        result.error = error;
        if (out.records[i]) {
          result.wall_ms = out.records[i]->wall_ms;
          result.llm_calls = out.records[i]->counters.llm_calls;
          result.tokens = out.records[i]->tokens;
        }
        out.report.per_task[i] = std::move(result);
      } catch (...) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
    }
  };
  if (jobs <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < jobs; ++k) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);
  out.report.total_runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

}  // namespace codecor
