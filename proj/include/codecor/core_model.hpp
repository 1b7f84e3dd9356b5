#pragma once

// Shared domain types for the generate / prune / execute / repair pipeline.
// Everything here is a plain value type; no I/O happens in this header.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "codecor/detail/text.hpp"

namespace codecor {

enum class SourceDataset { HumanEval, HumanEvalET, MBPP, MBPPET, Custom };

inline bool is_humaneval_family(SourceDataset d) {
  return d == SourceDataset::HumanEval || d == SourceDataset::HumanEvalET;
}

/// One programming problem. `hidden_tests` are dataset-provided programs used
/// only for final scoring; no agent prompt may ever render them.
struct Task {
  std::string task_id;
  std::string description;
  std::string entry_point;
  std::vector<std::string> hidden_tests;
  SourceDataset source_dataset = SourceDataset::Custom;

  bool operator==(const Task&) const = default;
};

/// Four binary quality judgments attached to a plan or a piece of repair
/// advice, in the fixed order clarity, relevance, conciseness, context.
struct ScoreVector {
  bool clarity = false;
  bool relevance = false;
  bool conciseness = false;
  bool context = false;

  constexpr bool accepted() const noexcept { return clarity && relevance && conciseness && context; }
  bool operator==(const ScoreVector&) const = default;
};

constexpr bool score_vector_accepted(const ScoreVector& v) noexcept { return v.accepted(); }

/// A chain-of-thought plan. `score` is empty while the plan is unscored.
struct CotPrompt {
  std::string text;
  std::optional<ScoreVector> score;
  std::size_t origin_index = 0;

  bool accepted() const noexcept { return score && score->accepted(); }
  bool operator==(const CotPrompt&) const = default;
};

enum class TestClassification { Valid, EmptyInput, IncompleteFormat, Invalid };

struct GeneratedTestCase {
  std::string id;
  std::string assertion_text;
  std::optional<TestClassification> classification;

  bool operator==(const GeneratedTestCase&) const = default;
};

/// Stable identity of an assertion: hash of its whitespace-normalized text.
inline std::string test_case_id(std::string_view assertion_text) {
  return "t" + detail::digest(detail::normalize_ws(assertion_text));
}

inline GeneratedTestCase make_test_case(std::string assertion_text) {
  GeneratedTestCase tc;
  tc.id = test_case_id(assertion_text);
  tc.assertion_text = std::move(assertion_text);
  return tc;
}

enum class SyntaxState { Unknown, Ok, Failed };

enum class Verdict { Pass, Fail, Error, Timeout };

struct CaseResult {
  std::string test_id;
  Verdict verdict = Verdict::Error;
  std::string message;
  std::int64_t duration_ms = 0;

  bool operator==(const CaseResult&) const = default;
};

/// Per-case verdicts of one execution. `passed_count` and `failed_set` are
/// derived from `per_case`, so they cannot drift out of sync with it.
struct ExecutionReport {
  std::vector<CaseResult> per_case;

  std::size_t passed_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(per_case.begin(), per_case.end(),
                                                  [](const CaseResult& c) { return c.verdict == Verdict::Pass; }));
  }

  std::set<std::string> failed_set() const {
    std::set<std::string> out;
    for (const auto& c : per_case)
      if (c.verdict != Verdict::Pass) out.insert(c.test_id);
    return out;
  }

  bool all_passed() const noexcept { return passed_count() == per_case.size(); }

  bool operator==(const ExecutionReport&) const = default;
};

struct CodeSnippet {
  std::string source;
  std::size_t origin_index = 0;
  std::size_t repair_round = 0;
  SyntaxState syntax_ok = SyntaxState::Unknown;
  std::optional<ExecutionReport> last_report;

  bool operator==(const CodeSnippet&) const = default;
};

/// Outcome of parsing (not executing) a program. `line` is 1-based, 0 if unknown.
struct SyntaxCheckResult {
  bool ok = true;
  std::string message;
  int line = 0;

  bool operator==(const SyntaxCheckResult&) const = default;
};

struct RepairAdvice {
  std::string text;
  std::optional<ScoreVector> score;
  bool is_fallback = false;

  bool accepted() const noexcept { return score && score->accepted(); }
  bool operator==(const RepairAdvice&) const = default;
};

/// The text that stands in for pruned repair advice: every non-passing case's
/// assertion followed by its error message, in report order.
inline std::string failed_case_digest(const ExecutionReport& report, const std::vector<GeneratedTestCase>& tests) {
  std::string out;
  for (const auto& c : report.per_case) {
    if (c.verdict == Verdict::Pass) continue;
    auto it = std::find_if(tests.begin(), tests.end(), [&](const GeneratedTestCase& t) { return t.id == c.test_id; });
    if (!out.empty()) out += '\n';
    out += it != tests.end() ? it->assertion_text : c.test_id;
    if (!c.message.empty()) {
      out += '\n';
      out += c.message;
    }
  }
  return out;
}

struct RankedEntry {
  CodeSnippet snippet;
  ExecutionReport report;

  bool operator==(const RankedEntry&) const = default;
};

/// Strict weak order: more passed cases first, then fewer repair rounds, then
/// lower origin index.
inline bool ranks_before(const RankedEntry& a, const RankedEntry& b) noexcept {
  const auto pa = a.report.passed_count();
  const auto pb = b.report.passed_count();
  if (pa != pb) return pa > pb;
  if (a.snippet.repair_round != b.snippet.repair_round) return a.snippet.repair_round < b.snippet.repair_round;
  return a.snippet.origin_index < b.snippet.origin_index;
}

/// Candidate store kept in rank order at all times. Equal-key entries keep
/// their insertion order.
class RankedCodeSet {
 public:
  const std::vector<RankedEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const RankedEntry& front() const { return entries_.front(); }

  void insert(CodeSnippet snippet, ExecutionReport report) {
    RankedEntry entry{std::move(snippet), std::move(report)};
    auto pos = std::upper_bound(entries_.begin(), entries_.end(), entry, ranks_before);
    entries_.insert(pos, std::move(entry));
  }

  bool operator==(const RankedCodeSet&) const = default;

 private:
  std::vector<RankedEntry> entries_;
};

inline RankedCodeSet ranked_insert(RankedCodeSet set, CodeSnippet snippet, ExecutionReport report) {
  set.insert(std::move(snippet), std::move(report));
  return set;
}

// --- names used in logs, prompts and serialized reports ----------------------

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Error: return "error";
    case Verdict::Timeout: return "timeout";
  }
  return "error";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "pass") return Verdict::Pass;
  if (s == "fail") return Verdict::Fail;
  if (s == "error") return Verdict::Error;
  if (s == "timeout") return Verdict::Timeout;
  return std::nullopt;
}

inline std::string_view to_string(SyntaxState s) {
  switch (s) {
    case SyntaxState::Unknown: return "unknown";
    case SyntaxState::Ok: return "ok";
    case SyntaxState::Failed: return "failed";
  }
  return "unknown";
}

inline std::string_view to_string(TestClassification c) {
  switch (c) {
    case TestClassification::Valid: return "valid";
    case TestClassification::EmptyInput: return "empty_input";
    case TestClassification::IncompleteFormat: return "incomplete_format";
    case TestClassification::Invalid: return "invalid";
  }
  return "invalid";
}

inline std::string_view to_string(SourceDataset d) {
  switch (d) {
    case SourceDataset::HumanEval: return "humaneval";
    case SourceDataset::HumanEvalET: return "humaneval-et";
    case SourceDataset::MBPP: return "mbpp";
    case SourceDataset::MBPPET: return "mbpp-et";
    case SourceDataset::Custom: return "custom";
  }
  return "custom";
}

inline std::optional<SourceDataset> parse_dataset_kind(std::string_view s) {
  for (auto d : {SourceDataset::HumanEval, SourceDataset::HumanEvalET, SourceDataset::MBPP, SourceDataset::MBPPET,
                 SourceDataset::Custom})
    if (to_string(d) == s) return d;
  return std::nullopt;
}

}  // namespace codecor
