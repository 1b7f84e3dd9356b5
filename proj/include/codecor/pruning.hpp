#pragma once

// Quality gates between pipeline phases. Plans and repair advice are scored;
// test cases go through local static checks and then an LLM classifier; code
// snippets must parse.

#include <algorithm>
#include <cctype>
#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codecor/agents.hpp"
#include "codecor/core_model.hpp"
#include "codecor/detail/text.hpp"
#include "codecor/errors.hpp"

namespace codecor {

enum class PruneReason { ScoreGate, EmptyInput, IncompleteFormat, Invalid, SyntaxError, MalformedScore };

inline std::string_view to_string(PruneReason r) {
  switch (r) {
    case PruneReason::ScoreGate: return "score_gate";
    case PruneReason::EmptyInput: return "empty_input";
    case PruneReason::IncompleteFormat: return "incomplete_format";
    case PruneReason::Invalid: return "invalid";
    case PruneReason::SyntaxError: return "syntax_error";
    case PruneReason::MalformedScore: return "malformed_score";
  }
  return "invalid";
}

template <class T>
struct PruneOutcome {
  std::vector<T> kept;
  std::vector<std::pair<T, PruneReason>> pruned;
};

/// Returns a raw completion to be parsed by the gate.
template <class T>
using RawScorer = std::function<std::string(const T&)>;

using SyntaxChecker = std::function<SyntaxCheckResult(const std::string&)>;

namespace detail {

/// Parses `raw()` as a score vector, asking again up to `parse_retry` times.
inline std::optional<ScoreVector> score_with_retry(const std::function<std::string()>& raw, int parse_retry) {
  for (int attempt = 0; attempt <= parse_retry; ++attempt) {
    try {
      return parse_score_vector(raw());
    } catch (const MalformedScore&) {
    }
  }
  return std::nullopt;
}

}  // namespace detail

inline PruneOutcome<CotPrompt> prune_prompts(std::vector<CotPrompt> pool, const RawScorer<CotPrompt>& scorer,
                                             int parse_retry = 1) {
  PruneOutcome<CotPrompt> out;
  for (auto& p : pool) {
    if (p.score) throw PreconditionViolation("prompt pool must be unscored");
    auto score = detail::score_with_retry([&] { return scorer(p); }, parse_retry);
    if (!score) {
      out.pruned.emplace_back(std::move(p), PruneReason::MalformedScore);
      continue;
    }
    p.score = *score;
    if (score->accepted())
      out.kept.push_back(std::move(p));
    else
      out.pruned.emplace_back(std::move(p), PruneReason::ScoreGate);
  }
  return out;
}

// --- test cases --------------------------------------------------------------

namespace detail {

struct ScannedExpr {
  bool balanced = false;
  /// Source with every string literal body replaced by spaces.
  std::string blanked;
};

/// Bracket and quote balance over a single Python line.
inline ScannedExpr scan_python_line(std::string_view s) {
  ScannedExpr r;
  r.blanked.reserve(s.size());
  std::string stack;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '#') break;
    if (c == '\'' || c == '"') {
      const bool triple = s.substr(i, 3) == std::string(3, c);
      const std::size_t qlen = triple ? 3 : 1;
      r.blanked.append(qlen, c);
      i += qlen;
      bool closed = false;
      while (i < s.size()) {
        if (s[i] == '\\') {
          r.blanked.append(std::min<std::size_t>(2, s.size() - i), ' ');
          i += 2;
          continue;
        }
        if (triple ? s.substr(i, 3) == std::string(3, c) : s[i] == c) {
          r.blanked.append(qlen, c);
          i += qlen;
          closed = true;
          break;
        }
        r.blanked.push_back(' ');
        ++i;
      }
      if (!closed) return r;
      continue;
    }
    if (c == '(' || c == '[' || c == '{') stack.push_back(c);
    if (c == ')' || c == ']' || c == '}') {
      const char want = c == ')' ? '(' : c == ']' ? '[' : '{';
      if (stack.empty() || stack.back() != want) return r;
      stack.pop_back();
    }
    r.blanked.push_back(c);
    ++i;
  }
  r.balanced = stack.empty();
  return r;
}

/// Position of the first top-level comma, or npos.
inline std::size_t top_level_comma(std::string_view blanked) {
  int depth = 0;
  for (std::size_t i = 0; i < blanked.size(); ++i) {
    const char c = blanked[i];
    if (c == '(' || c == '[' || c == '{') ++depth;
    if (c == ')' || c == ']' || c == '}') --depth;
    if (c == ',' && depth == 0) return i;
  }
  return std::string_view::npos;
}

inline bool ends_with_operator(std::string_view expr) {
  expr = trim(expr);
  if (expr.empty()) return true;
  static constexpr std::string_view kOps = "=<>!+-*/%&|^~.,:@";
  if (kOps.find(expr.back()) != std::string_view::npos) return true;
  for (std::string_view w : {"and", "or", "not", "in", "is"}) {
    if (expr.size() >= w.size() && expr.substr(expr.size() - w.size()) == w) {
      if (expr.size() == w.size()) return true;
      const char before = expr[expr.size() - w.size() - 1];
      if (!(std::isalnum(static_cast<unsigned char>(before)) || before == '_')) return true;
    }
  }
  return false;
}

/// A bare `=` that is not part of ==, !=, <=, >=, or a keyword argument.
inline bool has_bare_assignment(std::string_view blanked) {
  int depth = 0;
  for (std::size_t i = 0; i < blanked.size(); ++i) {
    const char c = blanked[i];
    if (c == '(' || c == '[' || c == '{') ++depth;
    if (c == ')' || c == ']' || c == '}') --depth;
    if (c != '=' || depth > 0) continue;
    const char prev = i > 0 ? blanked[i - 1] : ' ';
    const char next = i + 1 < blanked.size() ? blanked[i + 1] : ' ';
    if (next == '=') {
      ++i;
      continue;
    }
    if (prev == '=' || prev == '!' || prev == '<' || prev == '>' || prev == ':') continue;
    return true;
  }
  return false;
}

/// Argument-list bodies (blanked) of every call to `name`, or of every call to
/// any identifier when `name` is empty.
inline std::optional<std::vector<std::string>> call_arguments(std::string_view blanked, std::string_view name) {
  std::vector<std::string> args;
  bool any = false;
  std::size_t i = 0;
  while (i < blanked.size()) {
    if (!(std::isalpha(static_cast<unsigned char>(blanked[i])) || blanked[i] == '_')) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < blanked.size() && (std::isalnum(static_cast<unsigned char>(blanked[j])) || blanked[j] == '_')) ++j;
    const auto ident = blanked.substr(i, j - i);
    const bool method = i > 0 && blanked[i - 1] == '.';
    std::size_t k = j;
    while (k < blanked.size() && blanked[k] == ' ') ++k;
    const bool named = name.empty() ? ident != "assert" : ident == name;
    if (named && !method && k < blanked.size() && blanked[k] == '(') {
      int depth = 0;
      std::size_t end = k;
      for (; end < blanked.size(); ++end) {
        if (blanked[end] == '(' || blanked[end] == '[' || blanked[end] == '{') ++depth;
        if (blanked[end] == ')' || blanked[end] == ']' || blanked[end] == '}') {
          if (--depth == 0) break;
        }
      }
      any = true;
      args.emplace_back(trim(blanked.substr(k + 1, end - k - 1)));
    }
    i = j;
  }
  if (!any) return std::nullopt;
  return args;
}

/// Whether the task's embedded signature for `entry_point` takes no parameters.
inline bool signature_takes_no_args(const Task& task) {
  if (task.entry_point.empty()) return false;
  const std::regex sig("def\\s+" + task.entry_point + "\\s*\\(([^)]*)\\)");
  std::smatch m;
  if (!std::regex_search(task.description, m, sig)) return false;
  return trim(std::string_view(m[1].first, m[1].second)).empty();
}

}  // namespace detail

/// Offline checks that decide EmptyInput, IncompleteFormat and the
/// wrong-callee kind of Invalid without any LLM call.
inline TestClassification static_test_check(const GeneratedTestCase& tc, const Task& task) {
  const auto text = detail::trim(tc.assertion_text);
  if (!detail::starts_with_word(text, "assert")) return TestClassification::IncompleteFormat;
  if (text.find('\n') != std::string_view::npos) return TestClassification::IncompleteFormat;
  const auto body = detail::trim(text.substr(6));
  const auto scanned = detail::scan_python_line(body);
  if (!scanned.balanced) return TestClassification::IncompleteFormat;

  std::string_view expr = scanned.blanked;
  const auto comma = detail::top_level_comma(expr);
  if (comma != std::string_view::npos) {
    if (detail::trim(expr.substr(comma + 1)).empty()) return TestClassification::IncompleteFormat;
    expr = expr.substr(0, comma);
  }
  expr = detail::trim(expr);
  if (expr.empty() || detail::ends_with_operator(expr) || detail::has_bare_assignment(expr))
    return TestClassification::IncompleteFormat;

  const auto calls = detail::call_arguments(expr, task.entry_point);
  if (!calls) return TestClassification::Invalid;
  const bool all_empty = std::all_of(calls->begin(), calls->end(), [](const std::string& a) { return a.empty(); });
  if (all_empty && !detail::signature_takes_no_args(task)) return TestClassification::EmptyInput;
  return TestClassification::Valid;
}

inline PruneReason reason_for(TestClassification c) {
  switch (c) {
    case TestClassification::EmptyInput: return PruneReason::EmptyInput;
    case TestClassification::IncompleteFormat: return PruneReason::IncompleteFormat;
    default: return PruneReason::Invalid;
  }
}

inline PruneOutcome<GeneratedTestCase> prune_tests(std::vector<GeneratedTestCase> pool, const Task& task,
                                                   const RawScorer<GeneratedTestCase>& classifier, int parse_retry = 1) {
  PruneOutcome<GeneratedTestCase> out;
  for (auto& tc : pool) {
    if (tc.classification) throw PreconditionViolation("test pool must be unclassified");
    const auto local = static_test_check(tc, task);
    if (local != TestClassification::Valid) {
      tc.classification = local;
      out.pruned.emplace_back(std::move(tc), reason_for(local));
      continue;
    }
    std::optional<TestClassification> label;
    for (int attempt = 0; attempt <= parse_retry && !label; ++attempt) label = parse_classification(classifier(tc));
    if (!label) {
      out.pruned.emplace_back(std::move(tc), PruneReason::MalformedScore);
      continue;
    }
    tc.classification = *label;
    if (*label == TestClassification::Valid)
      out.kept.push_back(std::move(tc));
    else
      out.pruned.emplace_back(std::move(tc), reason_for(*label));
  }
  return out;
}

inline PruneOutcome<CodeSnippet> prune_code(std::vector<CodeSnippet> pool, const SyntaxChecker& check) {
  PruneOutcome<CodeSnippet> out;
  for (auto& s : pool) {
    if (s.syntax_ok != SyntaxState::Unknown) throw PreconditionViolation("code pool must be unchecked");
    const auto res = check(s.source);
    if (res.ok) {
      s.syntax_ok = SyntaxState::Ok;
      out.kept.push_back(std::move(s));
    } else {
      s.syntax_ok = SyntaxState::Failed;
      out.pruned.emplace_back(std::move(s), PruneReason::SyntaxError);
    }
  }
  return out;
}

/// Never returns nothing: either the scored advice (when accepted) or the
/// failed-case digest flagged as fallback.
inline RepairAdvice prune_repair_advice(RepairAdvice advice, const ExecutionReport& report,
                                        const std::vector<GeneratedTestCase>& tests,
                                        const RawScorer<RepairAdvice>& scorer, int parse_retry = 1) {
  if (advice.score || advice.is_fallback) throw PreconditionViolation("repair advice must be unscored");
  if (report.failed_set().empty()) throw PreconditionViolation("repair advice pruning needs a failing report");
  auto score = detail::score_with_retry([&] { return scorer(advice); }, parse_retry);
  if (score && score->accepted()) {
    advice.score = *score;
    return advice;
  }
  RepairAdvice fallback;
  fallback.text = failed_case_digest(report, tests);
  fallback.score = score;
  fallback.is_fallback = true;
  return fallback;
}

}  // namespace codecor
