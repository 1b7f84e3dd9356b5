#pragma once

// The four agents (prompt, test, coding, repair). Each one is a prompt
// template plus a response parser; all traffic goes through AgentChannel,
// which forwards to the Gateway and keeps a per-task transcript.

#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "codecor/core_model.hpp"
#include "codecor/detail/text.hpp"
#include "codecor/errors.hpp"
#include "codecor/llm_gateway.hpp"

namespace codecor {

struct AgentConfig {
  int n_prompts = 3;
  int n_tests = 10;
  int n_snippets = 5;
  int parse_retry = 1;

  void validate() const {
    if (n_prompts < 1 || n_tests < 1 || n_snippets < 1) throw ConfigError("agent pool sizes must be >= 1");
    if (parse_retry < 0) throw ConfigError("parse_retry must be >= 0");
  }
};

struct LlmSettings {
  std::string model = "gpt-3.5-turbo";
  double generation_temperature = 0.8;
  double scoring_temperature = 0.0;
  int max_tokens = 1024;
};

/// One agent call as it appears in a run record.
struct TranscriptRecord {
  std::string agent;
  std::string request_digest;
  std::string response_digest;

  bool operator==(const TranscriptRecord&) const = default;
};

/// Per-task view of the gateway. Not shared between tasks.
class AgentChannel {
 public:
  AgentChannel(Gateway& gateway, LlmSettings settings) : gateway_(gateway), settings_(std::move(settings)) {}

  std::vector<std::string> ask(std::string_view agent, std::string system, std::string user, double temperature,
                               int n) {
    ChatRequest req;
    req.model = settings_.model;
    req.messages = {{Role::System, std::move(system)}, {Role::User, std::move(user)}};
    req.temperature = temperature;
    req.n = n;
    req.max_tokens = settings_.max_tokens;
    auto res = gateway_.complete(req);
    ++calls_;
    prompt_tokens_ += res.prompt_tokens;
    completion_tokens_ += res.completion_tokens;
    rendered_.push_back(req.outgoing_text());
    log_.push_back({std::string(agent), detail::digest(req.outgoing_text()),
                    detail::digest(detail::join(res.completions, "\x1e"))});
    return std::move(res.completions);
  }

  const LlmSettings& settings() const noexcept { return settings_; }
  const std::vector<TranscriptRecord>& log() const noexcept { return log_; }
  /// Full outgoing text of every request, in call order.
  const std::vector<std::string>& rendered_requests() const noexcept { return rendered_; }
  std::int64_t calls() const noexcept { return calls_; }
  std::int64_t tokens() const noexcept { return prompt_tokens_ + completion_tokens_; }

 private:
  Gateway& gateway_;
  LlmSettings settings_;
  std::vector<TranscriptRecord> log_;
  std::vector<std::string> rendered_;
  std::int64_t calls_ = 0;
  std::int64_t prompt_tokens_ = 0;
  std::int64_t completion_tokens_ = 0;
};

namespace templates {

// Template revision 1. Placeholders are {{name}}; see render().

inline constexpr std::string_view kPromptAgentSystem =
    "You are the Prompt Agent of a code generation team. You turn a programming task into a clear "
    "chain-of-thought plan that a coding agent and a test agent can follow.";

inline constexpr std::string_view kPromptGenerate =
    "Task description:\n{{task}}\n\n"
    "Write a step-by-step plan for solving this task. Number every step (1., 2., 3., ...), one step per "
    "line. Do not write any code.";

inline constexpr std::string_view kScore =
    "Evaluate the following {{kind}} for the task below.\n\n"
    "Task description:\n{{task}}\n\n"
    "{{heading}}:\n{{item}}\n\n"
    "Judge four criteria, each 1 (met) or 0 (not met):\n"
    "- Clarity: whether the {{kind}} is clear or not.\n"
    "- Relevance: whether it is directly related to the task or not.\n"
    "- Conciseness: whether it is concise and not overly complex.\n"
    "- Context: whether enough contextual information is provided.\n\n"
    "Reply with the four scores as one bracketed list in the order [clarity, relevance, conciseness, "
    "context], for example [1, 1, 1, 1].";

inline constexpr std::string_view kTestAgentSystem =
    "You are the Test Agent of a code generation team. You write executable test cases that check "
    "whether code solves a task.";

inline constexpr std::string_view kTestGenerate =
    "Task description:\n{{task}}\n\n"
    "Plan:\n{{plan}}\n\n"
    "Write {{count}} test cases for the function `{{entry_point}}`. Each test case must be a single-line "
    "Python assert statement that calls `{{entry_point}}` with concrete inputs and compares the result "
    "with the expected output. Write one assert per line and nothing else.";

inline constexpr std::string_view kTestClassify =
    "Classify the following test case for the function `{{entry_point}}`.\n\n"
    "Task description:\n{{task}}\n\n"
    "Test case:\n{{test}}\n\n"
    "Labels:\n"
    "- VALID: executable, with realistic inputs and a correct expected value.\n"
    "- EMPTY_INPUT: no data is provided to the function.\n"
    "- INCOMPLETE_FORMAT: lacks components necessary for execution.\n"
    "- INVALID: expected data types are wrong or values fall outside reasonable ranges.\n\n"
    "Reply with exactly one label.";

inline constexpr std::string_view kCodingAgentSystem =
    "You are the Coding Agent of a code generation team. You write correct, self-contained Python code.";

inline constexpr std::string_view kCodeGenerate =
    "Task description:\n{{task}}\n\n"
    "Plan:\n{{plan}}\n\n"
    "Implement the function `{{entry_point}}` in Python following the plan. Return the complete program "
    "in a single ```python fenced code block.";

inline constexpr std::string_view kCodeRepair =
    "Task description:\n{{task}}\n\n"
    "The following code fails some test cases:\n```python\n{{code}}\n```\n\n"
    "{{heading}}:\n{{feedback}}\n\n"
    "Rewrite the code so that it passes. Keep the function name `{{entry_point}}`. Return the complete "
    "program in a single ```python fenced code block.";

inline constexpr std::string_view kRepairAgentSystem =
    "You are the Repair Agent of a code generation team. You diagnose failing code and give one focused "
    "piece of repair advice.";

inline constexpr std::string_view kRepairAdvise =
    "Task description:\n{{task}}\n\n"
    "Code:\n```python\n{{code}}\n```\n\n"
    "Failed test cases and error messages:\n{{failures}}\n\n"
    "Give a single piece of repair advice explaining what is wrong and how to fix it. Do not write the "
    "corrected code.";

/// Single-pass substitution; substituted values are never re-scanned.
inline std::string render(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& vars) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const auto open = tmpl.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) throw PreconditionViolation("unterminated placeholder in template");
    out.append(tmpl.substr(i, open - i));
    const auto name = tmpl.substr(open + 2, close - open - 2);
    const auto it = vars.find(name);
    if (it == vars.end()) throw PreconditionViolation("template placeholder without value: " + std::string(name));
    out += it->second;
    i = close + 2;
  }
  return out;
}

}  // namespace templates

// --- parsers -----------------------------------------------------------------

/// A plan is usable iff at least one line is an enumerated step ("1.", "2)",
/// "Step 3:").
inline std::optional<std::string> parse_plan(std::string_view completion) {
  static const std::regex step(R"(^\s*(?:[Ss]tep\s*)?\d+\s*[.):])");
  const auto text = std::string(detail::trim(completion));
  if (text.empty()) return std::nullopt;
  for (const auto& line : detail::split_lines(text))
    if (std::regex_search(line, step)) return text;
  return std::nullopt;
}

/// Every line that starts with the `assert` keyword after trimming.
inline std::vector<std::string> parse_assertions(std::string_view completion) {
  std::vector<std::string> out;
  for (const auto& line : detail::split_lines(completion)) {
    const auto t = detail::trim(line);
    if (detail::starts_with_word(t, "assert")) out.emplace_back(t);
  }
  return out;
}

/// First bracketed list of exactly four 0/1 values, mapped positionally to
/// (clarity, relevance, conciseness, context).
inline ScoreVector parse_score_vector(std::string_view text) {
  static const std::regex four(R"(\[\s*([01])\s*,\s*([01])\s*,\s*([01])\s*,\s*([01])\s*\])");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, four))
    throw MalformedScore("no [x, x, x, x] score vector in: " + std::string(text.substr(0, 120)));
  return ScoreVector{m[1] == "1", m[2] == "1", m[3] == "1", m[4] == "1"};
}

/// First classification label mentioned in the completion, if any.
inline std::optional<TestClassification> parse_classification(std::string_view text) {
  std::string upper;
  upper.reserve(text.size());
  for (char c : text) upper.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : ' ');
  const auto words = detail::split_ws(upper);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    const std::string next = i + 1 < words.size() ? words[i + 1] : "";
    if (w == "VALID") return TestClassification::Valid;
    if (w == "INVALID") return TestClassification::Invalid;
    if (w == "EMPTY" && next == "INPUT") return TestClassification::EmptyInput;
    if (w == "INCOMPLETE" && next == "FORMAT") return TestClassification::IncompleteFormat;
  }
  return std::nullopt;
}

// --- agent operations --------------------------------------------------------

inline constexpr std::string_view kPlanSeparator = "\n\n---\n\n";

/// The text that conditions test and code generation: every selected plan,
/// or the bare task description when none survived.
inline std::string plan_digest(const std::vector<CotPrompt>& selected, const Task& task) {
  if (selected.empty()) return task.description;
  std::vector<std::string> texts;
  for (const auto& p : selected) texts.push_back(p.text);
  return detail::join(texts, kPlanSeparator);
}

namespace detail {

inline std::string entry_or_placeholder(const Task& task) {
  return task.entry_point.empty() ? std::string("solution") : task.entry_point;
}

/// Runs one generation request, re-asking up to `parse_retry` times while
/// nothing in the completions parses.
template <class Parse>
auto generate_with_retry(AgentChannel& ch, std::string_view agent, std::string_view system, const std::string& user,
                         int n, int parse_retry, Parse parse) {
  for (int attempt = 0; attempt <= parse_retry; ++attempt) {
    auto completions = ch.ask(agent, std::string(system), user, ch.settings().generation_temperature, n);
    auto parsed = parse(completions);
    if (!parsed.empty()) return parsed;
  }
  throw GenerationEmpty(std::string(agent) + ": no usable completion after " + std::to_string(parse_retry + 1) +
                        " attempt(s)");
}

}  // namespace detail

inline std::vector<CotPrompt> prompt_agent_generate(AgentChannel& ch, const Task& task, const AgentConfig& cfg) {
  if (detail::trim(task.description).empty()) throw PreconditionViolation("task description is empty");
  const auto user = templates::render(templates::kPromptGenerate, {{"task", task.description}});
  return detail::generate_with_retry(
      ch, "prompt_agent", templates::kPromptAgentSystem, user, cfg.n_prompts, cfg.parse_retry,
      [&](const std::vector<std::string>& completions) {
        std::vector<CotPrompt> out;
        for (std::size_t i = 0; i < completions.size() && out.size() < static_cast<std::size_t>(cfg.n_prompts); ++i)
          if (auto plan = parse_plan(completions[i])) out.push_back({std::move(*plan), std::nullopt, i});
        return out;
      });
}

/// Raw scoring completion for one plan; parsed by the pruning gate.
inline std::string prompt_agent_score(AgentChannel& ch, const Task& task, const CotPrompt& prompt) {
  const auto user = templates::render(
      templates::kScore, {{"kind", "chain-of-thought prompt"}, {"heading", "Prompt"}, {"task", task.description}, {"item", prompt.text}});
  auto out = ch.ask("prompt_agent", std::string(templates::kPromptAgentSystem), user, ch.settings().scoring_temperature, 1);
  return out.empty() ? std::string() : out.front();
}

inline std::vector<GeneratedTestCase> test_agent_generate(AgentChannel& ch, const Task& task, const std::string& plan,
                                                          const AgentConfig& cfg) {
  if (detail::trim(plan).empty()) throw PreconditionViolation("test generation needs a plan digest");
  const auto user = templates::render(templates::kTestGenerate, {{"task", task.description},
                                                                 {"plan", plan},
                                                                 {"count", std::to_string(cfg.n_tests)},
                                                                 {"entry_point", detail::entry_or_placeholder(task)}});
  return detail::generate_with_retry(
      ch, "test_agent", templates::kTestAgentSystem, user, 1, cfg.parse_retry,
      [&](const std::vector<std::string>& completions) {
        std::vector<GeneratedTestCase> out;
        std::set<std::string> seen;
        for (const auto& c : completions)
          for (auto& a : parse_assertions(c)) {
            if (out.size() >= static_cast<std::size_t>(cfg.n_tests)) break;
            auto tc = make_test_case(std::move(a));
            if (seen.insert(tc.id).second) out.push_back(std::move(tc));
          }
        return out;
      });
}

/// Raw classification completion for one test case.
inline std::string test_agent_classify(AgentChannel& ch, const Task& task, const GeneratedTestCase& tc) {
  const auto user = templates::render(templates::kTestClassify, {{"entry_point", detail::entry_or_placeholder(task)},
                                                                 {"task", task.description},
                                                                 {"test", tc.assertion_text}});
  auto out = ch.ask("test_agent", std::string(templates::kTestAgentSystem), user, ch.settings().scoring_temperature, 1);
  return out.empty() ? std::string() : out.front();
}

inline std::vector<CodeSnippet> coding_agent_generate(AgentChannel& ch, const Task& task, const std::string& plan,
                                                      const AgentConfig& cfg) {
  if (detail::trim(plan).empty()) throw PreconditionViolation("code generation needs a plan digest");
  const auto user = templates::render(
      templates::kCodeGenerate, {{"task", task.description}, {"plan", plan}, {"entry_point", detail::entry_or_placeholder(task)}});
  return detail::generate_with_retry(
      ch, "coding_agent", templates::kCodingAgentSystem, user, cfg.n_snippets, cfg.parse_retry,
      [&](const std::vector<std::string>& completions) {
        std::vector<CodeSnippet> out;
        for (std::size_t i = 0; i < completions.size() && out.size() < static_cast<std::size_t>(cfg.n_snippets); ++i) {
          auto source = codecor::detail::extract_first_fence(completions[i]);
          if (codecor::detail::trim(source).empty()) continue;
          CodeSnippet s;
          s.source = std::move(source);
          s.origin_index = i;
          out.push_back(std::move(s));
        }
        return out;
      });
}

inline RepairAdvice repair_agent_advise(AgentChannel& ch, const CodeSnippet& snippet, const ExecutionReport& report,
                                        const Task& task, const std::vector<GeneratedTestCase>& tests,
                                        int parse_retry = 0) {
  if (report.failed_set().empty()) throw PreconditionViolation("repair advice requested for a snippet with no failures");
  const auto user = templates::render(templates::kRepairAdvise, {{"task", task.description},
                                                                 {"code", snippet.source},
                                                                 {"failures", failed_case_digest(report, tests)}});
  auto texts = detail::generate_with_retry(
      ch, "repair_agent", templates::kRepairAgentSystem, user, 1, parse_retry,
      [](const std::vector<std::string>& completions) {
        std::vector<std::string> out;
        for (const auto& c : completions) {
          auto t = codecor::detail::trim(c);
          if (!t.empty()) {
            out.emplace_back(t);
            break;
          }
        }
        return out;
      });
  return RepairAdvice{std::move(texts.front()), std::nullopt, false};
}

/// Raw scoring completion for one piece of repair advice.
inline std::string repair_agent_score(AgentChannel& ch, const Task& task, const RepairAdvice& advice) {
  const auto user = templates::render(
      templates::kScore, {{"kind", "repair advice"}, {"heading", "Repair advice"}, {"task", task.description}, {"item", advice.text}});
  auto out = ch.ask("repair_agent", std::string(templates::kRepairAgentSystem), user, ch.settings().scoring_temperature, 1);
  return out.empty() ? std::string() : out.front();
}

inline CodeSnippet coding_agent_repair(AgentChannel& ch, const CodeSnippet& snippet, const RepairAdvice& advice,
                                       const Task& task, std::size_t max_repair_rounds, int parse_retry = 0) {
  if (!advice.accepted() && !advice.is_fallback)
    throw PreconditionViolation("repair needs accepted advice or the failed-case fallback");
  if (snippet.repair_round >= max_repair_rounds)
    throw PreconditionViolation("snippet already at the repair round bound");
  const auto user = templates::render(templates::kCodeRepair,
                                      {{"task", task.description},
                                       {"code", snippet.source},
                                       {"heading", advice.is_fallback ? "Failed test cases" : "Repair advice"},
                                       {"feedback", advice.text},
                                       {"entry_point", detail::entry_or_placeholder(task)}});
  auto sources = detail::generate_with_retry(
      ch, "coding_agent", templates::kCodingAgentSystem, user, 1, parse_retry,
      [](const std::vector<std::string>& completions) {
        std::vector<std::string> out;
        for (const auto& c : completions) {
          auto src = codecor::detail::extract_first_fence(c);
          if (!codecor::detail::trim(src).empty()) {
            out.push_back(std::move(src));
            break;
          }
        }
        return out;
      });
  CodeSnippet repaired;
  repaired.source = std::move(sources.front());
  repaired.origin_index = snippet.origin_index;
  repaired.repair_round = snippet.repair_round + 1;
  return repaired;
}

}  // namespace codecor
