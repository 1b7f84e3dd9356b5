#include <catch_amalgamated.hpp>

#include <sstream>

#include "codecor/agents.hpp"

using namespace codecor;

namespace {

std::shared_ptr<ScriptedBackend> scripted(std::vector<std::pair<std::string, std::vector<std::string>>> entries) {
  ScriptedTranscript t;
  for (auto& [m, c] : entries) t.entries.push_back({m, c});
  return std::make_shared<ScriptedBackend>(std::move(t));
}

Task task() {
  Task t;
  t.task_id = "demo/1";
  t.description = "def inc(x):\n    \"\"\"Return x + 1.\"\"\"\n";
  t.entry_point = "inc";
  t.hidden_tests = {"HIDDEN-SENTINEL assert inc(41) == 42"};
  return t;
}

}  // namespace

TEST_CASE("render substitutes each placeholder once") {
  CHECK(templates::render("a {{x}} b {{y}}", {{"x", "1"}, {"y", "{{x}}"}}) == "a 1 b {{x}}");
  CHECK_THROWS_AS(templates::render("{{missing}}", {}), PreconditionViolation);
  CHECK_THROWS_AS(templates::render("{{open", {{"open", ""}}), PreconditionViolation);
}

TEST_CASE("templates are deterministic and carry no unresolved placeholders") {
  const std::map<std::string, std::string, std::less<>> vars = {
      {"task", "T"}, {"plan", "P"}, {"count", "3"}, {"entry_point", "f"}, {"kind", "k"}, {"heading", "H"},
      {"item", "I"}, {"test", "assert f(1)"}, {"code", "C"}, {"feedback", "F"}, {"failures", "X"}};
  for (auto tmpl : {templates::kPromptGenerate, templates::kScore, templates::kTestGenerate, templates::kTestClassify,
                    templates::kCodeGenerate, templates::kCodeRepair, templates::kRepairAdvise}) {
    const auto a = templates::render(tmpl, vars);
    CHECK(a == templates::render(tmpl, vars));
    CHECK(a.find("{{") == std::string::npos);
  }
}

TEST_CASE("plan parser needs an enumerated step") {
  CHECK(parse_plan("1. a\n2. b").has_value());
  CHECK(parse_plan("Plan:\n  Step 1: read input").has_value());
  CHECK(parse_plan("3) last").has_value());
  CHECK_FALSE(parse_plan("just do it").has_value());
  CHECK_FALSE(parse_plan("   ").has_value());
  CHECK(*parse_plan("  1. a  \n") == "1. a");
}

TEST_CASE("assertion parser keeps assert lines only") {
  const auto a = parse_assertions("Here you go:\n  assert f(1) == 2\nassertion = 3\nassert(f(2) == 3)\n```\n");
  CHECK(a == std::vector<std::string>{"assert f(1) == 2", "assert(f(2) == 3)"});
}

TEST_CASE("score vector parser") {
  CHECK(parse_score_vector("[1, 1, 1, 1]").accepted());
  const auto v = parse_score_vector("Scores: [1,0, 1 ,1] overall fine");
  CHECK(v.clarity);
  CHECK_FALSE(v.relevance);
  CHECK(v.conciseness);
  CHECK(v.context);
  CHECK(parse_score_vector("first [0, 0, 0, 0] then [1, 1, 1, 1]") == ScoreVector{false, false, false, false});
  CHECK_THROWS_AS(parse_score_vector("[1, 1, 1]"), MalformedScore);
  CHECK_THROWS_AS(parse_score_vector("[1, 2, 1, 1]"), MalformedScore);
  CHECK_THROWS_AS(parse_score_vector("looks good"), MalformedScore);
}

TEST_CASE("classification parser") {
  CHECK(parse_classification("VALID") == TestClassification::Valid);
  CHECK(parse_classification("Label: invalid.") == TestClassification::Invalid);
  CHECK(parse_classification("EMPTY_INPUT") == TestClassification::EmptyInput);
  CHECK(parse_classification("incomplete format") == TestClassification::IncompleteFormat);
  CHECK_FALSE(parse_classification("no idea").has_value());
}

TEST_CASE("plan digest falls back to the task description") {
  const auto t = task();
  CHECK(plan_digest({}, t) == t.description);
  CHECK(plan_digest({{"1. a", std::nullopt, 0}, {"1. b", std::nullopt, 2}}, t) == "1. a\n\n---\n\n1. b");
}

TEST_CASE("prompt agent keeps parseable plans with their completion index") {
  auto backend = scripted({{"step-by-step plan", {"no steps here", "1. add one\n2. return", "Step 1: x"}}});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  const auto plans = prompt_agent_generate(ch, task(), {});
  REQUIRE(plans.size() == 2);
  CHECK(plans[0].origin_index == 1);
  CHECK(plans[1].origin_index == 2);
  CHECK_FALSE(plans[0].score.has_value());
  CHECK(ch.calls() == 1);
  CHECK(ch.log().front().agent == "prompt_agent");
}

TEST_CASE("generation retries once on unparseable output, then gives up") {
  auto backend = scripted({{"plan", {"nothing"}}, {"plan", {"still nothing"}}});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  CHECK_THROWS_AS(prompt_agent_generate(ch, task(), {}), GenerationEmpty);
  CHECK(ch.calls() == 2);
}

TEST_CASE("test agent dedups by normalized text and caps the pool") {
  auto backend = scripted(
      {{"Write 2 test cases", {"assert inc(1) == 2\nassert  inc(1)  ==  2\nassert inc(2) == 3\nassert inc(3) == 4"}}});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  AgentConfig cfg;
  cfg.n_tests = 2;
  const auto tests = test_agent_generate(ch, task(), "1. plan", cfg);
  REQUIRE(tests.size() == 2);
  CHECK(tests[0].assertion_text == "assert inc(1) == 2");
  CHECK(tests[1].assertion_text == "assert inc(2) == 3");
  CHECK(tests[0].id == test_case_id("assert inc(1) == 2"));
}

TEST_CASE("coding agent extracts fenced code and records origin") {
  auto backend = scripted({{"Implement the function `inc`",
                            {"```python\ndef inc(x):\n    return x + 1\n```", "", "def inc(x): return x+1"}}});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  const auto snippets = coding_agent_generate(ch, task(), "1. plan", {});
  REQUIRE(snippets.size() == 2);
  CHECK(snippets[0].source == "def inc(x):\n    return x + 1");
  CHECK(snippets[0].origin_index == 0);
  CHECK(snippets[1].origin_index == 2);
  CHECK(snippets[1].repair_round == 0);
  CHECK(snippets[1].syntax_ok == SyntaxState::Unknown);
}

TEST_CASE("scorers request temperature-0 single completions") {
  class Recorder final : public ChatBackend {
   public:
    ChatResponse send(const ChatRequest& req) override {
      seen.push_back(req);
      return {{"[1, 1, 1, 1]"}, 0, 0, 0};
    }
    std::vector<ChatRequest> seen;
  };
  auto rec = std::make_shared<Recorder>();
  Gateway gw(rec);
  AgentChannel ch(gw, {});
  prompt_agent_score(ch, task(), {"1. a", std::nullopt, 0});
  repair_agent_score(ch, task(), {"advice", std::nullopt, false});
  for (const auto& r : rec->seen) {
    CHECK(r.temperature == 0.0);
    CHECK(r.n == 1);
  }
  CHECK(rec->seen[0].messages[1].content.find("chain-of-thought prompt") != std::string::npos);
  CHECK(rec->seen[1].messages[1].content.find("repair advice") != std::string::npos);
}

TEST_CASE("repair agent and repaired code") {
  const auto t = task();
  auto failing_test = make_test_case("assert inc(1) == 2");
  failing_test.classification = TestClassification::Valid;
  CodeSnippet s{"def inc(x):\n    return x", 3, 0, SyntaxState::Ok, std::nullopt};
  ExecutionReport report;
  report.per_case = {{failing_test.id, Verdict::Fail, "AssertionError", 0}};

  auto backend = scripted({{"assert inc(1) == 2\nAssertionError", {"  Add one to x.  "}},
                           {"Repair advice:\nAdd one to x.", {"```python\ndef inc(x):\n    return x + 1\n```"}}});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  const auto advice = repair_agent_advise(ch, s, report, t, {failing_test});
  CHECK(advice.text == "Add one to x.");
  CHECK_FALSE(advice.is_fallback);

  RepairAdvice accepted = advice;
  accepted.score = ScoreVector{true, true, true, true};
  const auto repaired = coding_agent_repair(ch, s, accepted, t, 3);
  CHECK(repaired.source == "def inc(x):\n    return x + 1");
  CHECK(repaired.repair_round == 1);
  CHECK(repaired.origin_index == 3);
  CHECK(repaired.syntax_ok == SyntaxState::Unknown);

  CHECK_THROWS_AS(coding_agent_repair(ch, s, advice, t, 3), PreconditionViolation);
  CodeSnippet at_bound = s;
  at_bound.repair_round = 3;
  CHECK_THROWS_AS(coding_agent_repair(ch, at_bound, accepted, t, 3), PreconditionViolation);
  CHECK_THROWS_AS(repair_agent_advise(ch, s, ExecutionReport{}, t, {}), PreconditionViolation);
}

TEST_CASE("agents never see hidden tests") {
  const auto t = task();
  auto backend = scripted({{"plan", {"1. add one"}},
                           {"Prompt:", {"[1, 1, 1, 1]"}},
                           {"test cases", {"assert inc(1) == 2"}},
                           {"Classify", {"VALID"}},
                           {"Implement", {"```python\ndef inc(x):\n    return x\n```"}}});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  const auto plans = prompt_agent_generate(ch, t, {});
  prompt_agent_score(ch, t, plans.front());
  const auto tests = test_agent_generate(ch, t, plans.front().text, {});
  test_agent_classify(ch, t, tests.front());
  coding_agent_generate(ch, t, plans.front().text, {});
  REQUIRE(ch.rendered_requests().size() == 5);
  for (const auto& r : ch.rendered_requests()) CHECK(r.find("HIDDEN-SENTINEL") == std::string::npos);
}

TEST_CASE("empty task description is a precondition violation") {
  Task t = task();
  t.description = "  ";
  auto backend = scripted({});
  Gateway gw(backend);
  AgentChannel ch(gw, {});
  CHECK_THROWS_AS(prompt_agent_generate(ch, t, {}), PreconditionViolation);
  CHECK(backend->consumed() == 0);
}
