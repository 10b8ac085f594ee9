#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hirec/config.hpp"
#include "hirec/errors.hpp"
#include "hirec/evaluation.hpp"
#include "hirec/pipeline.hpp"
#include "support.hpp"

#include <set>

using namespace hirec;
using testing::FnChat;

namespace {

const std::string kAnswerable = "## is_answerable: answerable\n## answerable_doc_ids: [1]\n## refined_query: None";
const std::string kProgram = "```python\ndef solution():\n    return 12.5\n```";

std::string unanswerable(int n) {
  return "## is_answerable: unanswerable\n## answerable_doc_ids: []\n## refined_query: Adobe revenue detail " +
         std::to_string(n) + "?";
}

struct Fixture {
  Corpus corpus = testing::toy_corpus();
  DocIndex index = testing::toy_index(corpus);

  Backends backends(std::shared_ptr<ChatModel> chat) const { return mock_backends(std::move(chat)); }
};

PipelineConfig pot_config() {
  PipelineConfig c;
  c.reasoning_mode_policy = ReasoningPolicy::always_pot;
  return c;
}

}  // namespace

TEST_CASE("case-study replay: two retrievals, two curations, main pass") {
  auto cfg = load_config(testing::source_path("data/toy/adobe_case.toml"), [](const std::string&) {
    return std::optional<std::string>{};
  });
  Fixture fx;
  auto backends = make_backends(cfg);
  Pipeline pipeline(fx.corpus, fx.index, backends, cfg.pipeline, cfg.executor);
  auto res = pipeline.run(testing::kAdobeQuestion);

  CHECK(res.trace.retrieval_count() == 2);
  CHECK(res.trace.curation_count() == 2);
  CHECK(res.trace.generations == 1);
  CHECK(res.answered_via == AnsweredVia::main_pass);
  CHECK(res.mode == ReasoningMode::pot);
  CHECK(res.answer_text == "46");
  CHECK(numeric_match(res.answer_text, "46%"));

  const auto& r1 = res.trace.rounds[0];
  CHECK_FALSE(r1.verdict.answerable);
  CHECK(r1.verdict.refined_query == "What is Adobe's operating income for FY2016?");
  REQUIRE(r1.filtered_ids.size() == 1);
  CHECK(r1.filtered_ids[0] == make_passage_id("ADBE_2015_10K", 59, 0));
  REQUIRE(r1.complementary);
  CHECK(r1.complementary->query.is_complementary);
  CHECK(r1.complementary->docs.front().doc_id == "ADBE_2016_10K");

  CHECK(res.trace.rounds[1].verdict.answerable);
  REQUIRE(res.evidence.size() == 2);
  CHECK(res.evidence[0].doc_id == "ADBE_2015_10K");
  CHECK(res.evidence[0].page_no == 59);
  CHECK(res.evidence[1].doc_id == "ADBE_2016_10K");
  CHECK(res.evidence[1].page_no == 61);

  const auto table = render_trace_table(trace_to_json(res));
  for (const char* section : {"Question", "Initial Retrieval", "Evidence Curation", "Complementary Retrieval", "Generation"})
    CHECK(table.find(section) != std::string::npos);
}

TEST_CASE("always answerable: one retrieval, one curation, main pass") {
  Fixture fx;
  auto chat = std::make_shared<FnChat>([](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return kAnswerable;
    if (s == Stage::generate) return kProgram;
    return "## Query: adobe operating income";
  });
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), pot_config());
  auto res = p.run("What was Adobe operating income?");
  CHECK(res.trace.retrieval_count() == 1);
  CHECK(res.trace.curation_count() == 1);
  CHECK(res.answered_via == AnsweredVia::main_pass);
  CHECK(res.evidence.size() == 1);
  CHECK(res.numeric_value == 12.5);
  CHECK(res.answer_text == "12.5");
  CHECK(chat->calls(Stage::generate) == 1);
}

TEST_CASE("always unanswerable: four retrievals, three curations, fallback on the merged set") {
  Fixture fx;
  int round = 0;
  auto chat = std::make_shared<FnChat>([&](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return unanswerable(++round);
    if (s == Stage::generate) return kProgram;
    return "## Query: adobe";
  });
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), pot_config());
  auto res = p.run("What was Adobe operating income?");
  CHECK(res.trace.retrieval_count() == 4);
  CHECK(res.trace.curation_count() == 3);
  CHECK(res.trace.generations == 1);
  CHECK(res.answered_via == AnsweredVia::fallback);
  CHECK(chat->calls(Stage::transform) == 4);
  CHECK(chat->calls(Stage::curate) == 3);
  // the filter kept nothing, so the fallback set is the last complementary retrieval
  const auto& last = *res.trace.rounds.back().complementary;
  REQUIRE(res.evidence.size() == last.passages.size());
  for (std::size_t i = 0; i < last.passages.size(); ++i) CHECK(res.evidence[i] == last.passages[i].passage);
  std::set<std::string> ids;
  for (const auto& e : res.evidence) CHECK(ids.insert(e.passage_id).second);
}

TEST_CASE("fallback set keeps filtered passages first") {
  Fixture fx;
  int round = 0;
  auto chat = std::make_shared<FnChat>([&](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate)
      return "## is_answerable: unanswerable\n## answerable_doc_ids: [1]\n## refined_query: more " +
             std::to_string(++round) + "?";
    if (s == Stage::generate) return kProgram;
    return "## Query: adobe";
  });
  PipelineConfig cfg = pot_config();
  cfg.max_iters = 2;
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), cfg);
  auto res = p.run("Adobe operating income?");
  CHECK(res.trace.retrieval_count() == 3);
  REQUIRE(res.trace.rounds.size() == 2);
  REQUIRE_FALSE(res.evidence.empty());
  CHECK(res.evidence[0].passage_id == res.trace.rounds[1].filtered_ids[0]);
}

TEST_CASE("unparseable curation falls back after one retrieval") {
  Fixture fx;
  auto chat = std::make_shared<FnChat>([](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return "I cannot follow the format.";
    if (s == Stage::generate) return kProgram;
    return "## Query: adobe";
  });
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), pot_config());
  auto res = p.run("What was Adobe operating income?");
  CHECK(res.trace.retrieval_count() == 1);
  CHECK(res.trace.curation_count() == 1);
  CHECK(res.answered_via == AnsweredVia::fallback);
  CHECK_FALSE(res.trace.rounds[0].verdict.parse_ok);
  CHECK(res.evidence.size() == res.trace.initial.passages.size());
}

TEST_CASE("main-pass evidence never exceeds k_keep") {
  Fixture fx;
  auto chat = std::make_shared<FnChat>([](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return "## is_answerable: answerable\n## answerable_doc_ids: [1,2,3,4,5]";
    if (s == Stage::generate) return kProgram;
    return "## Query: adobe";
  });
  PipelineConfig cfg = pot_config();
  cfg.k_keep = 2;
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), cfg);
  auto res = p.run("Adobe?");
  CHECK(res.answered_via == AnsweredVia::main_pass);
  CHECK(res.evidence.size() == 2);
}

TEST_CASE("token tallies equal the sum of recorded exchanges") {
  Fixture fx;
  int round = 0;
  auto chat = std::make_shared<FnChat>([&](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return round++ < 1 ? unanswerable(round) : kAnswerable;
    if (s == Stage::generate) return kProgram;
    if (s == Stage::classify) return "numeric";
    return "## Query: adobe";
  });
  PipelineConfig cfg;
  cfg.reasoning_mode_policy = ReasoningPolicy::classify;
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), cfg);
  auto res = p.run("Adobe operating income?");
  const auto tallies = res.trace.token_tallies();
  std::size_t calls = 0;
  for (const auto& [stage, t] : tallies) {
    CHECK(t.prompt_tokens == 100 * t.calls);
    CHECK(t.completion_tokens == 20 * t.calls);
    calls += t.calls;
  }
  CHECK(calls == res.trace.exchanges.size());
  CHECK(tallies.at(Stage::classify).calls == 1);
  CHECK(tallies.at(Stage::transform).calls == 2);
  CHECK(tallies.at(Stage::curate).calls == 2);
  CHECK(tallies.at(Stage::generate).calls == 1);

  const auto j = trace_to_json(res, false);
  std::uint64_t sum = 0;
  for (const auto& [stage, t] : j.at("tokens").items()) sum += t.at("prompt_tokens").get<std::uint64_t>();
  CHECK(sum == 100 * res.trace.exchanges.size());
}

TEST_CASE("reasoning mode policies") {
  Fixture fx;
  auto chat = std::make_shared<FnChat>([](Stage s, const std::string&) -> std::string {
    if (s == Stage::classify) return "textual";
    return "x";
  });
  PipelineConfig cfg;
  Pipeline by_type(fx.corpus, fx.index, fx.backends(chat), cfg);
  CHECK(by_type.choose_mode("q", AnswerType::textual, nullptr) == ReasoningMode::cot);
  CHECK(by_type.choose_mode("q", AnswerType::numeric_table, nullptr) == ReasoningMode::pot);
  CHECK(by_type.choose_mode("q", std::nullopt, nullptr) == ReasoningMode::cot);  // classified
  cfg.reasoning_mode_policy = ReasoningPolicy::always_cot;
  CHECK(Pipeline(fx.corpus, fx.index, fx.backends(chat), cfg).choose_mode("q", AnswerType::numeric_text, nullptr) ==
        ReasoningMode::cot);

  auto broken = std::make_shared<ScriptedChat>();  // classify fails -> PoT
  cfg.reasoning_mode_policy = ReasoningPolicy::classify;
  CHECK(Pipeline(fx.corpus, fx.index, fx.backends(broken), cfg).choose_mode("q", std::nullopt, nullptr) ==
        ReasoningMode::pot);
}

TEST_CASE("failed programs are recorded, failed chat propagates") {
  Fixture fx;
  auto chat = std::make_shared<FnChat>([](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return kAnswerable;
    if (s == Stage::generate) return "```python\ndef solution():\n    return 1/0\n```";
    return "## Query: adobe";
  });
  Pipeline p(fx.corpus, fx.index, fx.backends(chat), pot_config());
  auto res = p.run("Adobe?");
  CHECK(res.trace.generation_error.has_value());
  CHECK(res.answer_text.empty());
  CHECK(res.trace.executions.size() == 2);

  auto silent = std::make_shared<FnChat>([](Stage s, const std::string&) -> std::string {
    if (s == Stage::curate) return kAnswerable;
    if (s == Stage::generate) throw EmptyResponse("no completion");
    return "## Query: adobe";
  });
  Pipeline q(fx.corpus, fx.index, fx.backends(silent), pot_config());
  CHECK_THROWS_AS(q.run("Adobe?"), GenerationFailed);
}

TEST_CASE("rule-chat runs are deterministic") {
  Fixture fx;
  auto backends = fx.backends(std::make_shared<RuleChat>(100, 20));
  Pipeline p(fx.corpus, fx.index, backends);
  const std::string q = "What was the Orbix interim condensed statements figure expressed in millions?";
  const auto a = trace_to_json(p.run(q), false).dump();
  const auto b = trace_to_json(p.run(q), false).dump();
  CHECK(a == b);
}

TEST_CASE("empty corpus or index is refused") {
  Corpus empty({});
  DocIndex none;
  Pipeline p(empty, none, mock_backends(std::make_shared<RuleChat>()));
  CHECK_THROWS_AS(p.run("q"), EmptyCorpus);
  PipelineConfig bad;
  bad.max_iters = 0;
  CHECK_THROWS(Pipeline(empty, none, mock_backends(std::make_shared<RuleChat>()), bad));
}
