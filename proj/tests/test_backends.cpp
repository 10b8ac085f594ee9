#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hirec/backends.hpp"
#include "hirec/errors.hpp"
#include "support.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <thread>

using namespace hirec;
using nlohmann::json;

namespace {

// Independent FNV-1a and tokenizer so the embedder is checked against a second implementation.
std::uint64_t oracle_fnv(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> oracle_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Loopback server on an ephemeral port, stopped on destruction.
struct LoopbackServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
  ~LoopbackServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

BackendConfig http_config(const std::string& url) {
  BackendConfig c;
  c.kind = "http";
  c.endpoint_url = url;
  c.model_name = "test-model";
  c.timeout = std::chrono::milliseconds(2000);
  c.max_retries = 2;
  c.backoff = std::chrono::milliseconds(1);
  return c;
}

}  // namespace

TEST_CASE("hashing embedder matches a hand oracle") {
  HashingEmbedder emb(64);
  const std::string text = "operating income";
  const Embedding v = emb.embed_one(text);
  REQUIRE(v.size() == 64);

  std::vector<double> expect(64, 0.0);
  for (const auto& t : oracle_tokens(text)) expect[oracle_fnv(t) % 64] += 1.0;
  double n = 0;
  for (double x : expect) n += x * x;
  n = std::sqrt(n);
  for (int i = 0; i < 64; ++i) CHECK(v[i] == doctest::Approx(expect[static_cast<std::size_t>(i)] / n).epsilon(1e-12));
  CHECK(std::fabs(v.norm() - 1.0) <= 1e-9);
}

TEST_CASE("hashing embedder: empty text, determinism, batch order") {
  HashingEmbedder emb(16);
  CHECK(emb.embed_one("").isZero());
  CHECK(emb.embed_one("  ,, ").isZero());
  auto batch = emb.embed({"alpha beta", "", "alpha beta"});
  REQUIRE(batch.size() == 3);
  CHECK(batch[0] == batch[2]);
  CHECK(batch[1].isZero());
  CHECK(batch[0] == emb.embed_one("Alpha, BETA!"));
  CHECK_THROWS_AS(HashingEmbedder(0), ParseError);
}

TEST_CASE("overlap reranker") {
  OverlapReranker r;
  CHECK(OverlapReranker::overlap("operating income", "Operating income rose") == 1.0);
  CHECK(OverlapReranker::overlap("revenue", "operating income") == 0.0);
  CHECK(OverlapReranker::overlap("adobe operating income 2016", "the operating income was high") == 0.5);
  CHECK(OverlapReranker::overlap("", "anything") == 0.0);
  // duplicate query tokens count once
  CHECK(OverlapReranker::overlap("income income tax", "income") == doctest::Approx(0.5));
  auto s = r.score("a b", {"a", "b a", "c"});
  REQUIRE(s.size() == 3);
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 1.0);
  CHECK(s[2] == 0.0);
}

TEST_CASE("scripted chat: FIFO per stage, usage, exhaustion") {
  ScriptedChat chat;
  chat.push(Stage::transform, ScriptedReply{"## Query: x", 7, 3});
  chat.push(Stage::transform, "second");
  chat.push(Stage::curate, "c1");
  chat.set_default_usage(100, 20);

  auto a = chat.chat(std::nullopt, "q", 0.01, Stage::transform);
  CHECK(a.response_text == "## Query: x");
  CHECK(a.prompt_tokens == 7);
  CHECK(a.completion_tokens == 3);
  CHECK_FALSE(a.approximate_tokens);
  CHECK(chat.chat(std::nullopt, "q", 0.01, Stage::curate).response_text == "c1");
  auto b = chat.chat(std::string("sys"), "q", 0.01, Stage::transform);
  CHECK(b.response_text == "second");
  CHECK(b.prompt_tokens == 100);
  CHECK(b.completion_tokens == 20);
  CHECK(b.stage == Stage::transform);
  CHECK(chat.remaining(Stage::transform) == 0);
  CHECK_THROWS_AS(chat.chat(std::nullopt, "q", 0.01, Stage::transform), EmptyResponse);
  CHECK(chat.history().size() == 3);
}

TEST_CASE("scripted chat without usage approximates ceil(chars/4)") {
  ScriptedChat chat;
  chat.push(Stage::generate, "abcde");  // 5 chars -> 2
  auto ex = chat.chat(std::nullopt, "abcdefghi", 0.01, Stage::generate);  // 9 chars -> 3
  CHECK(ex.approximate_tokens);
  CHECK(ex.prompt_tokens == 3);
  CHECK(ex.completion_tokens == 2);
  CHECK(approximate_token_count("") == 0);
  CHECK(approximate_token_count("abcd") == 1);
}

TEST_CASE("scripted chat loads a script file") {
  testing::TempDir dir;
  std::ofstream(dir.str("s.json")) << R"({"transform": ["## Query: a", {"text": "## Query: b", "prompt_tokens": 5, "completion_tokens": 1}]})";
  auto chat = ScriptedChat::from_json_file(dir.str("s.json"));
  CHECK(chat->remaining(Stage::transform) == 2);
  chat->chat(std::nullopt, "q", 0.01, Stage::transform);
  auto ex = chat->chat(std::nullopt, "q", 0.01, Stage::transform);
  CHECK(ex.response_text == "## Query: b");
  CHECK(ex.prompt_tokens == 5);
  std::ofstream(dir.str("bad.json")) << R"({"nonsense_stage": ["x"]})";
  CHECK_THROWS_AS(ScriptedChat::from_json_file(dir.str("bad.json")), ParseError);
  CHECK_THROWS_AS(ScriptedChat::from_json_file(dir.str("missing.json")), ParseError);
}

TEST_CASE("stage names round-trip") {
  for (Stage s : {Stage::summarize, Stage::transform, Stage::curate, Stage::generate, Stage::classify, Stage::judge})
    CHECK(stage_from_string(to_string(s)) == s);
  CHECK_FALSE(stage_from_string("bogus").has_value());
}

TEST_CASE("backend config validation") {
  BackendConfig c;
  CHECK_NOTHROW(c.validate());
  c.timeout = std::chrono::milliseconds(0);
  CHECK_THROWS_AS(c.validate(), ParseError);
  c.timeout = std::chrono::milliseconds(10);
  c.price_per_million_input = -1;
  CHECK_THROWS_AS(c.validate(), ParseError);
}

TEST_CASE("http chat reads content and usage from a loopback server") {
  LoopbackServer srv;
  json seen;
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"## Query: x"}}],
                        "usage":{"prompt_tokens":100,"completion_tokens":20}})",
                    "application/json");
  });
  srv.start();
  HttpChat chat(http_config(srv.url()));
  auto ex = chat.chat(std::string("system"), "user text", 0.01, Stage::transform);
  CHECK(ex.response_text == "## Query: x");
  CHECK(ex.prompt_tokens == 100);
  CHECK(ex.completion_tokens == 20);
  CHECK_FALSE(ex.approximate_tokens);
  CHECK(seen["model"] == "test-model");
  CHECK(seen["temperature"].get<double>() == doctest::Approx(0.01));
  REQUIRE(seen["messages"].size() == 2);
  CHECK(seen["messages"][0]["role"] == "system");
  CHECK(seen["messages"][1]["content"] == "user text");
}

TEST_CASE("http chat: missing usage is approximated, empty content is an error") {
  LoopbackServer srv;
  std::atomic<int> calls{0};
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    const int n = calls++;
    res.set_content(n == 0 ? R"({"choices":[{"message":{"content":"abcdefgh"}}]})"
                           : R"({"choices":[{"message":{"content":""}}]})",
                    "application/json");
  });
  srv.start();
  HttpChat chat(http_config(srv.url()));
  auto ex = chat.chat(std::nullopt, "abcde", 0.01, Stage::generate);
  CHECK(ex.approximate_tokens);
  CHECK(ex.prompt_tokens == 2);
  CHECK(ex.completion_tokens == 2);
  CHECK_THROWS_AS(chat.chat(std::nullopt, "abcde", 0.01, Stage::generate), EmptyResponse);
}

TEST_CASE("http client retries 5xx then succeeds; 4xx fails fast") {
  LoopbackServer srv;
  std::atomic<int> calls{0};
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"ok"}}],"usage":{"prompt_tokens":1,"completion_tokens":1}})",
                    "application/json");
  });
  srv.server.Post("/bad/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  srv.start();
  HttpChat chat(http_config(srv.url()));
  CHECK(chat.chat(std::nullopt, "x", 0.01, Stage::curate).response_text == "ok");
  CHECK(calls == 3);
  HttpChat bad(http_config(srv.url() + "/bad"));
  CHECK_THROWS_AS(bad.chat(std::nullopt, "x", 0.01, Stage::curate), BackendUnavailable);
}

TEST_CASE("http backends: unreachable endpoint is BackendUnavailable") {
  // bind then release a port so nothing listens on it
  int port = 0;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  auto cfg = http_config("http://127.0.0.1:" + std::to_string(port));
  cfg.max_retries = 1;
  HttpChat chat(cfg);
  CHECK_THROWS_AS(chat.chat(std::nullopt, "x", 0.01, Stage::curate), BackendUnavailable);
  try {
    chat.chat(std::nullopt, "x", 0.01, Stage::curate);
  } catch (const Error& e) {
    CHECK(e.error_class() == ErrorClass::backend);
  }
}

TEST_CASE("rerank HTTP contract") {
  LoopbackServer srv;
  std::atomic<int> calls{0};
  std::string mode = "ok";
  srv.server.Post("/rerank", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const auto body = json::parse(req.body);
    REQUIRE(body.contains("query"));
    REQUIRE(body["passages"].is_array());
    json scores = json::array();
    for (const auto& p : body["passages"]) scores.push_back(OverlapReranker::overlap(body["query"].get<std::string>(), p.get<std::string>()));
    if (mode == "short") scores.erase(scores.begin());
    if (mode == "range") scores[0] = 1.5;
    res.set_content(json{{"scores", scores}}.dump(), "application/json");
  });
  srv.start();
  HttpReranker rr(http_config(srv.url()));
  const std::vector<std::string> passages = {"operating income", "cash flow", "income"};
  auto s = rr.score("operating income", passages);
  REQUIRE(s.size() == 3);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 0.5);
  for (double x : s) CHECK((x >= 0.0 && x <= 1.0));

  // empty list never reaches the service
  const int before = calls;
  CHECK(rr.score("q", {}).empty());
  CHECK(calls == before);

  mode = "short";
  CHECK_THROWS_AS(rr.score("operating income", passages), MalformedResponse);
  mode = "range";
  CHECK_THROWS_AS(rr.score("operating income", passages), MalformedResponse);
}

TEST_CASE("http embedder checks count, dim and finiteness") {
  LoopbackServer srv;
  std::size_t dim = 4;
  srv.server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    json data = json::array();
    int i = 0;
    for (const auto& t : body["input"]) {
      (void)t;
      data.push_back({{"index", i++}, {"embedding", std::vector<double>(dim, 0.5)}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  srv.start();
  auto cfg = http_config(srv.url());
  cfg.dim = 4;
  HttpEmbedder emb(cfg);
  auto v = emb.embed({"a", "b"});
  REQUIRE(v.size() == 2);
  CHECK(v[1].size() == 4);
  CHECK(v[1][3] == 0.5);
  dim = 3;
  CHECK_THROWS_AS(emb.embed({"a"}), DimensionMismatch);
}

TEST_CASE("factories") {
  BackendConfig c;
  c.kind = "mock";
  CHECK(make_embedder(c)->dim() == 64);
  CHECK(make_reranker(c) != nullptr);
  c.kind = "rule";
  CHECK(make_chat(c) != nullptr);
  c.kind = "nope";
  CHECK_THROWS_AS(make_embedder(c), ParseError);
  CHECK_THROWS_AS(make_chat(c), ParseError);
}

TEST_CASE("rule chat is a pure function of its inputs") {
  RuleChat a, b;
  const std::string prompt = "### Question:\nHow much revenue?\n";
  CHECK(a.chat(std::nullopt, prompt, 0.01, Stage::classify).response_text ==
        b.chat(std::nullopt, prompt, 0.01, Stage::classify).response_text);
  RuleChat fixed(100, 20);
  auto ex = fixed.chat(std::nullopt, prompt, 0.01, Stage::classify);
  CHECK(ex.prompt_tokens == 100);
  CHECK(ex.completion_tokens == 20);
  CHECK_FALSE(ex.approximate_tokens);
}
