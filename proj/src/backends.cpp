#include "hirec/backends.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>
#include <unordered_set>

namespace hirec {

using nlohmann::json;

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::summarize: return "summarize";
    case Stage::transform: return "transform";
    case Stage::curate: return "curate";
    case Stage::generate: return "generate";
    case Stage::classify: return "classify";
    case Stage::judge: return "judge";
  }
  return "generate";
}

std::optional<Stage> stage_from_string(std::string_view s) noexcept {
  for (Stage st : {Stage::summarize, Stage::transform, Stage::curate, Stage::generate, Stage::classify,
                   Stage::judge})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

std::uint64_t approximate_token_count(std::string_view s) noexcept { return (s.size() + 3) / 4; }

void BackendConfig::validate() const {
  if (timeout.count() <= 0) throw ParseError("backend timeout must be positive");
  if (price_per_million_input < 0 || price_per_million_output < 0)
    throw ParseError("backend prices must be nonnegative");
  if (max_retries < 0) throw ParseError("max_retries must be nonnegative");
}

// ---------------------------------------------------------------------------

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ParseError("embedder dim must be positive");
}

Embedding HashingEmbedder::embed_one(std::string_view text) const {
  Embedding v = Embedding::Zero(static_cast<Eigen::Index>(dim_));
  for (const auto& tok : text::tokenize(text)) v[static_cast<Eigen::Index>(text::fnv1a64(tok) % dim_)] += 1.0;
  const double n = v.norm();
  if (n > 0) v /= n;
  return v;
}

std::vector<Embedding> HashingEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

double OverlapReranker::overlap(std::string_view query, std::string_view passage) {
  const auto qt = text::tokenize(query);
  const auto pt = text::tokenize(passage);
  const std::set<std::string> qs(qt.begin(), qt.end());
  const std::unordered_set<std::string> ps(pt.begin(), pt.end());
  std::size_t hit = 0;
  for (const auto& t : qs) hit += ps.count(t);
  const double s = static_cast<double>(hit) / static_cast<double>(std::max<std::size_t>(1, qs.size()));
  return std::clamp(s, 0.0, 1.0);
}

std::vector<double> OverlapReranker::score(std::string_view query, const std::vector<std::string>& passages) {
  std::vector<double> out;
  out.reserve(passages.size());
  for (const auto& p : passages) out.push_back(overlap(query, p));
  return out;
}

// ---------------------------------------------------------------------------

void ScriptedChat::push(Stage stage, ScriptedReply reply) {
  std::lock_guard lk(mu_);
  queues_[stage].push_back(std::move(reply));
}

void ScriptedChat::set_default_usage(std::optional<std::uint64_t> prompt_tokens,
                                     std::optional<std::uint64_t> completion_tokens) {
  std::lock_guard lk(mu_);
  default_prompt_tokens_ = prompt_tokens;
  default_completion_tokens_ = completion_tokens;
}

std::size_t ScriptedChat::remaining(Stage stage) const {
  std::lock_guard lk(mu_);
  auto it = queues_.find(stage);
  return it == queues_.end() ? 0 : it->second.size();
}

std::vector<ChatExchange> ScriptedChat::history() const {
  std::lock_guard lk(mu_);
  return history_;
}

std::unique_ptr<ScriptedChat> ScriptedChat::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open chat script: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("chat script " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("chat script must be a JSON object keyed by stage");
  auto chat = std::make_unique<ScriptedChat>();
  for (const auto& [key, arr] : j.items()) {
    auto stage = stage_from_string(key);
    if (!stage) throw ParseError("chat script: unknown stage '" + key + "'");
    if (!arr.is_array()) throw ParseError("chat script: stage '" + key + "' must map to an array");
    for (const auto& item : arr) {
      ScriptedReply r;
      if (item.is_string()) {
        r.text = item.get<std::string>();
      } else if (item.is_object() && item.contains("text")) {
        r.text = item.at("text").get<std::string>();
        if (item.contains("prompt_tokens")) r.prompt_tokens = item.at("prompt_tokens").get<std::uint64_t>();
        if (item.contains("completion_tokens"))
          r.completion_tokens = item.at("completion_tokens").get<std::uint64_t>();
      } else {
        throw ParseError("chat script: entries must be strings or objects with \"text\"");
      }
      chat->push(*stage, std::move(r));
    }
  }
  return chat;
}

ChatExchange ScriptedChat::chat(const std::optional<std::string>& system_text, const std::string& user_text,
                                double temperature, Stage stage) {
  std::lock_guard lk(mu_);
  auto& q = queues_[stage];
  if (q.empty()) throw EmptyResponse("scripted chat: no reply queued for stage " + std::string(to_string(stage)));
  ScriptedReply r = std::move(q.front());
  q.pop_front();
  if (!r.prompt_tokens) r.prompt_tokens = default_prompt_tokens_;
  if (!r.completion_tokens) r.completion_tokens = default_completion_tokens_;

  ChatExchange ex{system_text, user_text, temperature, std::move(r.text), 0, 0, false, stage};
  const std::size_t prompt_chars = user_text.size() + (system_text ? system_text->size() : 0);
  ex.approximate_tokens = !r.prompt_tokens || !r.completion_tokens;
  ex.prompt_tokens = r.prompt_tokens.value_or((prompt_chars + 3) / 4);
  ex.completion_tokens = r.completion_tokens.value_or(approximate_token_count(ex.response_text));
  history_.push_back(ex);
  return ex;
}

// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> s = {
      "a",   "an",   "and",  "are",  "as",   "at",    "be",   "by",    "did",   "do",    "does",
      "for", "from", "how",  "in",   "is",   "it",    "its",  "many",  "much",  "of",    "on",
      "or",  "that", "the",  "their", "this", "to",   "was",  "were",  "what",  "which", "with",
      "who", "when", "where", "why", "has",  "have",  "had",  "give",  "using", "by",    "as"};
  return s;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out.push_back(' ');
      space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::string_view after(std::string_view s, std::string_view marker) {
  auto p = text::ifind(s, marker);
  return p == std::string_view::npos ? std::string_view{} : s.substr(p + marker.size());
}

std::string_view until(std::string_view s, std::string_view marker) {
  auto p = text::ifind(s, marker);
  return p == std::string_view::npos ? s : s.substr(0, p);
}

std::string content_query(std::string_view q) {
  std::string out;
  for (const auto& t : text::tokenize(q)) {
    if (stopwords().count(t)) continue;
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::optional<std::string> first_number(std::string_view s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) continue;
    if (i > 0 && std::isalpha(static_cast<unsigned char>(s[i - 1]))) continue;
    std::string num;
    bool seen_dot = false;
    std::size_t j = i;
    for (; j < s.size(); ++j) {
      char c = s[j];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        num.push_back(c);
      } else if (c == ',' && j + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[j + 1])) && !seen_dot) {
        continue;
      } else if (c == '.' && !seen_dot && j + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
        seen_dot = true;
        num.push_back(c);
      } else {
        break;
      }
    }
    if (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) {
      i = j;
      continue;
    }
    if (i > 0 && s[i - 1] == '-') num.insert(num.begin(), '-');
    return num;
  }
  return std::nullopt;
}

struct PromptContext {
  int id;
  std::string title;
  std::string content;
};

std::vector<PromptContext> parse_contexts(std::string_view block) {
  std::vector<PromptContext> out;
  for (int id = 1;; ++id) {
    const std::string marker = "Context" + std::to_string(id) + " (ID: " + std::to_string(id) + "): ";
    auto p = block.find(marker);
    if (p == std::string_view::npos) break;
    auto body = block.substr(p + marker.size());
    const std::string next = "\nContext" + std::to_string(id + 1) + " (ID: ";
    auto e = body.find(next);
    if (e != std::string_view::npos) body = body.substr(0, e);
    PromptContext c{id, {}, std::string(body)};
    auto tp = body.find("Title is ");
    auto cp = body.find(". Content is ");
    if (tp == 0 && cp != std::string_view::npos) {
      c.title = std::string(body.substr(9, cp - 9));
      c.content = std::string(body.substr(cp + 13));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string first_source_content(std::string_view user) {
  auto body = after(user, "Sources: ");
  body = until(body, "\nSources: ");
  body = until(body, "\nQuestion: ");
  auto dash = body.find(" - ");
  return std::string(dash == std::string_view::npos ? body : body.substr(dash + 3));
}

std::string quoted_field(std::string_view s, std::string_view label) {
  auto body = after(s, label);
  body = text::trim(body);
  if (!body.empty() && body.front() == '\'') body.remove_prefix(1);
  auto e = body.find("'\n");
  if (e == std::string_view::npos) e = body.rfind('\'');
  return std::string(text::trim(e == std::string_view::npos ? body : body.substr(0, e)));
}

}  // namespace

std::string RuleChat::reply(std::string_view system_text, std::string_view user_text, Stage stage) {
  switch (stage) {
    case Stage::summarize: {
      auto body = after(user_text, "Summarize the following text:");
      if (body.empty()) body = user_text;
      std::string s = collapse_ws(body).substr(0, 200);
      return s.empty() ? std::string("Untitled document") : s;
    }
    case Stage::transform: {
      auto q = after(user_text, "## Question:");
      q = until(q, "\n###");
      return "## Query: " + collapse_ws(q);
    }
    case Stage::classify: {
      const std::string q = text::to_lower(after(user_text, "Question:"));
      static const char* numeric_cues[] = {"how much", "how many", "percent", "ratio",  "rate",     "average",
                                           "total",    "growth",   "change",  "margin", "millions", "billions",
                                           "amount",   "usd",      "dollars", "sum",    "difference"};
      for (const char* cue : numeric_cues)
        if (q.find(cue) != std::string::npos) return "numeric";
      return "textual";
    }
    case Stage::curate: {
      auto inputs = until(after(user_text, "Context:"), "### Output format");
      auto qpos = text::irfind(inputs, "\nQuestion:");
      std::string_view question = qpos == std::string_view::npos ? std::string_view{} : inputs.substr(qpos + 10);
      auto contexts = parse_contexts(qpos == std::string_view::npos ? inputs : inputs.substr(0, qpos));
      const std::string cq = content_query(question);
      std::vector<std::pair<double, int>> ranked;
      for (const auto& c : contexts) {
        double s = OverlapReranker::overlap(cq, c.title + " " + c.content);
        if (s >= 0.5) ranked.emplace_back(-s, c.id);
      }
      std::sort(ranked.begin(), ranked.end());
      std::string ids;
      for (const auto& [neg, id] : ranked) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
      if (!ranked.empty()) {
        return "## is_answerable: answerable\n## missing_information: None\n## answer: See context " +
               std::to_string(ranked.front().second) + "\n## answerable_doc_ids: [" + ids +
               "]\n## refined_query: None\n";
      }
      return "## is_answerable: unanswerable\n## missing_information: No context mentions " + cq +
             "\n## answer: None\n## answerable_doc_ids: []\n## refined_query: " + cq + " annual report\n";
    }
    case Stage::generate: {
      const std::string content = first_source_content(user_text);
      if (text::ifind(system_text, "Python program") != std::string_view::npos) {
        auto num = first_number(content);
        return "```python\ndef solution():\n    value = " + num.value_or("0") + "\n    return value\n```";
      }
      std::string sentence = collapse_ws(content);
      auto stop = sentence.find_first_of(".\n");
      if (stop != std::string::npos) sentence.resize(stop);
      if (sentence.size() > 200) sentence.resize(200);
      if (sentence.empty()) sentence = "not stated in the context";
      return "The context is reviewed step by step. Therefore, the answer is " + sentence + ".";
    }
    case Stage::judge: {
      const std::string gold = text::to_lower(quoted_field(user_text, "ground-truth answer:"));
      const std::string got = text::to_lower(quoted_field(user_text, "student's answer:"));
      if (!gold.empty() && !got.empty() &&
          (got.find(gold) != std::string::npos || gold.find(got) != std::string::npos))
        return "correct";
      return "incorrect";
    }
  }
  return {};
}

ChatExchange RuleChat::chat(const std::optional<std::string>& system_text, const std::string& user_text,
                            double temperature, Stage stage) {
  ChatExchange ex{system_text, user_text, temperature, {}, 0, 0, false, stage};
  ex.response_text = reply(system_text.value_or(""), user_text, stage);
  const std::size_t prompt_chars = user_text.size() + (system_text ? system_text->size() : 0);
  ex.approximate_tokens = !prompt_tokens_ || !completion_tokens_;
  ex.prompt_tokens = prompt_tokens_.value_or((prompt_chars + 3) / 4);
  ex.completion_tokens = completion_tokens_.value_or(approximate_token_count(ex.response_text));
  return ex;
}

// ---------------------------------------------------------------------------

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ParseError("endpoint url must include a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  Endpoint e{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

/// POST with bounded retries and exponential backoff. Retries transport failures, 429 and 5xx.
json post_json(const BackendConfig& cfg, const std::string& path, const json& body) {
  const Endpoint ep = split_url(cfg.endpoint_url);
  httplib::Client cli(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());

  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg.backoff * (1LL << (attempt - 1)));
    auto res = cli.Post(ep.prefix + path, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendUnavailable(cfg.endpoint_url + path + ": HTTP " + std::to_string(res->status));
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw MalformedResponse(cfg.endpoint_url + path + ": invalid JSON: " + e.what());
    }
  }
  throw BackendUnavailable(cfg.endpoint_url + path + ": " + last_error + " after " +
                           std::to_string(cfg.max_retries + 1) + " attempts");
}

}  // namespace

HttpEmbedder::HttpEmbedder(BackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.dim == 0) throw ParseError("embedder dim must be positive");
}

std::vector<Embedding> HttpEmbedder::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  json res = post_json(cfg_, "/v1/embeddings", {{"model", cfg_.model_name}, {"input", texts}});
  try {
    const auto& data = res.at("data");
    if (data.size() != texts.size())
      throw MalformedResponse("embeddings: expected " + std::to_string(texts.size()) + " vectors, got " +
                              std::to_string(data.size()));
    std::vector<Embedding> out(texts.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& item = data[i];
      const std::size_t slot = item.contains("index") ? item.at("index").get<std::size_t>() : i;
      if (slot >= out.size()) throw MalformedResponse("embeddings: index out of range");
      const auto vals = item.at("embedding").get<std::vector<double>>();
      if (vals.size() != cfg_.dim) throw DimensionMismatch(cfg_.dim, vals.size());
      Embedding v = Eigen::Map<const Embedding>(vals.data(), static_cast<Eigen::Index>(vals.size()));
      if (!v.allFinite()) throw MalformedResponse("embeddings: non-finite value");
      out[slot] = std::move(v);
    }
    for (const auto& v : out)
      if (v.size() == 0) throw MalformedResponse("embeddings: missing vector");
    return out;
  } catch (const json::exception& e) {
    throw MalformedResponse(std::string("embeddings: ") + e.what());
  }
}

HttpReranker::HttpReranker(BackendConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::vector<double> HttpReranker::score(std::string_view query, const std::vector<std::string>& passages) {
  if (passages.empty()) return {};
  json res = post_json(cfg_, "/rerank", {{"query", std::string(query)}, {"passages", passages}});
  std::vector<double> scores;
  try {
    scores = res.at("scores").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw MalformedResponse(std::string("rerank: ") + e.what());
  }
  if (scores.size() != passages.size())
    throw MalformedResponse("rerank: expected " + std::to_string(passages.size()) + " scores, got " +
                            std::to_string(scores.size()));
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0)) throw MalformedResponse("rerank: score outside [0,1]");
  return scores;
}

HttpChat::HttpChat(BackendConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

ChatExchange HttpChat::chat(const std::optional<std::string>& system_text, const std::string& user_text,
                            double temperature, Stage stage) {
  json messages = json::array();
  if (system_text) messages.push_back({{"role", "system"}, {"content", *system_text}});
  messages.push_back({{"role", "user"}, {"content", user_text}});
  json res = post_json(cfg_, "/v1/chat/completions",
                       {{"model", cfg_.model_name}, {"messages", messages}, {"temperature", temperature}});

  ChatExchange ex{system_text, user_text, temperature, {}, 0, 0, false, stage};
  try {
    const auto& content = res.at("choices").at(0).at("message").at("content");
    if (content.is_string()) ex.response_text = content.get<std::string>();
  } catch (const json::exception& e) {
    throw MalformedResponse(std::string("chat: ") + e.what());
  }
  if (text::trim(ex.response_text).empty()) throw EmptyResponse("chat: empty completion");

  const auto usage = res.find("usage");
  if (usage != res.end() && usage->is_object() && usage->contains("prompt_tokens") &&
      usage->contains("completion_tokens")) {
    ex.prompt_tokens = usage->at("prompt_tokens").get<std::uint64_t>();
    ex.completion_tokens = usage->at("completion_tokens").get<std::uint64_t>();
  } else {
    ex.approximate_tokens = true;
    ex.prompt_tokens = approximate_token_count(user_text) + (system_text ? approximate_token_count(*system_text) : 0);
    ex.completion_tokens = approximate_token_count(ex.response_text);
  }
  return ex;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Embedder> make_embedder(const BackendConfig& cfg) {
  if (cfg.kind == "mock") return std::make_unique<HashingEmbedder>(cfg.dim);
  if (cfg.kind == "http") return std::make_unique<HttpEmbedder>(cfg);
  throw ParseError("unknown embedder kind: " + cfg.kind);
}

std::unique_ptr<Reranker> make_reranker(const BackendConfig& cfg) {
  if (cfg.kind == "mock") return std::make_unique<OverlapReranker>();
  if (cfg.kind == "http") return std::make_unique<HttpReranker>(cfg);
  throw ParseError("unknown reranker kind: " + cfg.kind);
}

std::unique_ptr<ChatModel> make_chat(const BackendConfig& cfg) {
  if (cfg.kind == "rule" || cfg.kind == "mock")
    return std::make_unique<RuleChat>(cfg.usage_prompt_tokens, cfg.usage_completion_tokens);
  if (cfg.kind == "scripted") {
    auto chat = ScriptedChat::from_json_file(cfg.script_path);
    chat->set_default_usage(cfg.usage_prompt_tokens, cfg.usage_completion_tokens);
    return chat;
  }
  if (cfg.kind == "http") return std::make_unique<HttpChat>(cfg);
  throw ParseError("unknown chat kind: " + cfg.kind);
}

Backends mock_backends(std::shared_ptr<ChatModel> chat, std::size_t dim) {
  Backends b;
  b.embedder = std::make_shared<HashingEmbedder>(dim);
  b.doc_reranker = std::make_shared<OverlapReranker>();
  b.passage_reranker = std::make_shared<OverlapReranker>();
  b.chat_small = chat;
  b.chat_generator = chat;
  b.judge = std::move(chat);
  return b;
}

}  // namespace hirec
