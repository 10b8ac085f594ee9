#include "hirec/config.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

namespace hirec {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string_view strip_comment(std::string_view line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_str && c == '\\') {
      ++i;
      continue;
    }
    if (c == '"') in_str = !in_str;
    if (c == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

// Values are a subset of TOML that happens to be valid JSON once bare words are handled.
json parse_value(std::string_view v, std::size_t line) {
  v = text::trim(v);
  if (v.empty()) throw ParseError("missing value", line);
  if (v.front() == '\'' && v.size() >= 2 && v.back() == '\'') return std::string(v.substr(1, v.size() - 2));
  try {
    return json::parse(v);
  } catch (const json::exception&) {
    throw ParseError("cannot parse value: " + std::string(v), line);
  }
}

bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}

}  // namespace

std::map<std::string, json> parse_config_text(std::string_view text) {
  std::map<std::string, json> out;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    auto line = text::trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", lineno);
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      if (!valid_key(section)) throw ParseError("bad section name '" + section + "'", lineno);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno);
    const std::string key(text::trim(line.substr(0, eq)));
    if (!valid_key(key)) throw ParseError("bad key '" + key + "'", lineno);
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) throw ParseError("duplicate key '" + full + "'", lineno);
    out[full] = parse_value(line.substr(eq + 1), lineno);
  }
  return out;
}

std::string env_var_name(std::string_view dotted_key) {
  std::string out = "HIREC_";
  for (char c : dotted_key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

namespace {

using Setter = std::function<void(AppConfig&, const json&, const std::string& base)>;

std::string as_string(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw ParseError(key + ": expected a string");
}

double as_double(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  throw ParseError(key + ": expected a number");
}

long long as_int(const json& v, const std::string& key) {
  if (v.is_number_integer()) return v.get<long long>();
  throw ParseError(key + ": expected an integer");
}

std::size_t as_count(const json& v, const std::string& key) {
  const auto n = as_int(v, key);
  if (n < 0) throw ParseError(key + ": must not be negative");
  return static_cast<std::size_t>(n);
}

bool as_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  throw ParseError(key + ": expected true or false");
}

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

void add_backend(std::map<std::string, Setter>& t, const std::string& section, BackendConfig AppConfig::*member) {
  auto key = [&](const char* k) { return section + "." + k; };
  t[key("kind")] = [=](AppConfig& c, const json& v, const std::string&) { (c.*member).kind = as_string(v, section + ".kind"); };
  t[key("endpoint_url")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).endpoint_url = as_string(v, section + ".endpoint_url");
  };
  t[key("model_name")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).model_name = as_string(v, section + ".model_name");
  };
  t[key("timeout_ms")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).timeout = std::chrono::milliseconds(as_int(v, section + ".timeout_ms"));
  };
  t[key("max_retries")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).max_retries = static_cast<int>(as_int(v, section + ".max_retries"));
  };
  t[key("backoff_ms")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).backoff = std::chrono::milliseconds(as_int(v, section + ".backoff_ms"));
  };
  t[key("price_per_million_input")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).price_per_million_input = as_double(v, section + ".price_per_million_input");
  };
  t[key("price_per_million_output")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).price_per_million_output = as_double(v, section + ".price_per_million_output");
  };
  t[key("dim")] = [=](AppConfig& c, const json& v, const std::string&) { (c.*member).dim = as_count(v, section + ".dim"); };
  t[key("script_path")] = [=](AppConfig& c, const json& v, const std::string& base) {
    (c.*member).script_path = resolve(as_string(v, section + ".script_path"), base);
  };
  t[key("usage_prompt_tokens")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).usage_prompt_tokens = as_count(v, section + ".usage_prompt_tokens");
  };
  t[key("usage_completion_tokens")] = [=](AppConfig& c, const json& v, const std::string&) {
    (c.*member).usage_completion_tokens = as_count(v, section + ".usage_completion_tokens");
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["paths.corpus"] = [](AppConfig& c, const json& v, const std::string& b) { c.paths.corpus = resolve(as_string(v, "paths.corpus"), b); };
    t["paths.index_dir"] = [](AppConfig& c, const json& v, const std::string& b) {
      c.paths.index_dir = resolve(as_string(v, "paths.index_dir"), b);
    };
    t["paths.prompts_dir"] = [](AppConfig& c, const json& v, const std::string& b) {
      c.paths.prompts_dir = resolve(as_string(v, "paths.prompts_dir"), b);
    };
    t["paths.trace_dir"] = [](AppConfig& c, const json& v, const std::string& b) {
      c.paths.trace_dir = resolve(as_string(v, "paths.trace_dir"), b);
    };
    add_backend(t, "embedder", &AppConfig::embedder);
    add_backend(t, "doc_reranker", &AppConfig::doc_reranker);
    add_backend(t, "passage_reranker", &AppConfig::passage_reranker);
    add_backend(t, "chat_small", &AppConfig::chat_small);
    add_backend(t, "chat_generator", &AppConfig::chat_generator);
    add_backend(t, "judge", &AppConfig::judge);

    t["pipeline.k_cand_docs"] = [](AppConfig& c, const json& v, const std::string&) { c.pipeline.k_cand_docs = as_count(v, "pipeline.k_cand_docs"); };
    t["pipeline.k_docs"] = [](AppConfig& c, const json& v, const std::string&) { c.pipeline.k_docs = as_count(v, "pipeline.k_docs"); };
    t["pipeline.k_pass"] = [](AppConfig& c, const json& v, const std::string&) { c.pipeline.k_pass = as_count(v, "pipeline.k_pass"); };
    t["pipeline.k_keep"] = [](AppConfig& c, const json& v, const std::string&) { c.pipeline.k_keep = as_count(v, "pipeline.k_keep"); };
    t["pipeline.max_iters"] = [](AppConfig& c, const json& v, const std::string&) {
      c.pipeline.max_iters = static_cast<int>(as_int(v, "pipeline.max_iters"));
    };
    t["pipeline.temperature"] = [](AppConfig& c, const json& v, const std::string&) { c.pipeline.temperature = as_double(v, "pipeline.temperature"); };
    t["pipeline.reasoning_mode_policy"] = [](AppConfig& c, const json& v, const std::string&) {
      const auto s = as_string(v, "pipeline.reasoning_mode_policy");
      auto p = reasoning_policy_from_string(s);
      if (!p) throw ParseError("pipeline.reasoning_mode_policy: unknown policy '" + s + "'");
      c.pipeline.reasoning_mode_policy = *p;
    };

    t["executor.command"] = [](AppConfig& c, const json& v, const std::string&) {
      if (v.is_string()) {
        c.executor.command = {v.get<std::string>()};
      } else if (v.is_array()) {
        c.executor.command.clear();
        for (const auto& a : v) c.executor.command.push_back(as_string(a, "executor.command"));
      } else {
        throw ParseError("executor.command: expected a string or an array of strings");
      }
    };
    t["executor.timeout_ms"] = [](AppConfig& c, const json& v, const std::string&) {
      c.executor.timeout = std::chrono::milliseconds(as_int(v, "executor.timeout_ms"));
    };
    t["executor.timeout_secs"] = [](AppConfig& c, const json& v, const std::string&) {
      c.executor.timeout = std::chrono::milliseconds(std::llround(as_double(v, "executor.timeout_secs") * 1000.0));
    };
    t["executor.workdir"] = [](AppConfig& c, const json& v, const std::string& b) {
      c.executor.workdir = resolve(as_string(v, "executor.workdir"), b);
    };
    t["executor.max_concurrent"] = [](AppConfig& c, const json& v, const std::string&) {
      c.executor.max_concurrent = as_count(v, "executor.max_concurrent");
    };

    t["index.chunk_size"] = [](AppConfig& c, const json& v, const std::string&) { c.chunking.chunk_size = as_count(v, "index.chunk_size"); };
    t["index.overlap"] = [](AppConfig& c, const json& v, const std::string&) { c.chunking.overlap = as_count(v, "index.overlap"); };
    t["index.parallel"] = [](AppConfig& c, const json& v, const std::string&) { c.index.parallel = as_count(v, "index.parallel"); };
    t["index.embed_batch"] = [](AppConfig& c, const json& v, const std::string&) { c.index.embed_batch = as_count(v, "index.embed_batch"); };

    t["eval.parallel"] = [](AppConfig& c, const json& v, const std::string&) { c.eval_parallel = as_count(v, "eval.parallel"); };
    t["eval.scale_tolerant"] = [](AppConfig& c, const json& v, const std::string&) {
      c.numeric.scale_tolerant = as_bool(v, "eval.scale_tolerant");
    };
    return t;
  }();
  return table;
}

json env_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return raw;
  }
}

}  // namespace

void AppConfig::validate() const {
  for (const auto* b : {&embedder, &doc_reranker, &passage_reranker, &chat_small, &chat_generator, &judge}) b->validate();
  auto check_kind = [](const BackendConfig& b, const char* section, std::initializer_list<const char*> kinds) {
    for (const char* k : kinds)
      if (b.kind == k) return;
    throw ParseError(std::string(section) + ".kind: unknown backend kind '" + b.kind + "'");
  };
  check_kind(embedder, "embedder", {"mock", "http"});
  check_kind(doc_reranker, "doc_reranker", {"mock", "http"});
  check_kind(passage_reranker, "passage_reranker", {"mock", "http"});
  check_kind(chat_small, "chat_small", {"rule", "mock", "scripted", "http"});
  check_kind(chat_generator, "chat_generator", {"rule", "mock", "scripted", "http"});
  check_kind(judge, "judge", {"rule", "mock", "scripted", "http"});
  pipeline.validate();
  if (chunking.chunk_size <= chunking.overlap) throw ParseError("index.chunk_size must exceed index.overlap");
  if (executor.command.empty()) throw ParseError("executor.command must not be empty");
  if (executor.timeout.count() <= 0) throw ParseError("executor.timeout_ms must be positive");
  if (index.embed_batch == 0) throw ParseError("index.embed_batch must be positive");
}

AppConfig load_config_text(std::string_view text, const std::string& base_dir, const EnvLookup& env) {
  auto values = parse_config_text(text);
  const auto& table = setters();
  for (const auto& [key, _] : values)
    if (!table.count(key)) throw ParseError("unknown config key '" + key + "'");
  if (env)
    for (const auto& [key, _] : table)
      if (auto v = env(env_var_name(key))) values[key] = env_value(*v);

  AppConfig cfg;
  for (const auto& [key, v] : values) {
    // Environment paths are taken relative to the working directory.
    const bool from_env = env && env(env_var_name(key)).has_value();
    table.at(key)(cfg, v, from_env ? std::string(".") : base_dir);
  }
  cfg.validate();
  return cfg;
}

Backends make_backends(const AppConfig& cfg) {
  Backends b;
  b.embedder = make_embedder(cfg.embedder);
  b.doc_reranker = make_reranker(cfg.doc_reranker);
  b.passage_reranker = make_reranker(cfg.passage_reranker);
  std::map<std::string, std::shared_ptr<ChatModel>> shared;
  auto chat = [&](const BackendConfig& c) {
    const std::string key = c.kind + '\n' + c.endpoint_url + '\n' + c.model_name + '\n' + c.script_path + '\n' +
                            std::to_string(c.usage_prompt_tokens.value_or(0)) + '/' +
                            std::to_string(c.usage_completion_tokens.value_or(0)) + '\n' +
                            std::to_string(c.timeout.count()) + '/' + std::to_string(c.max_retries);
    auto& slot = shared[key];
    if (!slot) slot = make_chat(c);
    return slot;
  };
  b.chat_small = chat(cfg.chat_small);
  b.chat_generator = chat(cfg.chat_generator);
  b.judge = chat(cfg.judge);
  return b;
}

AppConfig load_config(const std::string& path, const EnvLookup& env) {
  if (path.empty()) return load_config_text("", ".", env);
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto base = fs::path(path).parent_path();
  return load_config_text(ss.str(), base.empty() ? "." : base.string(), env);
}

}  // namespace hirec
