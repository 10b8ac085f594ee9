#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/evaluation.hpp"
#include "hirec/executor.hpp"
#include "hirec/indexer.hpp"
#include "hirec/pipeline.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>

namespace hirec {

/// Flat "section.key" -> value map read from a sectioned key/value file:
///   [section]
///   key = "string" | 12 | 0.5 | true | ["a", "b"]
/// '#' starts a comment outside strings. Throws ParseError with the line number.
std::map<std::string, nlohmann::json> parse_config_text(std::string_view text);

struct PathsConfig {
  std::string corpus;
  std::string index_dir;
  std::string prompts_dir;
  std::string trace_dir;
};

inline BackendConfig rule_backend() {
  BackendConfig b;
  b.kind = "rule";
  return b;
}

struct AppConfig {
  PathsConfig paths;
  BackendConfig embedder;
  BackendConfig doc_reranker;
  BackendConfig passage_reranker;
  BackendConfig chat_small = rule_backend();
  BackendConfig chat_generator = rule_backend();
  BackendConfig judge = rule_backend();
  PipelineConfig pipeline;
  ExecutorConfig executor;
  ChunkOptions chunking;
  IndexBuildOptions index;
  std::size_t eval_parallel = 1;
  NumericMatchOptions numeric;

  void validate() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Builds a config from file text plus HIREC_<SECTION>_<KEY> overrides (upper case, dots to
/// underscores). Relative paths resolve against `base_dir`. Unknown keys are errors.
AppConfig load_config_text(std::string_view text, const std::string& base_dir = ".",
                           const EnvLookup& env = process_env);

/// Reads `path` (empty: defaults only) and applies environment overrides.
AppConfig load_config(const std::string& path, const EnvLookup& env = process_env);

/// Instantiates every backend role. Chat roles with identical settings share one instance, so a
/// single script file can serve several roles.
Backends make_backends(const AppConfig& cfg);

/// Environment variable name for a "section.key" setting.
std::string env_var_name(std::string_view dotted_key);

}  // namespace hirec
