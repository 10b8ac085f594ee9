#pragma once

#include <Eigen/Core>

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hirec {

/// Dense embedding. Backends produce doubles; the persisted index narrows to float32.
template <typename Scalar>
using EmbeddingT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Embedding = EmbeddingT<double>;

/// Which pipeline stage issued a chat call. Token accounting is grouped by this.
enum class Stage { summarize, transform, curate, generate, classify, judge };

std::string_view to_string(Stage s) noexcept;
std::optional<Stage> stage_from_string(std::string_view s) noexcept;

struct ChatExchange {
  std::optional<std::string> system_text;
  std::string user_text;
  double temperature = 0.01;
  std::string response_text;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  /// Set when the service reported no usage and counts were estimated as ceil(chars / 4).
  bool approximate_tokens = false;
  Stage stage = Stage::generate;
};

/// ceil(chars / 4)
std::uint64_t approximate_token_count(std::string_view s) noexcept;

struct BackendConfig {
  std::string kind = "mock";  // mock | http for embedders/rerankers; rule | scripted | http for chat
  std::string endpoint_url;
  std::string model_name;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{200};
  double price_per_million_input = 0.0;
  double price_per_million_output = 0.0;
  std::size_t dim = 64;     // embedders only
  std::string script_path;  // scripted chat only
  std::optional<std::uint64_t> usage_prompt_tokens;  // mock chat: fixed usage per call
  std::optional<std::uint64_t> usage_completion_tokens;

  void validate() const;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  /// One vector per text, in order.
  virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
};

class Reranker {
 public:
  virtual ~Reranker() = default;
  /// One score in [0, 1] per passage, in order.
  virtual std::vector<double> score(std::string_view query, const std::vector<std::string>& passages) = 0;
};

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual ChatExchange chat(const std::optional<std::string>& system_text, const std::string& user_text,
                            double temperature, Stage stage) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic in-process implementations.

/// Bag of hashed tokens: each token adds 1 at fnv1a64(token) mod dim, then L2-normalized.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim);
  std::size_t dim() const override { return dim_; }
  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
  Embedding embed_one(std::string_view text) const;

 private:
  std::size_t dim_;
};

/// |tokens(q) ∩ tokens(p)| / max(1, |tokens(q)|) over token sets.
class OverlapReranker final : public Reranker {
 public:
  std::vector<double> score(std::string_view query, const std::vector<std::string>& passages) override;
  static double overlap(std::string_view query, std::string_view passage);
};

struct ScriptedReply {
  std::string text;
  std::optional<std::uint64_t> prompt_tokens;
  std::optional<std::uint64_t> completion_tokens;
};

/// FIFO queue of canned replies per stage. Throws EmptyResponse when a stage's queue is exhausted.
class ScriptedChat final : public ChatModel {
 public:
  ScriptedChat() = default;
  void push(Stage stage, ScriptedReply reply);
  void push(Stage stage, std::string text) { push(stage, ScriptedReply{std::move(text), {}, {}}); }
  /// Usage reported for replies that do not carry their own counts.
  void set_default_usage(std::optional<std::uint64_t> prompt_tokens, std::optional<std::uint64_t> completion_tokens);
  std::size_t remaining(Stage stage) const;
  /// Calls received so far, in order.
  std::vector<ChatExchange> history() const;

  /// JSON object mapping stage name to an array of strings or {"text", "prompt_tokens", "completion_tokens"}.
  static std::unique_ptr<ScriptedChat> from_json_file(const std::string& path);

  ChatExchange chat(const std::optional<std::string>& system_text, const std::string& user_text,
                    double temperature, Stage stage) override;

 private:
  mutable std::mutex mu_;
  std::map<Stage, std::deque<ScriptedReply>> queues_;
  std::vector<ChatExchange> history_;
  std::optional<std::uint64_t> default_prompt_tokens_;
  std::optional<std::uint64_t> default_completion_tokens_;
};

/// Stateless heuristic chat model that understands the engine's default prompts well enough
/// to drive full pipeline runs. Replies are pure functions of (stage, prompt text).
class RuleChat final : public ChatModel {
 public:
  RuleChat(std::optional<std::uint64_t> prompt_tokens = {}, std::optional<std::uint64_t> completion_tokens = {})
      : prompt_tokens_(prompt_tokens), completion_tokens_(completion_tokens) {}

  ChatExchange chat(const std::optional<std::string>& system_text, const std::string& user_text,
                    double temperature, Stage stage) override;

  static std::string reply(std::string_view system_text, std::string_view user_text, Stage stage);

 private:
  std::optional<std::uint64_t> prompt_tokens_;
  std::optional<std::uint64_t> completion_tokens_;
};

// ---------------------------------------------------------------------------
// HTTP implementations (OpenAI-style chat/embeddings, plus a /rerank scoring service).

class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(BackendConfig cfg);
  std::size_t dim() const override { return cfg_.dim; }
  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;

 private:
  BackendConfig cfg_;
};

class HttpReranker final : public Reranker {
 public:
  explicit HttpReranker(BackendConfig cfg);
  std::vector<double> score(std::string_view query, const std::vector<std::string>& passages) override;

 private:
  BackendConfig cfg_;
};

class HttpChat final : public ChatModel {
 public:
  explicit HttpChat(BackendConfig cfg);
  ChatExchange chat(const std::optional<std::string>& system_text, const std::string& user_text,
                    double temperature, Stage stage) override;

 private:
  BackendConfig cfg_;
};

std::unique_ptr<Embedder> make_embedder(const BackendConfig& cfg);
std::unique_ptr<Reranker> make_reranker(const BackendConfig& cfg);
std::unique_ptr<ChatModel> make_chat(const BackendConfig& cfg);

/// Every model role the engine talks to. The chat roles may share an instance.
struct Backends {
  std::shared_ptr<Embedder> embedder;
  std::shared_ptr<Reranker> doc_reranker;
  std::shared_ptr<Reranker> passage_reranker;
  std::shared_ptr<ChatModel> chat_small;      // summarize, transform, curate, classify
  std::shared_ptr<ChatModel> chat_generator;  // answer generation
  std::shared_ptr<ChatModel> judge;
};

/// Mock embedder + overlap rerankers with the given chat model in every chat role.
Backends mock_backends(std::shared_ptr<ChatModel> chat, std::size_t dim = 64);

}  // namespace hirec
