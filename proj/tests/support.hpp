#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/indexer.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>

namespace hirec::testing {

inline std::string source_path(const std::string& rel) { return std::string(HIREC_SOURCE_DIR) + "/" + rel; }

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("hirec-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::string str(const std::string& rel = {}) const { return rel.empty() ? path_.string() : (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

inline Corpus toy_corpus() { return Corpus::load_jsonl(source_path("data/toy/corpus.jsonl")); }

/// Index of the toy corpus built with the rule chat and the 64-dim hashing embedder.
inline DocIndex toy_index(const Corpus& corpus) {
  RuleChat chat;
  HashingEmbedder emb(64);
  return build_index(corpus, chat, emb);
}

inline DocumentRecord make_doc(std::string id, std::vector<std::pair<int, std::string>> pages) {
  DocumentRecord d;
  d.doc_id = std::move(id);
  d.ticker = company_of(d.doc_id);
  d.company_name = d.ticker + " Inc.";
  d.form_type = FormType::form_10k;
  d.form_type_raw = "10-K";
  d.fiscal_period = "FY";
  for (auto& [n, t] : pages) d.pages.push_back({n, std::move(t)});
  return d;
}

/// Chat model whose reply is computed by a callback; reports fixed usage.
class FnChat final : public ChatModel {
 public:
  using Fn = std::function<std::string(Stage, const std::string& user)>;
  explicit FnChat(Fn fn, std::uint64_t prompt_tokens = 100, std::uint64_t completion_tokens = 20)
      : fn_(std::move(fn)), prompt_tokens_(prompt_tokens), completion_tokens_(completion_tokens) {}

  ChatExchange chat(const std::optional<std::string>& system_text, const std::string& user_text, double temperature,
                    Stage stage) override {
    ChatExchange ex{system_text, user_text, temperature, fn_(stage, user_text), prompt_tokens_, completion_tokens_,
                    false, stage};
    std::lock_guard lk(mu_);
    ++calls_[stage];
    return ex;
  }
  std::size_t calls(Stage s) const {
    std::lock_guard lk(mu_);
    auto it = calls_.find(s);
    return it == calls_.end() ? 0 : it->second;
  }

 private:
  Fn fn_;
  std::uint64_t prompt_tokens_, completion_tokens_;
  mutable std::mutex mu_;
  std::map<Stage, std::size_t> calls_;
};

inline const char* kAdobeQuestion =
    "What is Adobe's year-over-year change in unadjusted operating income from FY2015 to FY2016 (in units of "
    "percents and round to one decimal place)? Give a solution to the question by using the income statement.";

}  // namespace hirec::testing
