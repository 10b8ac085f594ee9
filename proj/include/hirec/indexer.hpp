#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/prompts.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hirec {

enum class SummarySource { llm, fallback_raw };

std::string_view to_string(SummarySource s) noexcept;

/// Cover-page summary used as the document's indexed representation.
struct DocSummary {
  std::string doc_id;
  std::string summary_text;
  SummarySource source = SummarySource::llm;
  std::uint64_t content_hash = 0;

  friend bool operator==(const DocSummary&, const DocSummary&) = default;
};

/// Document-level dense index: one float32 row per document, row-aligned with ids.
class DocIndex {
 public:
  using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  DocIndex() = default;
  DocIndex(std::vector<std::string> ids, Matrix vectors, std::map<std::string, DocSummary> summaries);

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors_.cols()); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix& vectors() const noexcept { return vectors_; }
  const std::map<std::string, DocSummary>& summaries() const noexcept { return summaries_; }
  const DocSummary* summary(const std::string& doc_id) const;
  std::optional<Eigen::Index> row_of(const std::string& doc_id) const;

  /// Writes summaries.jsonl, embeddings.bin and ids.txt into `dir` (created if needed).
  void save(const std::string& dir) const;
  /// Throws ParseError on missing or inconsistent files.
  static DocIndex load(const std::string& dir);
  static bool exists(const std::string& dir);

  friend bool operator==(const DocIndex& a, const DocIndex& b) {
    return a.ids_ == b.ids_ && a.vectors_.rows() == b.vectors_.rows() && a.vectors_.cols() == b.vectors_.cols() &&
           a.vectors_ == b.vectors_ && a.summaries_ == b.summaries_;
  }

 private:
  std::vector<std::string> ids_;
  Matrix vectors_;
  std::map<std::string, DocSummary> summaries_;
  std::map<std::string, Eigen::Index, std::less<>> rows_;
};

/// Summarizes the cover page (page 1, or the first page with text when page 1 is blank).
/// Chat failures fall back to the first 1024 bytes of that page. Throws EmptyDocument when no page has text.
DocSummary summarize_cover(const DocumentRecord& doc, ChatModel& chat, const PromptSet& prompts = PromptSet::defaults(),
                           double temperature = 0.01);

struct IndexBuildOptions {
  std::size_t parallel = 1;
  std::size_t embed_batch = 32;
  double temperature = 0.01;
};

struct IndexBuildReport {
  std::size_t summarized = 0;  // new LLM or fallback summaries
  std::size_t reused = 0;      // summaries kept from a previous build
  std::size_t embedded = 0;    // vectors computed this run
  std::size_t fallbacks = 0;
};

/// Builds the index in memory. Summaries whose content hash matches `previous` are reused, and
/// so are their vectors when the summary text is unchanged. Embedding failures propagate.
DocIndex build_index(const Corpus& corpus, ChatModel& chat, Embedder& embedder,
                     const PromptSet& prompts = PromptSet::defaults(), const IndexBuildOptions& opts = {},
                     const std::vector<DocSummary>* previous_summaries = nullptr,
                     const DocIndex* previous = nullptr, IndexBuildReport* report = nullptr);

/// Incremental on-disk build: reuses whatever `dir` already holds, checkpoints summaries before
/// embedding so a failed embedding pass resumes without re-summarizing, then saves the index.
DocIndex build_index_dir(const Corpus& corpus, ChatModel& chat, Embedder& embedder, const std::string& dir,
                         const PromptSet& prompts = PromptSet::defaults(), const IndexBuildOptions& opts = {},
                         IndexBuildReport* report = nullptr);

std::vector<DocSummary> load_summaries(const std::string& path);
void save_summaries(const std::vector<DocSummary>& summaries, const std::string& path);

}  // namespace hirec
