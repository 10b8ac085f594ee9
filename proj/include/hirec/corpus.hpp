#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hirec {

enum class FormType { form_10k, form_10q, form_8k, other };

std::string_view to_string(FormType f) noexcept;
FormType parse_form_type(std::string_view s) noexcept;

struct PageText {
  int page_no = 1;
  std::string text;
};

struct DocumentRecord {
  std::string doc_id;
  std::string ticker;
  std::string company_name;
  FormType form_type = FormType::other;
  std::string form_type_raw;
  std::string fiscal_period;
  std::vector<PageText> pages;

  const PageText* page(int page_no) const noexcept;
  /// Hash of everything that feeds summarization and chunking.
  std::uint64_t content_hash() const;
};

/// Half-open byte range into a page's text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Passage {
  std::string passage_id;
  std::string doc_id;
  int page_no = 0;
  int chunk_index = 0;
  std::string title;
  std::string content;
  CharSpan span;

  friend bool operator==(const Passage&, const Passage&) = default;
};

/// Page identity used for provenance and page-level metrics.
struct PageRef {
  std::string doc_id;
  int page_no = 0;
  friend auto operator<=>(const PageRef&, const PageRef&) = default;
};

struct ChunkOptions {
  std::size_t chunk_size = 1024;
  std::size_t overlap = 30;
};

/// Greedy left-to-right split of one page. Each chunk ends at the latest boundary of the
/// highest-priority separator class found in (start, start + chunk_size]:
/// blank line, newline, sentence end (".!?" + whitespace), whitespace, then a hard cut that
/// never splits a UTF-8 sequence. The next chunk starts `overlap` bytes before the previous end,
/// advanced past a partial token when a whitespace exists before that end.
/// Throws ParseError unless chunk_size > overlap.
std::vector<CharSpan> chunk_spans(std::string_view text, const ChunkOptions& opts = {});

std::string make_passage_id(std::string_view doc_id, int page_no, int chunk_index);

/// Chunks of a single page; title is the owning doc_id.
std::vector<Passage> chunk_page(std::string_view doc_id, const PageText& page, const ChunkOptions& opts = {});

/// title + " " + content, or bare content when the title is empty.
std::string render_passage(const Passage& p);

struct CorpusStats {
  std::size_t docs = 0;
  std::size_t pages = 0;
};

/// Immutable after load. Passage chunking is lazy and cached per document.
class Corpus {
 public:
  explicit Corpus(std::vector<DocumentRecord> docs, ChunkOptions chunking = {});

  /// Corpus JSONL, one document per line. Throws ParseError (with line), DuplicateDocId, EmptyCorpus.
  static Corpus load_jsonl(const std::string& path, ChunkOptions chunking = {});

  const std::vector<DocumentRecord>& documents() const noexcept { return docs_; }
  const DocumentRecord* find(std::string_view doc_id) const;
  CorpusStats stats() const noexcept { return stats_; }
  const ChunkOptions& chunking() const noexcept { return chunking_; }
  bool empty() const noexcept { return docs_.empty(); }

  /// All passages of a document in (page, chunk) order; empty for unknown ids.
  std::shared_ptr<const std::vector<Passage>> passages(std::string_view doc_id) const;

  /// Re-slices a passage from its page text; nullopt if the provenance is dangling.
  std::optional<std::string> slice(const Passage& p) const;

 private:
  std::vector<DocumentRecord> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  ChunkOptions chunking_;
  CorpusStats stats_;
  mutable std::mutex cache_mu_;
  mutable std::map<std::string, std::shared_ptr<const std::vector<Passage>>, std::less<>> cache_;
};

/// Company key of a doc id: the prefix before the first underscore (TICKER_PERIOD_FORM).
std::string company_of(std::string_view doc_id);

}  // namespace hirec
