#include "hirec/corpus.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <json.hpp>

#include <array>
#include <cstdio>
#include <fstream>

namespace hirec {

using nlohmann::json;

std::string_view to_string(FormType f) noexcept {
  switch (f) {
    case FormType::form_10k: return "10-K";
    case FormType::form_10q: return "10-Q";
    case FormType::form_8k: return "8-K";
    case FormType::other: return "other";
  }
  return "other";
}

FormType parse_form_type(std::string_view s) noexcept {
  const std::string l = text::to_lower(text::trim(s));
  if (l == "10-k" || l == "10k") return FormType::form_10k;
  if (l == "10-q" || l == "10q") return FormType::form_10q;
  if (l == "8-k" || l == "8k") return FormType::form_8k;
  return FormType::other;
}

const PageText* DocumentRecord::page(int page_no) const noexcept {
  for (const auto& p : pages)
    if (p.page_no == page_no) return &p;
  return nullptr;
}

std::uint64_t DocumentRecord::content_hash() const {
  std::string buf = doc_id;
  buf.push_back('\0');
  for (const auto& p : pages) {
    buf += std::to_string(p.page_no);
    buf.push_back('\0');
    buf += p.text;
    buf.push_back('\0');
  }
  return text::fnv1a64(buf);
}

// ---------------------------------------------------------------------------

namespace {

bool is_space(char c) noexcept { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_continuation(char c) noexcept { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

// Separator classes in priority order. Each returns true if a separator of the class ends at `e`.
bool ends_blank_line(std::string_view t, std::size_t e) { return e >= 2 && t[e - 1] == '\n' && t[e - 2] == '\n'; }
bool ends_newline(std::string_view t, std::size_t e) { return e >= 1 && t[e - 1] == '\n'; }
bool ends_sentence(std::string_view t, std::size_t e) {
  return e >= 2 && is_space(t[e - 1]) && (t[e - 2] == '.' || t[e - 2] == '!' || t[e - 2] == '?');
}
bool ends_whitespace(std::string_view t, std::size_t e) { return e >= 1 && is_space(t[e - 1]); }

std::size_t best_break(std::string_view t, std::size_t start, std::size_t limit) {
  using Pred = bool (*)(std::string_view, std::size_t);
  constexpr std::array<Pred, 4> classes = {ends_blank_line, ends_newline, ends_sentence, ends_whitespace};
  for (Pred pred : classes) {
    for (std::size_t e = limit; e > start; --e) {
      // A separator must lie entirely inside the chunk.
      if (pred(t, e) && (pred != ends_blank_line || e - 2 >= start) && (pred != ends_sentence || e - 2 >= start))
        return e;
    }
  }
  std::size_t e = limit;
  while (e > start + 1 && e < t.size() && is_continuation(t[e])) --e;
  return e;
}

std::size_t snap_start(std::string_view t, std::size_t pos, std::size_t end) {
  const bool mid_token = pos > 0 && !is_space(t[pos - 1]) && !is_space(t[pos]);
  if (mid_token) {
    for (std::size_t i = pos; i < end; ++i)
      if (is_space(t[i])) return i + 1;
  }
  while (pos < end && is_continuation(t[pos])) ++pos;
  return pos;
}

}  // namespace

std::vector<CharSpan> chunk_spans(std::string_view text, const ChunkOptions& opts) {
  if (opts.chunk_size == 0 || opts.chunk_size <= opts.overlap)
    throw ParseError("chunk_size must exceed overlap");
  std::vector<CharSpan> spans;
  const std::size_t n = text.size();
  std::size_t start = 0;
  while (start < n) {
    const std::size_t limit = start + opts.chunk_size;
    const std::size_t end = limit >= n ? n : best_break(text, start, limit);
    spans.push_back({start, end});
    if (end >= n) break;
    std::size_t next = end;
    if (end - start > opts.overlap) next = snap_start(text, end - opts.overlap, end);
    if (next <= start) next = end;
    start = next;
  }
  return spans;
}

std::string make_passage_id(std::string_view doc_id, int page_no, int chunk_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "#p%05d#c%04d", page_no, chunk_index);
  return std::string(doc_id) + buf;
}

std::vector<Passage> chunk_page(std::string_view doc_id, const PageText& page, const ChunkOptions& opts) {
  std::vector<Passage> out;
  int idx = 0;
  for (const auto& span : chunk_spans(page.text, opts)) {
    Passage p;
    p.passage_id = make_passage_id(doc_id, page.page_no, idx);
    p.doc_id = std::string(doc_id);
    p.page_no = page.page_no;
    p.chunk_index = idx++;
    p.title = std::string(doc_id);
    p.content = page.text.substr(span.begin, span.size());
    p.span = span;
    out.push_back(std::move(p));
  }
  return out;
}

std::string render_passage(const Passage& p) {
  if (p.title.empty()) return p.content;
  return p.title + " " + p.content;
}

// ---------------------------------------------------------------------------

Corpus::Corpus(std::vector<DocumentRecord> docs, ChunkOptions chunking)
    : docs_(std::move(docs)), chunking_(chunking) {
  if (chunking_.chunk_size <= chunking_.overlap) throw ParseError("chunk_size must exceed overlap");
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    const auto& d = docs_[i];
    if (!by_id_.emplace(d.doc_id, i).second) throw DuplicateDocId(d.doc_id);
    stats_.pages += d.pages.size();
  }
  stats_.docs = docs_.size();
}

namespace {

DocumentRecord parse_document(const json& j, std::size_t line) {
  auto str = [&](const char* key, bool required) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      if (required) throw ParseError(std::string("missing field \"") + key + "\"", line);
      return {};
    }
    if (!it->is_string()) throw ParseError(std::string("field \"") + key + "\" must be a string", line);
    return it->get<std::string>();
  };

  if (!j.is_object()) throw ParseError("expected a JSON object", line);
  DocumentRecord d;
  d.doc_id = str("doc_id", true);
  if (d.doc_id.empty()) throw ParseError("doc_id is empty", line);
  d.ticker = str("ticker", false);
  d.company_name = str("company", false);
  d.form_type_raw = str("form_type", false);
  d.form_type = parse_form_type(d.form_type_raw);
  d.fiscal_period = str("period", false);

  auto pages = j.find("pages");
  if (pages == j.end() || !pages->is_array()) throw ParseError("missing \"pages\" array", line);
  if (pages->empty()) throw ParseError("document " + d.doc_id + " has no pages", line);
  int prev = 0;
  for (const auto& pj : *pages) {
    if (!pj.is_object() || !pj.contains("page_no") || !pj.at("page_no").is_number_integer())
      throw ParseError("page entries need an integer \"page_no\"", line);
    PageText p;
    p.page_no = pj.at("page_no").get<int>();
    if (p.page_no < 1 || p.page_no <= prev)
      throw ParseError("page_no must be 1-based and strictly increasing in " + d.doc_id, line);
    prev = p.page_no;
    if (auto t = pj.find("text"); t != pj.end() && !t->is_null()) {
      if (!t->is_string()) throw ParseError("page text must be a string", line);
      p.text = t->get<std::string>();
    }
    d.pages.push_back(std::move(p));
  }
  return d;
}

}  // namespace

Corpus Corpus::load_jsonl(const std::string& path, ChunkOptions chunking) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  std::vector<DocumentRecord> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    docs.push_back(parse_document(j, lineno));
  }
  if (docs.empty()) throw EmptyCorpus("corpus file has no documents: " + path);
  return Corpus(std::move(docs), chunking);
}

const DocumentRecord* Corpus::find(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  return it == by_id_.end() ? nullptr : &docs_[it->second];
}

std::shared_ptr<const std::vector<Passage>> Corpus::passages(std::string_view doc_id) const {
  {
    std::lock_guard lk(cache_mu_);
    if (auto it = cache_.find(doc_id); it != cache_.end()) return it->second;
  }
  auto out = std::make_shared<std::vector<Passage>>();
  if (const auto* d = find(doc_id)) {
    for (const auto& page : d->pages) {
      auto chunks = chunk_page(d->doc_id, page, chunking_);
      out->insert(out->end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
    }
  }
  std::lock_guard lk(cache_mu_);
  return cache_.emplace(std::string(doc_id), std::move(out)).first->second;
}

std::optional<std::string> Corpus::slice(const Passage& p) const {
  const auto* d = find(p.doc_id);
  if (!d) return std::nullopt;
  const auto* page = d->page(p.page_no);
  if (!page || p.span.end > page->text.size() || p.span.begin > p.span.end) return std::nullopt;
  return page->text.substr(p.span.begin, p.span.size());
}

std::string company_of(std::string_view doc_id) {
  auto u = doc_id.find('_');
  return std::string(u == std::string_view::npos ? doc_id : doc_id.substr(0, u));
}

}  // namespace hirec
