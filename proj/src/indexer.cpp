#include "hirec/indexer.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <array>
#include <atomic>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

namespace hirec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'R', 'E', 'C', 'E', 'M', 'B', '1'};
constexpr std::size_t kFallbackChars = 1024;

template <typename T>
void put_le(std::ostream& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw ParseError("embeddings.bin: truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

std::string utf8_prefix(const std::string& s, std::size_t max_bytes) {
  if (s.size() <= max_bytes) return s;
  std::size_t n = max_bytes;
  while (n > 0 && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
  return s.substr(0, n);
}

}  // namespace

std::string_view to_string(SummarySource s) noexcept {
  return s == SummarySource::llm ? "llm" : "fallback_raw";
}

DocIndex::DocIndex(std::vector<std::string> ids, Matrix vectors, std::map<std::string, DocSummary> summaries)
    : ids_(std::move(ids)), vectors_(std::move(vectors)), summaries_(std::move(summaries)) {
  if (static_cast<std::size_t>(vectors_.rows()) != ids_.size())
    throw ParseError("index: vector rows do not match id count");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!rows_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) throw DuplicateDocId(ids_[i]);
    if (!summaries_.count(ids_[i])) throw ParseError("index: no summary for " + ids_[i]);
  }
  if (summaries_.size() != ids_.size()) throw ParseError("index: summaries without vectors");
}

const DocSummary* DocIndex::summary(const std::string& doc_id) const {
  auto it = summaries_.find(doc_id);
  return it == summaries_.end() ? nullptr : &it->second;
}

std::optional<Eigen::Index> DocIndex::row_of(const std::string& doc_id) const {
  auto it = rows_.find(doc_id);
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

void save_summaries(const std::vector<DocSummary>& summaries, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write " + path);
  for (const auto& s : summaries) {
    json j = {{"doc_id", s.doc_id},
              {"summary", s.summary_text},
              {"source", std::string(to_string(s.source))},
              {"content_hash", text::hex64(s.content_hash)}};
    out << j.dump() << '\n';
  }
}

std::vector<DocSummary> load_summaries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<DocSummary> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      DocSummary s;
      s.doc_id = j.at("doc_id").get<std::string>();
      s.summary_text = j.at("summary").get<std::string>();
      s.source = j.at("source").get<std::string>() == "llm" ? SummarySource::llm : SummarySource::fallback_raw;
      if (j.contains("content_hash")) s.content_hash = std::stoull(j.at("content_hash").get<std::string>(), nullptr, 16);
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw ParseError(path + ": " + e.what(), lineno);
    }
  }
  return out;
}

void DocIndex::save(const std::string& dir) const {
  fs::create_directories(dir);
  std::vector<DocSummary> ordered;
  ordered.reserve(ids_.size());
  for (const auto& id : ids_) ordered.push_back(summaries_.at(id));
  save_summaries(ordered, (fs::path(dir) / "summaries.jsonl").string());

  std::ofstream bin(fs::path(dir) / "embeddings.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw ParseError("cannot write embeddings.bin in " + dir);
  bin.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(dim()));
  put_le<std::uint64_t>(bin, static_cast<std::uint64_t>(size()));
  for (Eigen::Index r = 0; r < vectors_.rows(); ++r)
    for (Eigen::Index c = 0; c < vectors_.cols(); ++c) put_le<std::uint32_t>(bin, std::bit_cast<std::uint32_t>(vectors_(r, c)));

  std::ofstream ids(fs::path(dir) / "ids.txt", std::ios::binary | std::ios::trunc);
  for (const auto& id : ids_) ids << id << '\n';
}

bool DocIndex::exists(const std::string& dir) {
  return fs::exists(fs::path(dir) / "embeddings.bin") && fs::exists(fs::path(dir) / "ids.txt") &&
         fs::exists(fs::path(dir) / "summaries.jsonl");
}

DocIndex DocIndex::load(const std::string& dir) {
  if (!exists(dir)) throw ParseError("no index found in " + dir);
  std::vector<std::string> ids;
  {
    std::ifstream in(fs::path(dir) / "ids.txt");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ids.push_back(line);
  }

  std::ifstream bin(fs::path(dir) / "embeddings.bin", std::ios::binary);
  std::array<char, 8> magic{};
  bin.read(magic.data(), magic.size());
  if (!bin || magic != kMagic) throw ParseError("embeddings.bin: bad magic");
  const auto dim = get_le<std::uint32_t>(bin);
  const auto count = get_le<std::uint64_t>(bin);
  if (count != ids.size()) throw ParseError("embeddings.bin row count does not match ids.txt");
  Matrix vectors(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < vectors.rows(); ++r)
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) vectors(r, c) = std::bit_cast<float>(get_le<std::uint32_t>(bin));

  std::map<std::string, DocSummary> summaries;
  for (auto& s : load_summaries((fs::path(dir) / "summaries.jsonl").string())) {
    std::string id = s.doc_id;
    summaries.emplace(std::move(id), std::move(s));
  }
  return DocIndex(std::move(ids), std::move(vectors), std::move(summaries));
}

// ---------------------------------------------------------------------------

DocSummary summarize_cover(const DocumentRecord& doc, ChatModel& chat, const PromptSet& prompts, double temperature) {
  const PageText* cover = doc.page(1);
  if (!cover || text::trim(cover->text).empty()) {
    cover = nullptr;
    for (const auto& p : doc.pages)
      if (!text::trim(p.text).empty()) {
        cover = &p;
        break;
      }
  }
  if (!cover) throw EmptyDocument(doc.doc_id);

  DocSummary s{doc.doc_id, {}, SummarySource::llm, doc.content_hash()};
  try {
    auto ex = chat.chat(std::nullopt, text::fill_template(prompts.get(PromptSet::summarize), {{"text", cover->text}}),
                        temperature, Stage::summarize);
    const auto trimmed = text::trim(ex.response_text);
    if (!trimmed.empty()) {
      s.summary_text = std::string(trimmed);
      return s;
    }
  } catch (const Error& e) {
    spdlog::warn("summarize {}: {}; using raw cover text", doc.doc_id, e.what());
  }
  s.source = SummarySource::fallback_raw;
  s.summary_text = utf8_prefix(cover->text, kFallbackChars);
  return s;
}

namespace {

std::vector<DocSummary> summarize_all(const Corpus& corpus, ChatModel& chat, const PromptSet& prompts,
                                      const IndexBuildOptions& opts, const std::vector<DocSummary>* previous,
                                      IndexBuildReport& report) {
  const auto& docs = corpus.documents();
  std::map<std::string, const DocSummary*> prev;
  if (previous)
    for (const auto& s : *previous) prev[s.doc_id] = &s;

  std::vector<DocSummary> out(docs.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto it = prev.find(docs[i].doc_id);
    if (it != prev.end() && it->second->content_hash == docs[i].content_hash() && !it->second->summary_text.empty()) {
      out[i] = *it->second;
      ++report.reused;
    } else {
      todo.push_back(i);
    }
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(todo.size());
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const auto& doc = docs[todo[k]];
      try {
        out[todo[k]] = summarize_cover(doc, chat, prompts, opts.temperature);
      } catch (const EmptyDocument&) {
        // Keep the index total: a textless filing is represented by its metadata line.
        std::string line = doc.doc_id;
        for (const auto* part : {&doc.company_name, &doc.form_type_raw, &doc.fiscal_period})
          if (!part->empty()) line += " " + *part;
        out[todo[k]] = DocSummary{doc.doc_id, line, SummarySource::fallback_raw, doc.content_hash()};
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(opts.parallel, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t i : todo)
    if (out[i].source == SummarySource::fallback_raw) ++report.fallbacks;
  report.summarized += todo.size();
  return out;
}

}  // namespace

DocIndex build_index(const Corpus& corpus, ChatModel& chat, Embedder& embedder, const PromptSet& prompts,
                     const IndexBuildOptions& opts, const std::vector<DocSummary>* previous_summaries,
                     const DocIndex* previous, IndexBuildReport* report) {
  if (corpus.empty()) throw EmptyCorpus();
  IndexBuildReport local;
  IndexBuildReport& rep = report ? *report : local;

  auto summaries = summarize_all(corpus, chat, prompts, opts, previous_summaries, rep);

  const auto n = static_cast<Eigen::Index>(summaries.size());
  DocIndex::Matrix vectors(n, static_cast<Eigen::Index>(embedder.dim()));
  std::vector<Eigen::Index> pending;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = summaries[static_cast<std::size_t>(i)];
    if (previous && previous->dim() == embedder.dim()) {
      const auto* old = previous->summary(s.doc_id);
      const auto row = previous->row_of(s.doc_id);
      if (old && row && old->summary_text == s.summary_text) {
        vectors.row(i) = previous->vectors().row(*row);
        continue;
      }
    }
    pending.push_back(i);
  }

  const std::size_t batch = std::max<std::size_t>(1, opts.embed_batch);
  for (std::size_t b = 0; b < pending.size(); b += batch) {
    std::vector<std::string> texts;
    const std::size_t e = std::min(pending.size(), b + batch);
    for (std::size_t k = b; k < e; ++k) texts.push_back(summaries[static_cast<std::size_t>(pending[k])].summary_text);
    const auto vecs = embedder.embed(texts);
    if (vecs.size() != texts.size()) throw MalformedResponse("embedder returned wrong number of vectors");
    for (std::size_t k = b; k < e; ++k) {
      const auto& v = vecs[k - b];
      if (static_cast<std::size_t>(v.size()) != embedder.dim()) throw DimensionMismatch(embedder.dim(), v.size());
      vectors.row(pending[k]) = v.cast<float>().transpose();
    }
    rep.embedded += e - b;
  }

  std::vector<std::string> ids;
  std::map<std::string, DocSummary> by_id;
  for (auto& s : summaries) {
    ids.push_back(s.doc_id);
    std::string id = s.doc_id;
    by_id.emplace(std::move(id), std::move(s));
  }
  return DocIndex(std::move(ids), std::move(vectors), std::move(by_id));
}

DocIndex build_index_dir(const Corpus& corpus, ChatModel& chat, Embedder& embedder, const std::string& dir,
                         const PromptSet& prompts, const IndexBuildOptions& opts, IndexBuildReport* report) {
  fs::create_directories(dir);
  const std::string partial = (fs::path(dir) / "summaries.partial.jsonl").string();

  std::optional<DocIndex> previous;
  if (DocIndex::exists(dir)) {
    try {
      previous = DocIndex::load(dir);
    } catch (const Error& e) {
      spdlog::warn("ignoring unreadable index in {}: {}", dir, e.what());
    }
  }
  std::vector<DocSummary> prev_summaries;
  if (fs::exists(partial)) {
    prev_summaries = load_summaries(partial);
  } else if (previous) {
    for (const auto& [id, s] : previous->summaries()) prev_summaries.push_back(s);
  }

  IndexBuildReport local;
  IndexBuildReport& rep = report ? *report : local;
  if (corpus.empty()) throw EmptyCorpus();

  // Checkpoint summaries first so an embedding failure does not cost a re-summarization.
  auto summaries = summarize_all(corpus, chat, prompts, opts, &prev_summaries, rep);
  save_summaries(summaries, partial);

  // Every summary is now current, so the second pass only embeds.
  IndexBuildReport embed_rep;
  DocIndex index = build_index(corpus, chat, embedder, prompts, opts, &summaries, previous ? &*previous : nullptr,
                               &embed_rep);
  rep.embedded += embed_rep.embedded;
  index.save(dir);
  fs::remove(partial);
  return index;
}

}  // namespace hirec
