#include "hirec/retrieval.hpp"

#include "hirec/dense.hpp"
#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>

namespace hirec {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

void sort_docs(std::vector<ScoredDoc>& docs) {
  std::sort(docs.begin(), docs.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.ordering_key() != b.ordering_key()) return a.ordering_key() > b.ordering_key();
    return a.doc_id < b.doc_id;
  });
}

void sort_passages(std::vector<ScoredPassage>& passages) {
  std::sort(passages.begin(), passages.end(), [](const ScoredPassage& a, const ScoredPassage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.passage.passage_id < b.passage.passage_id;
  });
}

std::optional<std::string> parse_transformed_query(std::string_view reply) {
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto nl = reply.find('\n', pos);
    auto line = text::trim(reply.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    if (text::istarts_with(line, "## query:")) {
      auto value = text::trim(line.substr(9));
      if (value.empty()) return std::nullopt;
      return std::string(value);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  const auto bare = text::trim(reply);
  if (bare.empty() || bare.find('\n') != std::string_view::npos || bare.front() == '#') return std::nullopt;
  return std::string(bare);
}

RetrievalQuery transform_query(std::string_view q, ChatModel& chat, const PromptSet& prompts, double temperature,
                               bool is_complementary, std::vector<ChatExchange>* log) {
  RetrievalQuery rq{std::string(q), std::string(q), is_complementary};
  try {
    auto ex = chat.chat(std::nullopt, text::fill_template(prompts.get(PromptSet::transform), {{"question", rq.original_q}}),
                        temperature, Stage::transform);
    if (log) log->push_back(ex);
    if (auto refined = parse_transformed_query(ex.response_text)) rq.refined_q = std::move(*refined);
  } catch (const Error& e) {
    spdlog::warn("query transformation failed ({}); using the question as is", e.what());
  }
  if (text::trim(rq.refined_q).empty()) rq.refined_q = rq.original_q;
  return rq;
}

std::vector<ScoredDoc> dense_retrieve(const RetrievalQuery& rq, const DocIndex& index, Embedder& embedder,
                                      std::size_t k_cand) {
  if (index.empty() || k_cand == 0) return {};
  const auto vecs = embedder.embed({rq.refined_q});
  if (vecs.size() != 1) throw MalformedResponse("embedder returned no query vector");
  if (static_cast<std::size_t>(vecs.front().size()) != index.dim()) throw DimensionMismatch(index.dim(), vecs.front().size());

  const auto& ids = index.ids();
  const auto top = top_k_inner_product(index.vectors(), vecs.front(), k_cand, [&](Eigen::Index a, Eigen::Index b) {
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  std::vector<ScoredDoc> out;
  out.reserve(top.size());
  for (const auto& r : top) out.push_back({ids[static_cast<std::size_t>(r.row)], r.score, std::nullopt});
  return out;
}

std::vector<ScoredDoc> rerank_docs(const RetrievalQuery& rq, std::vector<ScoredDoc> cands, const DocIndex& index,
                                   Reranker& reranker, std::size_t k_docs) {
  if (cands.empty()) return cands;
  std::vector<std::string> texts;
  texts.reserve(cands.size());
  for (const auto& c : cands) {
    const auto* s = index.summary(c.doc_id);
    texts.push_back(s ? s->summary_text : c.doc_id);
  }
  const auto scores = reranker.score(rq.refined_q, texts);
  if (scores.size() != cands.size()) throw MalformedResponse("document reranker returned wrong number of scores");
  for (std::size_t i = 0; i < cands.size(); ++i) cands[i].rerank_score = scores[i];
  sort_docs(cands);
  if (cands.size() > k_docs) cands.resize(k_docs);
  return cands;
}

std::vector<ScoredPassage> retrieve_passages(std::string_view query, const std::vector<ScoredDoc>& docs,
                                             const Corpus& corpus, Reranker& reranker, std::size_t k_pass) {
  std::vector<ScoredPassage> all;
  for (const auto& d : docs) {
    const auto passages = corpus.passages(d.doc_id);
    if (passages->empty()) continue;
    std::vector<std::string> rendered;
    rendered.reserve(passages->size());
    for (const auto& p : *passages) rendered.push_back(render_passage(p));
    const auto scores = reranker.score(query, rendered);
    if (scores.size() != passages->size()) throw MalformedResponse("passage reranker returned wrong number of scores");
    for (std::size_t i = 0; i < passages->size(); ++i) {
      if (!(scores[i] >= 0.0 && scores[i] <= 1.0)) throw MalformedResponse("passage score outside [0,1]");
      all.push_back({(*passages)[i], scores[i]});
    }
  }
  sort_passages(all);
  if (all.size() > k_pass) all.resize(k_pass);
  return all;
}

RetrievalRecord hierarchical_retrieve(std::string_view q, bool is_complementary, const Corpus& corpus,
                                      const DocIndex& index, const Backends& backends, const PromptSet& prompts,
                                      const RetrievalConfig& cfg) {
  RetrievalRecord rec;
  auto t0 = std::chrono::steady_clock::now();
  rec.query = transform_query(q, *backends.chat_small, prompts, cfg.temperature, is_complementary, &rec.exchanges);
  rec.transform_ms = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  rec.candidates = dense_retrieve(rec.query, index, *backends.embedder, cfg.k_cand_docs);
  rec.dense_ms = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  rec.docs = rerank_docs(rec.query, rec.candidates, index, *backends.doc_reranker, cfg.k_docs);
  rec.doc_rerank_ms = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  rec.passages = retrieve_passages(rec.query.original_q, rec.docs, corpus, *backends.passage_reranker, cfg.k_pass);
  rec.passage_ms = elapsed_ms(t0);
  return rec;
}

}  // namespace hirec
