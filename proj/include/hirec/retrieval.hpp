#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/indexer.hpp"
#include "hirec/prompts.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hirec {

struct RetrievalQuery {
  std::string original_q;
  std::string refined_q;
  bool is_complementary = false;
};

struct ScoredDoc {
  std::string doc_id;
  double dense_score = 0.0;
  std::optional<double> rerank_score;

  double ordering_key() const noexcept { return rerank_score.value_or(dense_score); }
};

struct ScoredPassage {
  Passage passage;
  double score = 0.0;
};

/// Descending ordering key, ties by ascending doc_id.
void sort_docs(std::vector<ScoredDoc>& docs);
/// Descending score, ties by ascending passage_id.
void sort_passages(std::vector<ScoredPassage>& passages);

/// Extracts the rewritten query from a transformation reply: the first "## Query:" line, or the
/// whole reply when it is a single non-header line. nullopt when neither applies.
std::optional<std::string> parse_transformed_query(std::string_view reply);

/// Rewrites a question into a retrieval query. Chat or parse failures fall back to the question.
RetrievalQuery transform_query(std::string_view q, ChatModel& chat, const PromptSet& prompts = PromptSet::defaults(),
                               double temperature = 0.01, bool is_complementary = false,
                               std::vector<ChatExchange>* log = nullptr);

/// Exact dense scoring of every indexed document against embed(refined_q).
std::vector<ScoredDoc> dense_retrieve(const RetrievalQuery& rq, const DocIndex& index, Embedder& embedder,
                                      std::size_t k_cand = 100);

/// Cross-encoder rerank of (refined query, document summary); keeps the top k_docs.
std::vector<ScoredDoc> rerank_docs(const RetrievalQuery& rq, std::vector<ScoredDoc> cands, const DocIndex& index,
                                   Reranker& reranker, std::size_t k_docs = 5);

/// Scores every passage of the selected documents against `query` and keeps the global top k_pass.
std::vector<ScoredPassage> retrieve_passages(std::string_view query, const std::vector<ScoredDoc>& docs,
                                             const Corpus& corpus, Reranker& reranker, std::size_t k_pass = 5);

struct RetrievalConfig {
  std::size_t k_cand_docs = 100;
  std::size_t k_docs = 5;
  std::size_t k_pass = 5;
  double temperature = 0.01;
};

/// Everything one hierarchical retrieval produced, for tracing.
struct RetrievalRecord {
  RetrievalQuery query;
  std::vector<ScoredDoc> candidates;
  std::vector<ScoredDoc> docs;
  std::vector<ScoredPassage> passages;
  std::vector<ChatExchange> exchanges;
  double transform_ms = 0, dense_ms = 0, doc_rerank_ms = 0, passage_ms = 0;
};

/// transform_query -> dense_retrieve -> rerank_docs -> retrieve_passages. Passages are scored
/// against the query this retrieval was issued for (the question, or a complementary question).
RetrievalRecord hierarchical_retrieve(std::string_view q, bool is_complementary, const Corpus& corpus,
                                      const DocIndex& index, const Backends& backends,
                                      const PromptSet& prompts = PromptSet::defaults(),
                                      const RetrievalConfig& cfg = {});

}  // namespace hirec
