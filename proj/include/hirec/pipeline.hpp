#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/curation.hpp"
#include "hirec/executor.hpp"
#include "hirec/generation.hpp"
#include "hirec/indexer.hpp"
#include "hirec/prompts.hpp"
#include "hirec/retrieval.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hirec {

enum class AnswerType { numeric_table, numeric_text, textual };

std::string_view to_string(AnswerType t) noexcept;
std::optional<AnswerType> answer_type_from_string(std::string_view s) noexcept;

enum class ReasoningPolicy { dataset_type, classify, always_pot, always_cot };

std::string_view to_string(ReasoningPolicy p) noexcept;
std::optional<ReasoningPolicy> reasoning_policy_from_string(std::string_view s) noexcept;

struct PipelineConfig {
  std::size_t k_cand_docs = 100;
  std::size_t k_docs = 5;
  std::size_t k_pass = 5;
  std::size_t k_keep = 10;
  int max_iters = 3;
  double temperature = 0.01;
  ReasoningPolicy reasoning_mode_policy = ReasoningPolicy::dataset_type;

  void validate() const;
  RetrievalConfig retrieval() const { return {k_cand_docs, k_docs, k_pass, temperature}; }
};

enum class AnsweredVia { main_pass, fallback };

std::string_view to_string(AnsweredVia v) noexcept;

/// One evidence-curation round and, when it was unanswerable, the complementary retrieval it triggered.
struct CurationRound {
  int iteration = 0;
  std::vector<std::string> candidate_ids;  // context N is candidate_ids[N-1]
  CurationVerdict verdict;
  std::vector<std::string> filtered_ids;
  std::optional<RetrievalRecord> complementary;
};

struct StageTally {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::size_t calls = 0;
  bool approximate = false;

  friend bool operator==(const StageTally&, const StageTally&) = default;
};

struct PipelineTrace {
  std::string question;
  RetrievalRecord initial;
  std::vector<CurationRound> rounds;
  ReasoningMode mode = ReasoningMode::pot;
  std::vector<std::string> generation_evidence_ids;
  std::string generation_response;
  std::vector<ProgramExecution> executions;
  std::optional<std::string> generation_error;
  std::vector<ChatExchange> exchanges;  // every chat call of the run, in order
  std::map<std::string, double> stage_ms;
  std::size_t generations = 0;

  std::size_t retrieval_count() const;
  std::size_t curation_count() const { return rounds.size(); }

  /// Sums of the recorded exchanges per stage.
  std::map<Stage, StageTally> token_tallies() const;
};

struct AnswerResult {
  std::string answer_text;
  std::optional<double> numeric_value;
  ReasoningMode mode = ReasoningMode::pot;
  std::vector<Passage> evidence;
  AnsweredVia answered_via = AnsweredVia::fallback;
  PipelineTrace trace;
};

/// Iterative retrieve -> curate loop over a fixed corpus and index.
class Pipeline {
 public:
  Pipeline(const Corpus& corpus, const DocIndex& index, Backends backends, PipelineConfig cfg = {},
           ExecutorConfig executor = {}, PromptSet prompts = PromptSet::defaults());

  /// Answers one question. Throws EmptyCorpus for an empty corpus or index; backend failures in the
  /// retrieval and curation stages propagate; a generated program that still fails after its repair
  /// attempt is recorded in the trace and yields an empty answer.
  AnswerResult run(const std::string& question, std::optional<AnswerType> expected = std::nullopt) const;

  ReasoningMode choose_mode(const std::string& question, std::optional<AnswerType> expected,
                            std::vector<ChatExchange>* log) const;

  const PipelineConfig& config() const noexcept { return cfg_; }
  const Backends& backends() const noexcept { return backends_; }

 private:
  const Corpus& corpus_;
  const DocIndex& index_;
  Backends backends_;
  PipelineConfig cfg_;
  ExecutorConfig executor_;
  PromptSet prompts_;
};

/// Full trace document for one run. `include_timing` adds wall-clock fields.
nlohmann::json trace_to_json(const AnswerResult& result, bool include_timing = true);

/// Human-readable Question / Initial Retrieval / Evidence Curation / Complementary Retrieval / Generation table.
std::string render_trace_table(const nlohmann::json& trace);

}  // namespace hirec
