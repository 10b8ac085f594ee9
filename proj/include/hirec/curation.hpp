#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/prompts.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hirec {

/// Parsed reply of the single curation call. Context ids are 1-based positions in the
/// candidate list that was presented.
struct CurationVerdict {
  bool answerable = false;
  std::optional<std::string> missing_information;
  /// Recorded for the trace only; the final answer always comes from answer generation.
  std::optional<std::string> draft_answer;
  std::vector<int> relevant_context_ids;
  std::optional<std::string> refined_query;
  std::string raw_text;
  bool parse_ok = false;

  /// Field-wise equality ignoring raw_text.
  bool same_content(const CurationVerdict& o) const;
};

/// Total, order-insensitive parse of the "## header: value" reply format. Unknown ids are dropped.
/// A missing/unreadable answerability header, or an unanswerable verdict without a refined query,
/// yields the fallback verdict (unanswerable, no ids, no query, parse_ok = false).
CurationVerdict parse_curation_output(std::string_view text, const std::vector<int>& presented_ids);

/// Inverse of parse_curation_output for well-formed verdicts.
std::string render_curation_output(const CurationVerdict& v);

/// "ContextN (ID: N): Title is {title}. Content is {content}" lines.
std::string render_curation_contexts(const std::vector<Passage>& candidates);
std::string render_curation_prompt(std::string_view question, const std::vector<Passage>& candidates,
                                   const PromptSet& prompts = PromptSet::defaults());

/// Previous filtered passages first, then new ones not already present (by passage_id).
std::vector<Passage> merge_candidates(const std::vector<Passage>& previous_filtered,
                                      const std::vector<Passage>& new_passages);

CurationVerdict curate(std::string_view question, const std::vector<Passage>& candidates, ChatModel& chat,
                       const PromptSet& prompts = PromptSet::defaults(), double temperature = 0.01,
                       std::vector<ChatExchange>* log = nullptr);

/// Keeps the candidates named by the verdict, in verdict order, capped at k_keep. When the verdict
/// failed to parse, or is answerable without naming any context, keeps the first k_keep candidates.
std::vector<Passage> apply_filter(const CurationVerdict& verdict, const std::vector<Passage>& candidates,
                                  std::size_t k_keep = 10);

}  // namespace hirec
