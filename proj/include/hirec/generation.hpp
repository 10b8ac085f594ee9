#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/executor.hpp"
#include "hirec/prompts.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hirec {

/// Program-of-thought (generate and run a program) or chain-of-thought (prose ending in the answer).
enum class ReasoningMode { pot, cot };

std::string_view to_string(ReasoningMode m) noexcept;

struct GenerationRequest {
  std::string question;
  std::vector<Passage> passages;
  ReasoningMode mode = ReasoningMode::pot;
};

struct GenerationOutput {
  std::string answer_text;
  std::optional<double> numeric_value;
  ReasoningMode mode = ReasoningMode::pot;
  std::string response_text;
  bool extracted = true;  // CoT: whether the answer marker was found
  std::vector<ProgramExecution> executions;
};

/// "Sources: {title} - {content}" blocks separated by blank lines, in passage order.
std::string render_sources(const std::vector<Passage>& passages);

/// First fenced code block, or the whole response when there is none. A bare function body
/// (the model continuing the prompt's open "def solution():") gets its header restored.
std::string extract_code_block(std::string_view response);

struct CotAnswer {
  std::string answer;
  bool extracted = false;
};

/// Text after the last case-insensitive "the answer is", trimmed, minus one trailing period.
/// Without the marker, the whole trimmed text with extracted = false.
CotAnswer extract_cot_answer(std::string_view text);

/// Shortest fixed-notation decimal that round-trips the value.
std::string format_number(double v);

/// PoT: generate, run, and on failure re-prompt once with the error before giving up
/// (ExecutionFailed). CoT: one call, answer extracted from the final sentence.
/// Chat failures surface as GenerationFailed. Every exchange is appended to `log`.
GenerationOutput generate_answer(const GenerationRequest& req, ChatModel& chat, const ExecutorConfig& executor,
                                 const PromptSet& prompts = PromptSet::defaults(), double temperature = 0.01,
                                 std::vector<ChatExchange>* log = nullptr,
                                 std::vector<ProgramExecution>* executions = nullptr);

}  // namespace hirec
