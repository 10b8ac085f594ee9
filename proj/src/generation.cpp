#include "hirec/generation.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <charconv>

namespace hirec {

std::string_view to_string(ReasoningMode m) noexcept { return m == ReasoningMode::pot ? "PoT" : "CoT"; }

std::string render_sources(const std::vector<Passage>& passages) {
  std::string out;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i) out += "\n\n";
    out += "Sources: " + passages[i].title + " - " + passages[i].content;
  }
  return out;
}

std::string extract_code_block(std::string_view response) {
  std::string code;
  auto open = response.find("```");
  if (open == std::string_view::npos) {
    code = std::string(response);
  } else {
    auto body_start = response.find('\n', open);
    if (body_start == std::string_view::npos) {
      code = std::string(response.substr(open + 3));
    } else {
      auto close = response.find("```", body_start + 1);
      code = std::string(response.substr(body_start + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                          : close - body_start - 1));
    }
  }
  while (!code.empty() && (code.back() == '\n' || code.back() == '\r' || code.back() == ' ')) code.pop_back();
  if (code.find("def solution") == std::string::npos) {
    // Continuation of the prompt's open function: re-indent the body under the header.
    std::string body;
    std::size_t pos = 0;
    while (pos <= code.size()) {
      auto nl = code.find('\n', pos);
      std::string_view line(code.data() + pos, (nl == std::string::npos ? code.size() : nl) - pos);
      const bool indented = !line.empty() && (line.front() == ' ' || line.front() == '\t');
      body += (indented || text::trim(line).empty() ? "" : "    ") + std::string(line) + "\n";
      if (nl == std::string::npos) break;
      pos = nl + 1;
    }
    code = "def solution():\n" + body;
  }
  return code;
}

CotAnswer extract_cot_answer(std::string_view text) {
  constexpr std::string_view marker = "the answer is";
  const auto pos = text::irfind(text, marker);
  if (pos == std::string_view::npos) return {std::string(text::trim(text)), false};
  auto ans = text::trim(text.substr(pos + marker.size()));
  if (!ans.empty() && ans.back() == '.') ans = text::trim(ans.substr(0, ans.size() - 1));
  return {std::string(ans), true};
}

std::string format_number(double v) {
  char buf[512];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (ec != std::errc{}) {
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }
  return std::string(buf, ptr);
}

namespace {

ChatExchange call(ChatModel& chat, const std::string& system, const std::string& user, double temperature,
                  std::vector<ChatExchange>* log) {
  try {
    auto ex = chat.chat(system, user, temperature, Stage::generate);
    if (log) log->push_back(ex);
    return ex;
  } catch (const Error& e) {
    throw GenerationFailed(std::string("answer generation: ") + e.what());
  }
}

std::string describe_failure(const ProgramExecution& run, const ExecutorConfig& cfg) {
  switch (*run.error_kind) {
    case ExecErrorKind::timeout:
      return "Execution timed out after " + std::to_string(cfg.timeout.count()) + " ms.";
    case ExecErrorKind::non_numeric:
      return "The program's return value is not a number. Output:\n" + run.stdout_text;
    case ExecErrorKind::nonzero_exit:
    case ExecErrorKind::launch_failure:
      break;
  }
  return run.stdout_text;
}

}  // namespace

GenerationOutput generate_answer(const GenerationRequest& req, ChatModel& chat, const ExecutorConfig& executor,
                                 const PromptSet& prompts, double temperature, std::vector<ChatExchange>* log,
                                 std::vector<ProgramExecution>* executions) {
  GenerationOutput out;
  out.mode = req.mode;
  const std::vector<std::pair<std::string, std::string>> vars = {{"contexts", render_sources(req.passages)},
                                                                 {"question", req.question}};

  if (req.mode == ReasoningMode::cot) {
    auto ex = call(chat, prompts.get(PromptSet::cot_system), text::fill_template(prompts.get(PromptSet::cot_user), vars),
                   temperature, log);
    out.response_text = ex.response_text;
    auto cot = extract_cot_answer(ex.response_text);
    out.answer_text = std::move(cot.answer);
    out.extracted = cot.extracted;
    return out;
  }

  const std::string system = prompts.get(PromptSet::pot_system);
  const std::string user = text::fill_template(prompts.get(PromptSet::pot_user), vars);
  std::string prompt = user;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto ex = call(chat, system, prompt, temperature, log);
    out.response_text = ex.response_text;
    const std::string program = extract_code_block(ex.response_text);
    auto run = execute_program(program, executor);
    out.executions.push_back(run);
    if (executions) executions->push_back(run);
    if (run.returned_value) {
      out.numeric_value = run.returned_value;
      out.answer_text = format_number(*run.returned_value);
      return out;
    }
    if (run.error_kind == ExecErrorKind::launch_failure)
      throw ExecutionFailed("program could not be launched: " + run.stdout_text);
    prompt = user + text::fill_template(prompts.get(PromptSet::pot_repair),
                                        {{"program", program}, {"error", describe_failure(run, executor)}});
  }
  throw ExecutionFailed("program failed after one repair attempt (" +
                        std::string(to_string(*out.executions.back().error_kind)) + ")");
}

}  // namespace hirec
