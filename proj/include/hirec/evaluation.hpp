#pragma once

#include "hirec/backends.hpp"
#include "hirec/corpus.hpp"
#include "hirec/pipeline.hpp"
#include "hirec/prompts.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hirec {

enum class QASource { finqa, financebench, secqa, other };

std::string_view to_string(QASource s) noexcept;
QASource parse_source(std::string_view s) noexcept;

struct QAExample {
  std::string id;
  std::string question;
  std::string gold_answer;
  AnswerType answer_type = AnswerType::textual;
  std::set<PageRef> gold_evidence;
  QASource source = QASource::other;
};

/// QA JSONL: {"id","question","answer","answer_type","evidence":[{"doc_id","page_no"}],"source"}.
/// Throws ParseError (with line) on malformed rows or empty evidence, EmptyCorpus on an empty file.
std::vector<QAExample> load_dataset(const std::string& path);

struct PageScores {
  double recall = 0.0;
  double precision = 0.0;
};

/// Page-level recall/precision of the deduplicated (doc_id, page_no) pairs of `retrieved`.
PageScores page_metrics(const std::vector<Passage>& retrieved, const std::set<PageRef>& gold);

/// Normalized decimal literal: sign, integer digits without leading zeros, fraction digits.
struct DecimalLiteral {
  bool negative = false;
  std::string int_digits;   // "0" for zero
  std::string frac_digits;  // as written, may be empty
};

/// Strips whitespace, currency symbols, thousands separators and percent signs, maps "(x)" to -x,
/// and reads a plain or exponent-form decimal. nullopt when nothing numeric remains.
std::optional<DecimalLiteral> normalize_numeric(std::string_view s);

struct NumericMatchOptions {
  bool scale_tolerant = false;  // also try generated x100 and /100
};

/// True when the generated number rounded (half away from zero) or truncated to the gold literal's
/// decimal places equals the gold value, or the two agree within 1e-9 relative.
bool numeric_match(std::string_view generated, std::string_view gold, const NumericMatchOptions& opts = {});

/// Verdict of the judge model's reply: any "incorrect" -> false, else any "correct" -> true,
/// else false (unparseable).
std::optional<bool> parse_judgement(std::string_view reply);

struct JudgeResult {
  bool correct = false;
  bool parsed = false;
  ChatExchange exchange;
};

JudgeResult judge_textual(const std::string& question, const std::string& gold, const std::string& generated,
                          const std::string& context, ChatModel& chat, const PromptSet& prompts = PromptSet::defaults(),
                          double temperature = 0.01);

/// Top passage's company differs from every gold document's company.
bool company_error(const Passage& top1, const std::set<PageRef>& gold);

/// Everything recorded about one evaluated question. Timing is deliberately absent.
struct QuestionRecord {
  std::string id;
  std::string question;
  AnswerType answer_type = AnswerType::textual;
  QASource source = QASource::other;
  std::string gold_answer;
  std::string generated_answer;
  std::string mode;
  std::string answered_via;
  std::vector<PageRef> evidence_pages;
  std::size_t n_evidence = 0;
  bool main_pass = false;
  double page_recall = 0.0;
  double page_precision = 0.0;
  bool correct = false;
  std::optional<bool> company_error;
  std::size_t retrievals = 0;
  std::size_t curations = 0;
  std::map<Stage, StageTally> tokens;  // pipeline stages only
  std::optional<StageTally> judge_tokens;
  std::optional<std::string> error;
};

struct MetricRow {
  std::size_t n = 0;
  double page_recall = 0.0;     // percent
  double page_precision = 0.0;  // percent
  double answer_accuracy = 0.0; // percent
  std::size_t n_main = 0;
  double avg_passages_main = 0.0;
  double avg_passages_all = 0.0;
};

struct Prices {
  double input_per_million = 0.0;
  double output_per_million = 0.0;
};

struct CostRow {
  std::uint64_t input_tokens = 0;   // totals over the dataset
  std::uint64_t output_tokens = 0;
  double avg_input_tokens = 0.0;    // per question
  double avg_output_tokens = 0.0;
  double cost_input = 0.0;
  double cost_output = 0.0;
  bool approximate = false;
};

/// Token cost = tokens x price per million / 1e6.
CostRow make_cost_row(std::uint64_t input_tokens, std::uint64_t output_tokens, std::size_t n, const Prices& prices);

struct EvalReport {
  MetricRow overall;
  std::map<std::string, MetricRow> by_category;
  std::map<std::string, MetricRow> by_source;
  CostRow retrieval_cost;   // transform + curate, small-model prices
  CostRow generation_cost;  // classify + generate, generator prices
  std::size_t company_error_count = 0;
  std::size_t failures = 0;
};

/// Macro-averages per category, per source and overall. Throws std::invalid_argument when empty.
EvalReport aggregate(const std::vector<QuestionRecord>& records, const Prices& small, const Prices& generator);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);
std::string costs_to_csv(const EvalReport& report);
nlohmann::json record_to_json(const QuestionRecord& r);

struct EvalOptions {
  std::size_t parallel = 1;
  NumericMatchOptions numeric;
  Prices small_prices;
  Prices generator_prices;
  std::string trace_dir;  // one trace JSON per question id when set
  double judge_temperature = 0.01;
};

/// Runs the pipeline on every example and scores it. Per-question failures are recorded, not
/// thrown; records come back in dataset order regardless of parallelism.
std::vector<QuestionRecord> run_eval(const std::vector<QAExample>& dataset, const Pipeline& pipeline,
                                     ChatModel* judge, const EvalOptions& opts = {},
                                     const PromptSet& prompts = PromptSet::defaults());

/// Writes report.json, report.csv, costs.csv and records.jsonl into `dir`.
void write_eval_outputs(const std::string& dir, const EvalReport& report, const std::vector<QuestionRecord>& records);

}  // namespace hirec
