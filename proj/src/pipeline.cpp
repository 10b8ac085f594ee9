#include "hirec/pipeline.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <sstream>

namespace hirec {

using nlohmann::json;

std::string_view to_string(AnswerType t) noexcept {
  switch (t) {
    case AnswerType::numeric_table: return "numeric_table";
    case AnswerType::numeric_text: return "numeric_text";
    case AnswerType::textual: return "textual";
  }
  return "textual";
}

std::optional<AnswerType> answer_type_from_string(std::string_view s) noexcept {
  for (AnswerType t : {AnswerType::numeric_table, AnswerType::numeric_text, AnswerType::textual})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

std::string_view to_string(ReasoningPolicy p) noexcept {
  switch (p) {
    case ReasoningPolicy::dataset_type: return "dataset_type";
    case ReasoningPolicy::classify: return "classify";
    case ReasoningPolicy::always_pot: return "always_pot";
    case ReasoningPolicy::always_cot: return "always_cot";
  }
  return "dataset_type";
}

std::optional<ReasoningPolicy> reasoning_policy_from_string(std::string_view s) noexcept {
  for (ReasoningPolicy p : {ReasoningPolicy::dataset_type, ReasoningPolicy::classify, ReasoningPolicy::always_pot,
                            ReasoningPolicy::always_cot})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

std::string_view to_string(AnsweredVia v) noexcept { return v == AnsweredVia::main_pass ? "main_pass" : "fallback"; }

void PipelineConfig::validate() const {
  if (k_cand_docs == 0 || k_docs == 0 || k_pass == 0 || k_keep == 0)
    throw ParseError("pipeline: every k must be positive");
  if (max_iters < 1) throw ParseError("pipeline: max_iters must be at least 1");
  if (!(temperature >= 0.0 && temperature <= 1.0)) throw ParseError("pipeline: temperature must be in [0,1]");
}

std::size_t PipelineTrace::retrieval_count() const {
  std::size_t n = 1;
  for (const auto& r : rounds) n += r.complementary ? 1 : 0;
  return n;
}

std::map<Stage, StageTally> PipelineTrace::token_tallies() const {
  std::map<Stage, StageTally> out;
  for (const auto& ex : exchanges) {
    auto& t = out[ex.stage];
    t.prompt_tokens += ex.prompt_tokens;
    t.completion_tokens += ex.completion_tokens;
    ++t.calls;
    t.approximate = t.approximate || ex.approximate_tokens;
  }
  return out;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(const Corpus& corpus, const DocIndex& index, Backends backends, PipelineConfig cfg,
                   ExecutorConfig executor, PromptSet prompts)
    : corpus_(corpus),
      index_(index),
      backends_(std::move(backends)),
      cfg_(cfg),
      executor_(std::move(executor)),
      prompts_(std::move(prompts)) {
  cfg_.validate();
  if (!backends_.embedder || !backends_.doc_reranker || !backends_.passage_reranker || !backends_.chat_small ||
      !backends_.chat_generator)
    throw ParseError("pipeline: every backend role must be configured");
}

ReasoningMode Pipeline::choose_mode(const std::string& question, std::optional<AnswerType> expected,
                                    std::vector<ChatExchange>* log) const {
  switch (cfg_.reasoning_mode_policy) {
    case ReasoningPolicy::always_pot: return ReasoningMode::pot;
    case ReasoningPolicy::always_cot: return ReasoningMode::cot;
    case ReasoningPolicy::dataset_type:
      if (expected) return *expected == AnswerType::textual ? ReasoningMode::cot : ReasoningMode::pot;
      break;
    case ReasoningPolicy::classify: break;
  }
  try {
    auto ex = backends_.chat_small->chat(
        std::nullopt, text::fill_template(prompts_.get(PromptSet::classify), {{"question", question}}),
        cfg_.temperature, Stage::classify);
    if (log) log->push_back(ex);
    const std::string l = text::to_lower(ex.response_text);
    const bool textual = l.find("textual") != std::string::npos;
    const bool numeric = l.find("numeric") != std::string::npos;
    if (textual && !numeric) return ReasoningMode::cot;
  } catch (const Error& e) {
    spdlog::warn("question classification failed ({}); using program-of-thought", e.what());
  }
  return ReasoningMode::pot;
}

namespace {

std::vector<Passage> passages_of(const std::vector<ScoredPassage>& scored) {
  std::vector<Passage> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.passage);
  return out;
}

std::vector<std::string> ids_of(const std::vector<Passage>& ps) {
  std::vector<std::string> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.passage_id);
  return out;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

AnswerResult Pipeline::run(const std::string& question, std::optional<AnswerType> expected) const {
  if (corpus_.empty() || index_.empty()) throw EmptyCorpus();
  AnswerResult result;
  PipelineTrace& trace = result.trace;
  trace.question = question;

  trace.mode = choose_mode(question, expected, &trace.exchanges);
  result.mode = trace.mode;

  const auto retrieval_cfg = cfg_.retrieval();
  auto retrieve = [&](const std::string& q, bool complementary) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rec = hierarchical_retrieve(q, complementary, corpus_, index_, backends_, prompts_, retrieval_cfg);
    trace.exchanges.insert(trace.exchanges.end(), rec.exchanges.begin(), rec.exchanges.end());
    trace.stage_ms["retrieval"] += ms_since(t0);
    return rec;
  };

  trace.initial = retrieve(question, false);
  std::vector<Passage> retrieved = passages_of(trace.initial.passages);  // P_r
  std::vector<Passage> filtered;                                         // P_f
  std::optional<std::vector<Passage>> answer_set;

  for (int i = 1; i <= cfg_.max_iters && !retrieved.empty(); ++i) {
    CurationRound round;
    round.iteration = i;
    round.candidate_ids = ids_of(retrieved);
    const auto t0 = std::chrono::steady_clock::now();
    round.verdict = curate(question, retrieved, *backends_.chat_small, prompts_, cfg_.temperature, &trace.exchanges);
    filtered = apply_filter(round.verdict, retrieved, cfg_.k_keep);
    round.filtered_ids = ids_of(filtered);
    trace.stage_ms["curation"] += ms_since(t0);

    if (round.verdict.answerable) {
      trace.rounds.push_back(std::move(round));
      answer_set = filtered;
      result.answered_via = AnsweredVia::main_pass;
      break;
    }
    if (!round.verdict.refined_query) {
      // Unparseable verdict: nothing new to search for, so answer from what we have.
      trace.rounds.push_back(std::move(round));
      break;
    }
    round.complementary = retrieve(*round.verdict.refined_query, true);
    retrieved = merge_candidates(filtered, passages_of(round.complementary->passages));
    trace.rounds.push_back(std::move(round));
  }

  if (!answer_set) {
    answer_set = retrieved;
    result.answered_via = AnsweredVia::fallback;
  }
  result.evidence = *answer_set;
  trace.generation_evidence_ids = ids_of(result.evidence);

  const auto t0 = std::chrono::steady_clock::now();
  GenerationRequest req{question, result.evidence, trace.mode};
  ++trace.generations;
  try {
    auto gen = generate_answer(req, *backends_.chat_generator, executor_, prompts_, cfg_.temperature,
                               &trace.exchanges, &trace.executions);
    result.answer_text = gen.answer_text;
    result.numeric_value = gen.numeric_value;
    trace.generation_response = gen.response_text;
  } catch (const ExecutionFailed& e) {
    trace.generation_error = e.what();
    spdlog::warn("generation: {}", e.what());
  }
  trace.stage_ms["generation"] += ms_since(t0);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

json passage_ref_json(const Passage& p) {
  return {{"passage_id", p.passage_id}, {"doc_id", p.doc_id}, {"page_no", p.page_no}};
}

json retrieval_json(const RetrievalRecord& r, bool timing) {
  json j = {{"query", r.query.original_q},
            {"refined_query", r.query.refined_q},
            {"is_complementary", r.query.is_complementary}};
  json cands = json::array();
  for (const auto& d : r.candidates) cands.push_back({{"doc_id", d.doc_id}, {"dense_score", d.dense_score}});
  j["candidates"] = std::move(cands);
  json docs = json::array();
  for (const auto& d : r.docs)
    docs.push_back({{"doc_id", d.doc_id},
                    {"dense_score", d.dense_score},
                    {"rerank_score", d.rerank_score ? json(*d.rerank_score) : json(nullptr)}});
  j["docs"] = std::move(docs);
  json ps = json::array();
  for (const auto& sp : r.passages) {
    json p = passage_ref_json(sp.passage);
    p["chunk_index"] = sp.passage.chunk_index;
    p["score"] = sp.score;
    p["content"] = sp.passage.content;
    ps.push_back(std::move(p));
  }
  j["passages"] = std::move(ps);
  if (timing)
    j["timing_ms"] = {{"transform", r.transform_ms},
                      {"dense", r.dense_ms},
                      {"doc_rerank", r.doc_rerank_ms},
                      {"passages", r.passage_ms}};
  return j;
}

json opt_json(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

json verdict_json(const CurationVerdict& v) {
  return {{"answerable", v.answerable},
          {"missing_information", opt_json(v.missing_information)},
          {"answer", opt_json(v.draft_answer)},
          {"relevant_context_ids", v.relevant_context_ids},
          {"refined_query", opt_json(v.refined_query)},
          {"parse_ok", v.parse_ok},
          {"raw_text", v.raw_text}};
}

}  // namespace

json trace_to_json(const AnswerResult& result, bool include_timing) {
  const auto& t = result.trace;
  json j;
  j["question"] = t.question;
  j["answer"] = result.answer_text;
  j["numeric_value"] = result.numeric_value ? json(*result.numeric_value) : json(nullptr);
  j["mode"] = std::string(to_string(result.mode));
  j["answered_via"] = std::string(to_string(result.answered_via));
  json ev = json::array();
  for (const auto& p : result.evidence) ev.push_back(passage_ref_json(p));
  j["evidence"] = std::move(ev);
  j["counts"] = {{"retrievals", t.retrieval_count()}, {"curations", t.curation_count()}, {"generations", t.generations}};
  j["initial_retrieval"] = retrieval_json(t.initial, include_timing);

  json rounds = json::array();
  for (const auto& r : t.rounds) {
    json rj = {{"iteration", r.iteration},
               {"candidates", r.candidate_ids},
               {"verdict", verdict_json(r.verdict)},
               {"filtered_ids", r.filtered_ids}};
    rj["complementary_retrieval"] = r.complementary ? retrieval_json(*r.complementary, include_timing) : json(nullptr);
    rounds.push_back(std::move(rj));
  }
  j["rounds"] = std::move(rounds);

  json execs = json::array();
  for (const auto& e : t.executions) {
    json ej = {{"program", e.program_text},
               {"stdout", e.stdout_text},
               {"returned_value", e.returned_value ? json(*e.returned_value) : json(nullptr)},
               {"exit_ok", e.exit_ok},
               {"error_kind", e.error_kind ? json(std::string(to_string(*e.error_kind))) : json(nullptr)}};
    if (include_timing) ej["duration_ms"] = e.duration.count();
    execs.push_back(std::move(ej));
  }
  j["generation"] = {{"mode", std::string(to_string(t.mode))},
                     {"evidence_ids", t.generation_evidence_ids},
                     {"response", t.generation_response},
                     {"executions", std::move(execs)},
                     {"error", opt_json(t.generation_error)}};

  json tokens = json::object();
  for (const auto& [stage, tally] : t.token_tallies())
    tokens[std::string(to_string(stage))] = {{"prompt_tokens", tally.prompt_tokens},
                                             {"completion_tokens", tally.completion_tokens},
                                             {"calls", tally.calls},
                                             {"approximate", tally.approximate}};
  j["tokens"] = std::move(tokens);

  json exchanges = json::array();
  for (const auto& ex : t.exchanges)
    exchanges.push_back({{"stage", std::string(to_string(ex.stage))},
                         {"system", opt_json(ex.system_text)},
                         {"user", ex.user_text},
                         {"response", ex.response_text},
                         {"prompt_tokens", ex.prompt_tokens},
                         {"completion_tokens", ex.completion_tokens},
                         {"approximate", ex.approximate_tokens}});
  j["exchanges"] = std::move(exchanges);
  if (include_timing) j["timing_ms"] = t.stage_ms;
  return j;
}

namespace {

std::string snippet(const std::string& s, std::size_t n = 90) {
  std::string flat;
  for (char c : s) flat.push_back(c == '\n' || c == '\t' ? ' ' : c);
  if (flat.size() > n) {
    flat.resize(n);
    flat += " ...";
  }
  return flat;
}

void retrieval_rows(std::ostringstream& out, const char* label, const json& r) {
  out << label << "\n";
  if (r.value("is_complementary", false)) out << "    query: " << r.value("query", "") << "\n";
  out << "    refined query: " << r.value("refined_query", "") << "\n";
  for (const auto& p : r.at("passages"))
    out << "    " << p.value("doc_id", "") << " (p." << p.value("page_no", 0) << "): "
        << snippet(p.value("content", "")) << "\n";
}

}  // namespace

std::string render_trace_table(const json& trace) {
  std::ostringstream out;
  out << "Question\n    " << trace.value("question", "") << "\n";
  retrieval_rows(out, "Initial Retrieval", trace.at("initial_retrieval"));

  std::map<std::string, std::string> labels;  // passage_id -> "DOC (p.N)"
  auto remember = [&](const json& r) {
    for (const auto& p : r.at("passages"))
      labels[p.value("passage_id", "")] =
          p.value("doc_id", "") + " (p." + std::to_string(p.value("page_no", 0)) + ")";
  };
  remember(trace.at("initial_retrieval"));

  for (const auto& round : trace.at("rounds")) {
    const auto& v = round.at("verdict");
    out << "Evidence Curation\n    Relevant passages: ";
    bool first = true;
    for (const auto& id : round.at("filtered_ids")) {
      const auto key = id.get<std::string>();
      out << (first ? "" : ", ") << (labels.count(key) ? labels[key] : key);
      first = false;
    }
    out << "\n    Answerable: " << (v.value("answerable", false) ? "True" : "False") << "\n";
    if (!v.value("parse_ok", false)) out << "    (curation reply could not be parsed)\n";
    if (v.contains("missing_information") && v.at("missing_information").is_string())
      out << "    Explanation: " << v.at("missing_information").get<std::string>() << "\n";
    if (v.contains("refined_query") && v.at("refined_query").is_string())
      out << "    Complementary question: " << v.at("refined_query").get<std::string>() << "\n";
    if (round.contains("complementary_retrieval") && round.at("complementary_retrieval").is_object()) {
      remember(round.at("complementary_retrieval"));
      retrieval_rows(out, "Complementary Retrieval", round.at("complementary_retrieval"));
    }
  }

  out << "Generation\n    Generated Answer: " << trace.value("answer", "") << "\n    Mode: " << trace.value("mode", "")
      << ", answered via " << trace.value("answered_via", "") << "\n    Evidence:";
  for (const auto& e : trace.at("evidence"))
    out << " " << e.value("doc_id", "") << " (p." << e.value("page_no", 0) << ")";
  out << "\n";
  if (trace.contains("generation") && trace.at("generation").at("error").is_string())
    out << "    Error: " << trace.at("generation").at("error").get<std::string>() << "\n";
  return out.str();
}

}  // namespace hirec
