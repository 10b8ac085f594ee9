#include "hirec/evaluation.hpp"

#include "hirec/errors.hpp"
#include "hirec/generation.hpp"
#include "hirec/text.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace hirec {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(QASource s) noexcept {
  switch (s) {
    case QASource::finqa: return "finqa";
    case QASource::financebench: return "financebench";
    case QASource::secqa: return "secqa";
    case QASource::other: return "other";
  }
  return "other";
}

QASource parse_source(std::string_view s) noexcept {
  const std::string l = text::to_lower(text::trim(s));
  if (l == "finqa") return QASource::finqa;
  if (l == "financebench") return QASource::financebench;
  if (l == "secqa") return QASource::secqa;
  return QASource::other;
}

namespace {

QAExample parse_example(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("expected a JSON object", line);
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) throw ParseError(std::string("missing string field '") + key + "'", line);
    return j.at(key).get<std::string>();
  };
  QAExample ex;
  ex.id = str("id");
  ex.question = str("question");
  // Gold answers are sometimes written as bare JSON numbers.
  if (j.contains("answer") && j.at("answer").is_number())
    ex.gold_answer = j.at("answer").dump();
  else
    ex.gold_answer = str("answer");
  auto type = answer_type_from_string(str("answer_type"));
  if (!type) throw ParseError("unknown answer_type '" + j.at("answer_type").get<std::string>() + "'", line);
  ex.answer_type = *type;
  if (!j.contains("evidence") || !j.at("evidence").is_array()) throw ParseError("missing evidence array", line);
  for (const auto& e : j.at("evidence")) {
    if (!e.is_object() || !e.contains("doc_id") || !e.at("doc_id").is_string() || !e.contains("page_no") ||
        !e.at("page_no").is_number_integer())
      throw ParseError("evidence entries need doc_id and integer page_no", line);
    ex.gold_evidence.insert({e.at("doc_id").get<std::string>(), e.at("page_no").get<int>()});
  }
  if (ex.gold_evidence.empty()) throw ParseError("evidence must not be empty", line);
  ex.source = j.contains("source") && j.at("source").is_string() ? parse_source(j.at("source").get<std::string>())
                                                                  : QASource::other;
  return ex;
}

}  // namespace

std::vector<QAExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  std::vector<QAExample> out;
  std::set<std::string> seen;
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
    auto ex = parse_example(j, lineno);
    if (!seen.insert(ex.id).second) throw ParseError("duplicate question id '" + ex.id + "'", lineno);
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw EmptyCorpus("dataset has no questions: " + path);
  return out;
}

PageScores page_metrics(const std::vector<Passage>& retrieved, const std::set<PageRef>& gold) {
  std::set<PageRef> pages;
  for (const auto& p : retrieved) pages.insert({p.doc_id, p.page_no});
  std::size_t hit = 0;
  for (const auto& r : pages) hit += gold.count(r);
  PageScores s;
  s.recall = gold.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(gold.size());
  s.precision = pages.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pages.size());
  return s;
}

// ---------------------------------------------------------------------------
// numeric matching on decimal digit strings

namespace {

bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }

std::string strip_noise(std::string_view s) {
  static constexpr std::string_view multibyte[] = {"\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5", "\xE2\x82\xB9",
                                                   "\xC2\xA0"};  // euro, pound, yen, rupee, nbsp
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    bool skipped = false;
    for (auto m : multibyte)
      if (s.substr(i, m.size()) == m) {
        i += m.size();
        skipped = true;
        break;
      }
    if (skipped) continue;
    const char c = s[i++];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ',' || c == '%' || c == '$') continue;
    out.push_back(c);
  }
  return out;
}

std::string strip_leading_zeros(std::string d) {
  const auto nz = d.find_first_not_of('0');
  return nz == std::string::npos ? "0" : d.substr(nz);
}

/// Moves the decimal point `shift` places right (negative: left).
DecimalLiteral shift_point(DecimalLiteral d, long shift) {
  std::string digits = d.int_digits + d.frac_digits;
  long point = static_cast<long>(d.int_digits.size()) + shift;
  if (point < 0) {
    digits.insert(0, static_cast<std::size_t>(-point), '0');
    point = 0;
  }
  if (point > static_cast<long>(digits.size())) digits.append(static_cast<std::size_t>(point) - digits.size(), '0');
  d.int_digits = strip_leading_zeros(digits.substr(0, static_cast<std::size_t>(point)));
  d.frac_digits = digits.substr(static_cast<std::size_t>(point));
  return d;
}

bool is_zero(const DecimalLiteral& d) {
  return d.int_digits.find_first_not_of('0') == std::string::npos &&
         d.frac_digits.find_first_not_of('0') == std::string::npos;
}

bool same_value(const DecimalLiteral& a, const DecimalLiteral& b) {
  auto trimmed = [](std::string f) {
    while (!f.empty() && f.back() == '0') f.pop_back();
    return f;
  };
  if (is_zero(a) && is_zero(b)) return true;
  return a.negative == b.negative && strip_leading_zeros(a.int_digits) == strip_leading_zeros(b.int_digits) &&
         trimmed(a.frac_digits) == trimmed(b.frac_digits);
}

DecimalLiteral truncate_to(DecimalLiteral d, std::size_t places) {
  if (d.frac_digits.size() > places)
    d.frac_digits.resize(places);
  else
    d.frac_digits.append(places - d.frac_digits.size(), '0');
  return d;
}

DecimalLiteral round_half_away(const DecimalLiteral& d, std::size_t places) {
  if (d.frac_digits.size() <= places) return truncate_to(d, places);
  DecimalLiteral t = truncate_to(d, places);
  if (d.frac_digits[places] < '5') return t;
  // add one unit in the last kept place to the magnitude
  std::string digits = t.int_digits + t.frac_digits;
  bool carry = true;
  for (std::size_t i = digits.size(); i > 0 && carry; --i) {
    if (digits[i - 1] == '9') {
      digits[i - 1] = '0';
    } else {
      ++digits[i - 1];
      carry = false;
    }
  }
  std::size_t int_len = t.int_digits.size();
  if (carry) {
    digits.insert(digits.begin(), '1');
    ++int_len;
  }
  t.int_digits = strip_leading_zeros(digits.substr(0, int_len));
  t.frac_digits = digits.substr(int_len);
  return t;
}

double to_double(const DecimalLiteral& d) {
  std::string s = (d.negative ? "-" : "") + d.int_digits + (d.frac_digits.empty() ? "" : "." + d.frac_digits);
  return std::strtod(s.c_str(), nullptr);
}

bool matches_at(const DecimalLiteral& gen, const DecimalLiteral& gold) {
  const std::size_t places = gold.frac_digits.size();
  if (same_value(round_half_away(gen, places), gold)) return true;
  if (same_value(truncate_to(gen, places), gold)) return true;
  const double g = to_double(gen), t = to_double(gold);
  return std::isfinite(g) && std::isfinite(t) && std::fabs(g - t) <= 1e-9 * std::max(1.0, std::fabs(t));
}

}  // namespace

std::optional<DecimalLiteral> normalize_numeric(std::string_view raw) {
  std::string s = strip_noise(raw);
  bool negative = false;
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')') {
    negative = true;
    s = s.substr(1, s.size() - 2);
  }
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    if (s[i] == '-') negative = !negative;
    ++i;
  }
  DecimalLiteral d;
  while (i < s.size() && is_digit(s[i])) d.int_digits.push_back(s[i++]);
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && is_digit(s[i])) d.frac_digits.push_back(s[i++]);
  }
  if (d.int_digits.empty() && d.frac_digits.empty()) return std::nullopt;
  long exponent = 0;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    bool neg_exp = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) neg_exp = s[i++] == '-';
    if (i >= s.size() || !is_digit(s[i])) return std::nullopt;
    while (i < s.size() && is_digit(s[i])) {
      exponent = exponent * 10 + (s[i++] - '0');
      if (exponent > 400) return std::nullopt;
    }
    if (neg_exp) exponent = -exponent;
  }
  if (i != s.size()) return std::nullopt;
  d.negative = negative;
  d.int_digits = strip_leading_zeros(d.int_digits);
  if (exponent != 0) d = shift_point(d, exponent);
  return d;
}

bool numeric_match(std::string_view generated, std::string_view gold, const NumericMatchOptions& opts) {
  const auto g = normalize_numeric(generated);
  const auto t = normalize_numeric(gold);
  if (!g || !t) return false;
  if (matches_at(*g, *t)) return true;
  if (opts.scale_tolerant) return matches_at(shift_point(*g, 2), *t) || matches_at(shift_point(*g, -2), *t);
  return false;
}

// ---------------------------------------------------------------------------

std::optional<bool> parse_judgement(std::string_view reply) {
  if (text::ifind(reply, "incorrect") != std::string_view::npos) return false;
  if (text::ifind(reply, "correct") != std::string_view::npos) return true;
  return std::nullopt;
}

JudgeResult judge_textual(const std::string& question, const std::string& gold, const std::string& generated,
                          const std::string& context, ChatModel& chat, const PromptSet& prompts, double temperature) {
  const std::string prompt = text::fill_template(
      prompts.get(PromptSet::judge),
      {{"context", context}, {"question", question}, {"answer", gold}, {"generated_answer", generated}});
  JudgeResult r;
  r.exchange = chat.chat(std::nullopt, prompt, temperature, Stage::judge);
  const auto verdict = parse_judgement(r.exchange.response_text);
  r.parsed = verdict.has_value();
  r.correct = verdict.value_or(false);
  if (!r.parsed) spdlog::warn("judge reply has no verdict: {}", r.exchange.response_text);
  return r;
}

bool company_error(const Passage& top1, const std::set<PageRef>& gold) {
  const std::string company = company_of(top1.doc_id);
  for (const auto& g : gold)
    if (company_of(g.doc_id) == company) return false;
  return true;
}

// ---------------------------------------------------------------------------

CostRow make_cost_row(std::uint64_t input_tokens, std::uint64_t output_tokens, std::size_t n, const Prices& prices) {
  CostRow c;
  c.input_tokens = input_tokens;
  c.output_tokens = output_tokens;
  c.avg_input_tokens = n ? static_cast<double>(input_tokens) / static_cast<double>(n) : 0.0;
  c.avg_output_tokens = n ? static_cast<double>(output_tokens) / static_cast<double>(n) : 0.0;
  c.cost_input = static_cast<double>(input_tokens) * prices.input_per_million / 1e6;
  c.cost_output = static_cast<double>(output_tokens) * prices.output_per_million / 1e6;
  return c;
}

namespace {

struct RowAccumulator {
  std::size_t n = 0, n_main = 0, correct = 0;
  double recall = 0, precision = 0, passages_main = 0, passages_all = 0;

  void add(const QuestionRecord& r) {
    ++n;
    recall += r.page_recall;
    precision += r.page_precision;
    correct += r.correct ? 1 : 0;
    passages_all += static_cast<double>(r.n_evidence);
    if (r.main_pass) {
      ++n_main;
      passages_main += static_cast<double>(r.n_evidence);
    }
  }
  MetricRow row() const {
    MetricRow m;
    m.n = n;
    m.n_main = n_main;
    if (n) {
      const double dn = static_cast<double>(n);
      m.page_recall = 100.0 * recall / dn;
      m.page_precision = 100.0 * precision / dn;
      m.answer_accuracy = 100.0 * static_cast<double>(correct) / dn;
      m.avg_passages_all = passages_all / dn;
    }
    if (n_main) m.avg_passages_main = passages_main / static_cast<double>(n_main);
    return m;
  }
};

}  // namespace

EvalReport aggregate(const std::vector<QuestionRecord>& records, const Prices& small, const Prices& generator) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  RowAccumulator all;
  std::map<std::string, RowAccumulator> cats, srcs;
  std::uint64_t r_in = 0, r_out = 0, g_in = 0, g_out = 0;
  bool r_approx = false, g_approx = false;
  EvalReport rep;
  for (const auto& r : records) {
    all.add(r);
    cats[std::string(to_string(r.answer_type))].add(r);
    srcs[std::string(to_string(r.source))].add(r);
    for (const auto& [stage, t] : r.tokens) {
      if (stage == Stage::transform || stage == Stage::curate) {
        r_in += t.prompt_tokens;
        r_out += t.completion_tokens;
        r_approx = r_approx || t.approximate;
      } else if (stage == Stage::generate || stage == Stage::classify) {
        g_in += t.prompt_tokens;
        g_out += t.completion_tokens;
        g_approx = g_approx || t.approximate;
      }
    }
    rep.company_error_count += r.company_error.value_or(false) ? 1 : 0;
    rep.failures += r.error ? 1 : 0;
  }
  rep.overall = all.row();
  for (const auto& [k, acc] : cats) rep.by_category[k] = acc.row();
  for (const auto& [k, acc] : srcs) rep.by_source[k] = acc.row();
  rep.retrieval_cost = make_cost_row(r_in, r_out, records.size(), small);
  rep.retrieval_cost.approximate = r_approx;
  rep.generation_cost = make_cost_row(g_in, g_out, records.size(), generator);
  rep.generation_cost.approximate = g_approx;
  return rep;
}

namespace {

json row_json(const MetricRow& m) {
  return {{"n", m.n},
          {"page_recall", m.page_recall},
          {"page_precision", m.page_precision},
          {"answer_accuracy", m.answer_accuracy},
          {"n_main_pass", m.n_main},
          {"avg_passages_main", m.avg_passages_main},
          {"avg_passages_all", m.avg_passages_all}};
}

json cost_json(const CostRow& c) {
  return {{"input_tokens", c.input_tokens},
          {"output_tokens", c.output_tokens},
          {"avg_input_tokens", c.avg_input_tokens},
          {"avg_output_tokens", c.avg_output_tokens},
          {"cost_input", c.cost_input},
          {"cost_output", c.cost_output},
          {"approximate", c.approximate}};
}

std::string fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

json tally_json(const StageTally& t) {
  return {{"prompt_tokens", t.prompt_tokens},
          {"completion_tokens", t.completion_tokens},
          {"calls", t.calls},
          {"approximate", t.approximate}};
}

}  // namespace

json report_to_json(const EvalReport& r) {
  json j;
  j["overall"] = row_json(r.overall);
  j["by_category"] = json::object();
  for (const auto& [k, m] : r.by_category) j["by_category"][k] = row_json(m);
  j["by_source"] = json::object();
  for (const auto& [k, m] : r.by_source) j["by_source"][k] = row_json(m);
  j["costs"] = {{"retrieval", cost_json(r.retrieval_cost)}, {"generation", cost_json(r.generation_cost)}};
  j["company_error_count"] = r.company_error_count;
  j["failures"] = r.failures;
  return j;
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "group,name,n,page_recall,page_precision,answer_accuracy,avg_passages_main,avg_passages_all\n";
  auto line = [&](const std::string& group, const std::string& name, const MetricRow& m) {
    out << group << ',' << name << ',' << m.n << ',' << fixed(m.page_recall, 2) << ',' << fixed(m.page_precision, 2)
        << ',' << fixed(m.answer_accuracy, 2) << ',' << fixed(m.avg_passages_main, 2) << ','
        << fixed(m.avg_passages_all, 2) << '\n';
  };
  for (const auto& [k, m] : r.by_category) line("category", k, m);
  for (const auto& [k, m] : r.by_source) line("source", k, m);
  line("overall", "all", r.overall);
  return out.str();
}

std::string costs_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "stage,avg_input_tokens,avg_output_tokens,input_tokens,output_tokens,cost_input,cost_output,cost_total\n";
  auto line = [&](const char* stage, const CostRow& c) {
    out << stage << ',' << fixed(c.avg_input_tokens, 2) << ',' << fixed(c.avg_output_tokens, 2) << ','
        << c.input_tokens << ',' << c.output_tokens << ',' << fixed(c.cost_input, 6) << ','
        << fixed(c.cost_output, 6) << ',' << fixed(c.cost_input + c.cost_output, 6) << '\n';
  };
  line("retrieval", r.retrieval_cost);
  line("generation", r.generation_cost);
  return out.str();
}

json record_to_json(const QuestionRecord& r) {
  json pages = json::array();
  for (const auto& p : r.evidence_pages) pages.push_back({{"doc_id", p.doc_id}, {"page_no", p.page_no}});
  json tokens = json::object();
  for (const auto& [stage, t] : r.tokens) tokens[std::string(to_string(stage))] = tally_json(t);
  return {{"id", r.id},
          {"question", r.question},
          {"answer_type", std::string(to_string(r.answer_type))},
          {"source", std::string(to_string(r.source))},
          {"gold_answer", r.gold_answer},
          {"generated_answer", r.generated_answer},
          {"mode", r.mode},
          {"answered_via", r.answered_via},
          {"evidence_pages", std::move(pages)},
          {"n_evidence", r.n_evidence},
          {"page_recall", r.page_recall},
          {"page_precision", r.page_precision},
          {"correct", r.correct},
          {"company_error", r.company_error ? json(*r.company_error) : json(nullptr)},
          {"retrievals", r.retrievals},
          {"curations", r.curations},
          {"tokens", std::move(tokens)},
          {"judge_tokens", r.judge_tokens ? tally_json(*r.judge_tokens) : json(nullptr)},
          {"error", r.error ? json(*r.error) : json(nullptr)}};
}

// ---------------------------------------------------------------------------

namespace {

std::string safe_file_name(const std::string& id) {
  std::string out;
  for (char c : id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_');
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

QuestionRecord evaluate_one(const QAExample& ex, const Pipeline& pipeline, ChatModel* judge, const EvalOptions& opts,
                            const PromptSet& prompts) {
  QuestionRecord rec;
  rec.id = ex.id;
  rec.question = ex.question;
  rec.answer_type = ex.answer_type;
  rec.source = ex.source;
  rec.gold_answer = ex.gold_answer;
  try {
    const AnswerResult res = pipeline.run(ex.question, ex.answer_type);
    const auto& trace = res.trace;
    rec.generated_answer = res.answer_text;
    rec.mode = std::string(to_string(res.mode));
    rec.answered_via = std::string(to_string(res.answered_via));
    rec.main_pass = res.answered_via == AnsweredVia::main_pass;
    rec.n_evidence = res.evidence.size();
    std::set<PageRef> seen;
    for (const auto& p : res.evidence)
      if (seen.insert({p.doc_id, p.page_no}).second) rec.evidence_pages.push_back({p.doc_id, p.page_no});
    const auto pm = page_metrics(res.evidence, ex.gold_evidence);
    rec.page_recall = pm.recall;
    rec.page_precision = pm.precision;
    if (!trace.initial.passages.empty()) rec.company_error = company_error(trace.initial.passages.front().passage, ex.gold_evidence);
    rec.retrievals = trace.retrieval_count();
    rec.curations = trace.curation_count();
    rec.tokens = trace.token_tallies();
    if (trace.generation_error) rec.error = *trace.generation_error;

    if (!opts.trace_dir.empty()) {
      fs::create_directories(opts.trace_dir);
      std::ofstream(fs::path(opts.trace_dir) / (safe_file_name(ex.id) + ".json"))
          << trace_to_json(res, false).dump(2) << '\n';
    }

    if (ex.answer_type == AnswerType::textual) {
      if (!judge) {
        rec.error = "no judge model configured";
      } else if (!res.answer_text.empty()) {
        auto jr = judge_textual(ex.question, ex.gold_answer, res.answer_text, render_sources(res.evidence), *judge,
                                prompts, opts.judge_temperature);
        rec.correct = jr.correct;
        rec.judge_tokens = StageTally{jr.exchange.prompt_tokens, jr.exchange.completion_tokens, 1,
                                      jr.exchange.approximate_tokens};
      }
    } else {
      rec.correct = numeric_match(res.answer_text, ex.gold_answer, opts.numeric);
    }
  } catch (const EmptyCorpus&) {
    throw;
  } catch (const std::exception& e) {
    spdlog::error("question {}: {}", ex.id, e.what());
    rec.error = e.what();
    rec.correct = false;
  }
  return rec;
}

}  // namespace

std::vector<QuestionRecord> run_eval(const std::vector<QAExample>& dataset, const Pipeline& pipeline, ChatModel* judge,
                                     const EvalOptions& opts, const PromptSet& prompts) {
  std::vector<QuestionRecord> out(dataset.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.parallel, dataset.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= dataset.size()) return;
      try {
        out[i] = evaluate_one(dataset[i], pipeline, judge, opts, prompts);
      } catch (...) {
        std::lock_guard lk(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        next = dataset.size();
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);
  return out;
}

void write_eval_outputs(const std::string& dir, const EvalReport& report, const std::vector<QuestionRecord>& records) {
  fs::create_directories(dir);
  const fs::path d(dir);
  std::ofstream(d / "report.json") << report_to_json(report).dump(2) << '\n';
  std::ofstream(d / "report.csv") << report_to_csv(report);
  std::ofstream(d / "costs.csv") << costs_to_csv(report);
  std::ofstream rec(d / "records.jsonl");
  for (const auto& r : records) rec << record_to_json(r).dump() << '\n';
}

}  // namespace hirec
