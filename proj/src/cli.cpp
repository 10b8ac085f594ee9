#include "hirec/cli.hpp"

#include "hirec/config.hpp"
#include "hirec/errors.hpp"
#include "hirec/evaluation.hpp"
#include "hirec/indexer.hpp"
#include "hirec/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace hirec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(const Error& e) {
  switch (e.error_class()) {
    case ErrorClass::input: return exit_input;
    case ErrorClass::backend: return exit_backend;
    case ErrorClass::empty_state: return exit_empty;
    case ErrorClass::generation: return exit_backend;
  }
  return exit_internal;
}

const std::string& require(const std::string& value, const char* key) {
  if (value.empty()) throw ParseError(std::string(key) + " is not set");
  return value;
}

PromptSet prompts_for(const AppConfig& cfg) {
  return cfg.paths.prompts_dir.empty() ? PromptSet::defaults() : PromptSet::load(cfg.paths.prompts_dir);
}

Corpus load_corpus(const AppConfig& cfg, const std::string& override_path = {}) {
  const std::string path = override_path.empty() ? require(cfg.paths.corpus, "paths.corpus") : override_path;
  if (!fs::exists(path)) throw ParseError("corpus file not found: " + path);
  return Corpus::load_jsonl(path, cfg.chunking);
}

DocIndex load_index(const AppConfig& cfg) {
  const auto& dir = require(cfg.paths.index_dir, "paths.index_dir");
  if (!DocIndex::exists(dir)) throw EmptyCorpus("no index in " + dir + "; run `hirec index` first");
  auto index = DocIndex::load(dir);
  if (index.empty()) throw EmptyCorpus("index in " + dir + " is empty");
  return index;
}

int cmd_ingest(const AppConfig& cfg, const std::string& path, std::ostream& out) {
  auto corpus = load_corpus(cfg, path);
  std::size_t passages = 0;
  for (const auto& d : corpus.documents()) passages += corpus.passages(d.doc_id)->size();
  const auto st = corpus.stats();
  out << "documents: " << st.docs << "\npages: " << st.pages << "\npassages: " << passages << "\n";
  return exit_ok;
}

int cmd_index(const AppConfig& cfg, std::ostream& out) {
  auto corpus = load_corpus(cfg);
  auto backends = make_backends(cfg);
  IndexBuildReport rep;
  auto index = build_index_dir(corpus, *backends.chat_small, *backends.embedder,
                               require(cfg.paths.index_dir, "paths.index_dir"), prompts_for(cfg), cfg.index, &rep);
  out << "indexed " << index.size() << " documents: " << rep.summarized << " updated, " << rep.reused << " reused, "
      << rep.embedded << " embedded, " << rep.fallbacks << " fallback summaries\n";
  return exit_ok;
}

int cmd_query(const AppConfig& cfg, const std::string& question, const std::string& answer_type,
              const std::string& trace_path, std::ostream& out) {
  std::optional<AnswerType> expected;
  if (!answer_type.empty()) {
    expected = answer_type_from_string(answer_type);
    if (!expected) throw ParseError("unknown answer type '" + answer_type + "'");
  }
  auto corpus = load_corpus(cfg);
  auto index = load_index(cfg);
  Pipeline pipeline(corpus, index, make_backends(cfg), cfg.pipeline, cfg.executor, prompts_for(cfg));
  const auto res = pipeline.run(question, expected);
  out << "answer: " << res.answer_text << "\n";
  out << "answered_via: " << to_string(res.answered_via) << "\n";
  out << "mode: " << to_string(res.mode) << "\n";
  out << "evidence:\n";
  for (const auto& p : res.evidence) out << "  " << p.doc_id << " p." << p.page_no << " " << p.passage_id << "\n";
  if (res.trace.generation_error) out << "error: " << *res.trace.generation_error << "\n";
  if (!trace_path.empty()) {
    if (auto parent = fs::path(trace_path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream f(trace_path);
    if (!f) throw ParseError("cannot write trace file: " + trace_path);
    f << trace_to_json(res).dump(2) << "\n";
  }
  return exit_ok;
}

int cmd_eval(const AppConfig& cfg, const std::string& dataset_path, const std::string& out_dir, std::size_t parallel,
             const std::string& trace_dir, std::ostream& out) {
  if (!fs::exists(dataset_path)) throw ParseError("dataset file not found: " + dataset_path);
  const auto dataset = load_dataset(dataset_path);
  auto corpus = load_corpus(cfg);
  auto index = load_index(cfg);
  auto backends = make_backends(cfg);
  const PromptSet prompts = prompts_for(cfg);
  Pipeline pipeline(corpus, index, backends, cfg.pipeline, cfg.executor, prompts);

  EvalOptions opts;
  opts.parallel = parallel;
  opts.numeric = cfg.numeric;
  opts.small_prices = {cfg.chat_small.price_per_million_input, cfg.chat_small.price_per_million_output};
  opts.generator_prices = {cfg.chat_generator.price_per_million_input, cfg.chat_generator.price_per_million_output};
  opts.trace_dir = trace_dir.empty() ? cfg.paths.trace_dir : trace_dir;
  opts.judge_temperature = cfg.pipeline.temperature;

  const auto records = run_eval(dataset, pipeline, backends.judge.get(), opts, prompts);
  const auto report = aggregate(records, opts.small_prices, opts.generator_prices);
  write_eval_outputs(out_dir, report, records);
  out << report_to_csv(report);
  out << "failures: " << report.failures << "\ncompany errors: " << report.company_error_count << "\n";
  return exit_ok;
}

int cmd_trace(const std::string& path, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace file is not JSON: ") + e.what());
  }
  try {
    out << render_trace_table(j);
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace file is missing fields: ") + e.what());
  }
  return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical retrieval and evidence curation over financial filings"};
  app.require_subcommand(1);
  std::string config_path, log_level = "warn";
  app.add_option("--config", config_path, "Config file");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::string ingest_path;
  auto* ingest = app.add_subcommand("ingest", "Validate a corpus file and print statistics");
  ingest->add_option("corpus", ingest_path, "Corpus JSONL (defaults to paths.corpus)");

  auto* index = app.add_subcommand("index", "Build or update the document index");

  std::string question, answer_type, trace_path;
  auto* query = app.add_subcommand("query", "Answer one question");
  query->add_option("question", question, "Question text")->required();
  query->add_option("--answer-type", answer_type, "numeric_table, numeric_text or textual");
  query->add_option("--trace", trace_path, "Write the full JSON trace to this file");

  std::string dataset_path, out_dir = "eval_out", trace_dir;
  std::size_t parallel = 0;
  auto* eval = app.add_subcommand("eval", "Run and score a QA dataset");
  eval->add_option("dataset", dataset_path, "QA JSONL")->required();
  eval->add_option("--out", out_dir, "Output directory");
  eval->add_option("--parallel", parallel, "Questions evaluated concurrently (defaults to eval.parallel)");
  eval->add_option("--trace-dir", trace_dir, "Write one trace per question id");

  std::string trace_file;
  auto* trace = app.add_subcommand("trace", "Render a saved trace as a table");
  trace->add_option("file", trace_file, "Trace JSON")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int rc = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return rc == 0 ? exit_ok : exit_input;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("hirec", sink);
  logger->set_level(spdlog::level::from_str(log_level));
  logger->set_pattern("[%l] %v");
  auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> prev;
    ~Restore() { spdlog::set_default_logger(prev); }
  } restore{previous};

  try {
    if (*trace) return cmd_trace(trace_file, out);
    const AppConfig cfg = load_config(config_path);
    if (*ingest) return cmd_ingest(cfg, ingest_path, out);
    if (*index) return cmd_index(cfg, out);
    if (*query) return cmd_query(cfg, question, answer_type, trace_path, out);
    if (*eval) return cmd_eval(cfg, dataset_path, out_dir, parallel ? parallel : cfg.eval_parallel, trace_dir, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_internal;
  }
  return exit_internal;
}

}  // namespace hirec
