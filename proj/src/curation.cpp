#include "hirec/curation.hpp"

#include "hirec/errors.hpp"
#include "hirec/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

namespace hirec {

bool CurationVerdict::same_content(const CurationVerdict& o) const {
  return answerable == o.answerable && missing_information == o.missing_information &&
         draft_answer == o.draft_answer && relevant_context_ids == o.relevant_context_ids &&
         refined_query == o.refined_query && parse_ok == o.parse_ok;
}

namespace {

std::string header_name(std::string_view line) {
  // line starts with "##"; the name runs to the first ':'
  auto body = line.substr(2);
  auto colon = body.find(':');
  auto name = text::trim(body.substr(0, colon));
  while (!name.empty() && (name.front() == '*' || name.front() == '#')) name.remove_prefix(1);
  while (!name.empty() && name.back() == '*') name.remove_suffix(1);
  return text::to_lower(text::trim(name));
}

/// First occurrence of each "## name:" section, value spanning until the next header line.
std::map<std::string, std::string> split_sections(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string current;
  bool active = false;
  std::string value;
  auto flush = [&] {
    if (active && !out.count(current)) out.emplace(current, std::string(text::trim(value)));
    active = false;
    value.clear();
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    auto line = text::trim(raw);
    if (line.size() >= 2 && line.substr(0, 2) == "##" && line.find(':') != std::string_view::npos) {
      flush();
      current = header_name(line);
      active = true;
      value = std::string(line.substr(line.find(':') + 1));
    } else if (active) {
      value += '\n';
      value += raw;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  flush();
  return out;
}

std::string strip_decoration(std::string_view v) {
  v = text::trim(v);
  while (!v.empty() && (v.front() == '*' || v.front() == '\'' || v.front() == '"' || v.front() == '`')) v.remove_prefix(1);
  while (!v.empty() && (v.back() == '*' || v.back() == '\'' || v.back() == '"' || v.back() == '`' || v.back() == '.'))
    v.remove_suffix(1);
  return std::string(text::trim(v));
}

std::optional<std::string> optional_field(const std::map<std::string, std::string>& sections, const char* name) {
  auto it = sections.find(name);
  if (it == sections.end()) return std::nullopt;
  const std::string v(text::trim(it->second));
  const std::string l = text::to_lower(strip_decoration(v));
  if (v.empty() || l.empty() || l == "none" || l == "null" || l == "n/a") return std::nullopt;
  return v;
}

std::optional<bool> parse_answerable(std::string_view value) {
  const std::string l = text::to_lower(strip_decoration(value));
  if (l.empty()) return std::nullopt;
  for (const char* neg : {"unanswerable", "not answerable", "no", "false"})
    if (text::istarts_with(l, neg)) return false;
  for (const char* pos : {"answerable", "yes", "true"})
    if (text::istarts_with(l, pos)) return true;
  return std::nullopt;
}

std::vector<int> parse_ids(std::string_view value, const std::vector<int>& presented) {
  auto open = value.find('[');
  if (open != std::string_view::npos) {
    auto close = value.find(']', open);
    value = value.substr(open + 1, close == std::string_view::npos ? std::string_view::npos : close - open - 1);
  }
  const std::set<int> allowed(presented.begin(), presented.end());
  std::vector<int> out;
  std::size_t i = 0;
  while (i < value.size()) {
    if (!std::isdigit(static_cast<unsigned char>(value[i]))) {
      ++i;
      continue;
    }
    long long n = 0;
    while (i < value.size() && std::isdigit(static_cast<unsigned char>(value[i]))) {
      n = std::min<long long>(n * 10 + (value[i] - '0'), 1'000'000'000LL);
      ++i;
    }
    const int id = static_cast<int>(n);
    if (allowed.count(id) && std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  }
  return out;
}

CurationVerdict fallback_verdict(std::string_view raw) {
  CurationVerdict v;
  v.raw_text = std::string(raw);
  return v;
}

}  // namespace

CurationVerdict parse_curation_output(std::string_view text, const std::vector<int>& presented_ids) {
  const auto sections = split_sections(text);
  auto it = sections.find("is_answerable");
  if (it == sections.end()) return fallback_verdict(text);
  const auto answerable = parse_answerable(it->second);
  if (!answerable) return fallback_verdict(text);

  CurationVerdict v;
  v.raw_text = std::string(text);
  v.answerable = *answerable;
  v.missing_information = optional_field(sections, "missing_information");
  v.draft_answer = optional_field(sections, "answer");
  if (auto ids = sections.find("answerable_doc_ids"); ids != sections.end())
    v.relevant_context_ids = parse_ids(ids->second, presented_ids);
  v.refined_query = optional_field(sections, "refined_query");
  v.parse_ok = true;
  if (!v.answerable && !v.refined_query) return fallback_verdict(text);
  return v;
}

std::string render_curation_output(const CurationVerdict& v) {
  std::string ids;
  for (int id : v.relevant_context_ids) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
  std::string out;
  out += "## is_answerable: " + std::string(v.answerable ? "answerable" : "unanswerable") + "\n";
  out += "## missing_information: " + v.missing_information.value_or("None") + "\n";
  out += "## answer: " + v.draft_answer.value_or("None") + "\n";
  out += "## answerable_doc_ids: [" + ids + "]\n";
  out += "## refined_query: " + v.refined_query.value_or("None") + "\n";
  return out;
}

std::string render_curation_contexts(const std::vector<Passage>& candidates) {
  std::string out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    if (i) out += '\n';
    out += "Context" + n + " (ID: " + n + "): Title is " + candidates[i].title + ". Content is " +
           candidates[i].content;
  }
  return out;
}

std::string render_curation_prompt(std::string_view question, const std::vector<Passage>& candidates,
                                   const PromptSet& prompts) {
  return text::fill_template(prompts.get(PromptSet::curate),
                             {{"contexts", render_curation_contexts(candidates)}, {"question", std::string(question)}});
}

std::vector<Passage> merge_candidates(const std::vector<Passage>& previous_filtered,
                                      const std::vector<Passage>& new_passages) {
  std::vector<Passage> out;
  std::set<std::string> seen;
  for (const auto* list : {&previous_filtered, &new_passages})
    for (const auto& p : *list)
      if (seen.insert(p.passage_id).second) out.push_back(p);
  return out;
}

CurationVerdict curate(std::string_view question, const std::vector<Passage>& candidates, ChatModel& chat,
                       const PromptSet& prompts, double temperature, std::vector<ChatExchange>* log) {
  auto ex = chat.chat(std::nullopt, render_curation_prompt(question, candidates, prompts), temperature, Stage::curate);
  if (log) log->push_back(ex);
  std::vector<int> presented(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) presented[i] = static_cast<int>(i + 1);
  return parse_curation_output(ex.response_text, presented);
}

std::vector<Passage> apply_filter(const CurationVerdict& verdict, const std::vector<Passage>& candidates,
                                  std::size_t k_keep) {
  std::vector<Passage> out;
  const bool keep_leading = !verdict.parse_ok || (verdict.answerable && verdict.relevant_context_ids.empty());
  if (keep_leading) {
    std::set<std::string> seen;
    for (const auto& p : candidates) {
      if (out.size() >= k_keep) break;
      if (seen.insert(p.passage_id).second) out.push_back(p);
    }
    return out;
  }
  std::set<std::string> seen;
  for (int id : verdict.relevant_context_ids) {
    if (out.size() >= k_keep) break;
    if (id < 1 || static_cast<std::size_t>(id) > candidates.size()) continue;
    const auto& p = candidates[static_cast<std::size_t>(id - 1)];
    if (seen.insert(p.passage_id).second) out.push_back(p);
  }
  return out;
}

}  // namespace hirec
