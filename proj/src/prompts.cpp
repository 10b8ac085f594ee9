#include "hirec/prompts.hpp"

#include "hirec/errors.hpp"
#include "hirec_embedded_prompts.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace hirec {

namespace {

std::string strip_final_newline(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

}  // namespace

const PromptSet& PromptSet::defaults() {
  static const PromptSet set = [] {
    PromptSet s;
    for (const auto& p : detail::kEmbeddedPrompts) s.templates_.emplace(p.name, strip_final_newline(p.text));
    return s;
  }();
  return set;
}

PromptSet PromptSet::load(const std::string& dir) {
  PromptSet s = defaults();
  if (dir.empty()) return s;
  if (!std::filesystem::is_directory(dir)) throw ParseError("prompts directory not found: " + dir);
  for (auto& [name, text] : s.templates_) {
    const auto path = std::filesystem::path(dir) / (name + ".txt");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    text = strip_final_newline(buf.str());
  }
  return s;
}

const std::string& PromptSet::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ParseError("unknown prompt template: " + std::string(name));
  return it->second;
}

void PromptSet::set(std::string_view name, std::string text) { templates_[std::string(name)] = std::move(text); }

}  // namespace hirec
