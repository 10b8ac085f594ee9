#pragma once

#include <map>
#include <string>
#include <string_view>

namespace hirec {

/// Named prompt templates. Defaults are compiled in from prompts/*.txt; a prompts directory
/// may override any subset by providing a file with the same name.
class PromptSet {
 public:
  static constexpr std::string_view summarize = "summarize";
  static constexpr std::string_view transform = "transform";
  static constexpr std::string_view curate = "curate";
  static constexpr std::string_view classify = "classify";
  static constexpr std::string_view pot_system = "pot_system";
  static constexpr std::string_view pot_user = "pot_user";
  static constexpr std::string_view pot_repair = "pot_repair";
  static constexpr std::string_view cot_system = "cot_system";
  static constexpr std::string_view cot_user = "cot_user";
  static constexpr std::string_view judge = "judge";

  static const PromptSet& defaults();
  /// Defaults overlaid with `<dir>/<name>.txt` for every file present.
  static PromptSet load(const std::string& dir);

  const std::string& get(std::string_view name) const;
  void set(std::string_view name, std::string text);

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

}  // namespace hirec
