#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hirec::text {

/// Lowercased ASCII alphanumeric runs, in order of appearance (duplicates kept).
std::vector<std::string> tokenize(std::string_view s);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view s) noexcept;

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s) noexcept;
bool istarts_with(std::string_view s, std::string_view prefix) noexcept;

/// Position of the first case-insensitive match of `needle` at or after `from`, or npos.
std::size_t ifind(std::string_view hay, std::string_view needle, std::size_t from = 0) noexcept;
/// Position of the last case-insensitive match, or npos.
std::size_t irfind(std::string_view hay, std::string_view needle) noexcept;

/// Replaces `{name}` placeholders in a single left-to-right pass; substituted text is not rescanned.
std::string fill_template(std::string_view tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values);

std::string hex64(std::uint64_t v);

}  // namespace hirec::text
