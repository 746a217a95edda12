#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ovdlab::text {

// ASCII-only case folding; bytes >= 0x80 pass through untouched.
std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);
bool contains_ci(std::string_view haystack, std::string_view needle);
// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string normalize_phrase(std::string_view s);
bool is_word_byte(char c);

}  // namespace ovdlab::text
