#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace cisum::text {

// Short-sentence delimiters: full-width Chinese and ASCII forms.
inline constexpr std::array<std::string_view, 10> kSentenceDelimiters = {
    "，", "。", "！", "？", "；", ",", ".", "!", "?", ";"};

// Length in bytes of the delimiter starting at s[pos], or 0.
std::size_t delimiter_at(std::string_view s, std::size_t pos);

// Byte length of the UTF-8 sequence starting with lead byte c (1 for
// invalid lead bytes so iteration always advances).
std::size_t utf8_length(unsigned char c);

std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split_codepoints(std::string_view s);
std::string trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace cisum::text
