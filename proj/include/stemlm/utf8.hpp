#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stemlm::utf8 {

// Decodes UTF-8 into Unicode scalar values. Throws Error(data) naming the
// byte offset of the first invalid sequence (overlong forms, surrogates and
// values above U+10FFFF are rejected).
std::u32string decode(std::string_view bytes);

std::string encode(std::u32string_view text);

bool is_space(char32_t c) noexcept;

// Splits a line into maximal runs of non-whitespace code points.
std::vector<std::string> split_whitespace(std::string_view line);

}  // namespace stemlm::utf8
