#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chainqa {

/// Lowercase, punctuation replaced by spaces, the articles "a"/"an"/"the"
/// dropped as whole tokens, whitespace collapsed.
std::string normalize_answer(std::string_view text);

/// Tokens of normalize_answer(text).
std::vector<std::string> normalize_tokens(std::string_view text);

/// True when `needle` occurs as a contiguous subsequence of `haystack`.
bool contains_token_subsequence(std::span<const std::string> haystack,
                                std::span<const std::string> needle);

/// Token-level answer presence: some normalized answer occurs as a contiguous
/// token subsequence of the normalized text ("mist" does not hit "mistake").
bool text_contains_answer(std::string_view text, std::span<const std::string> answers);

}  // namespace chainqa
