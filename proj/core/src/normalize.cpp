#include "chainqa/normalize.hpp"

#include <cctype>

#include "chainqa/data.hpp"

namespace chainqa {

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& tok : tokenize(text)) {  // tokenize already lowercases and strips punctuation
    if (tok == "a" || tok == "an" || tok == "the") continue;
    out.push_back(std::move(tok));
  }
  return out;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& tok : normalize_tokens(text)) {
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

bool contains_token_subsequence(std::span<const std::string> haystack,
                                std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (haystack[i + j] != needle[j]) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

bool text_contains_answer(std::string_view text, std::span<const std::string> answers) {
  const std::vector<std::string> hay = normalize_tokens(text);
  for (const std::string& answer : answers) {
    const std::vector<std::string> needle = normalize_tokens(answer);
    if (contains_token_subsequence(hay, needle)) return true;
  }
  return false;
}

}  // namespace chainqa
