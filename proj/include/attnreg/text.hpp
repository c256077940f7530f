#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace attnreg::text {

inline constexpr std::string_view kHateSpeechTag = "<hatespeech>";
inline constexpr std::string_view kCounterNarrativeTag = "<counternarrative>";
inline constexpr std::string_view kEndOfText = "<|endoftext|>";

bool is_special(std::string_view token);

std::string to_lower(std::string_view s);

// Lowercased word tokenization. Special tags stay whole, words may carry
// inner hyphens or apostrophes ("afro-american", "don't"), and every other
// non-space character becomes its own token.
std::vector<std::string> split_words(std::string_view text);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

}  // namespace attnreg::text
