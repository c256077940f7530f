#include "attnreg/text.hpp"

#include <array>
#include <cctype>

namespace attnreg::text {
namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

bool is_special(std::string_view token) {
  return token == kHateSpeechTag || token == kCounterNarrativeTag || token == kEndOfText;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_words(std::string_view input) {
  static constexpr std::array<std::string_view, 3> kSpecials = {kHateSpeechTag,
                                                                kCounterNarrativeTag, kEndOfText};
  const std::string s = to_lower(input);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    bool matched = false;
    for (auto tag : kSpecials) {
      if (s.compare(i, tag.size(), tag) == 0) {
        out.emplace_back(tag);
        i += tag.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (!is_word_char(c)) {
      out.emplace_back(1, s[i]);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size()) {
      if (is_word_char(static_cast<unsigned char>(s[j]))) {
        ++j;
      } else if ((s[j] == '-' || s[j] == '\'') && j + 1 < s.size() &&
                 is_word_char(static_cast<unsigned char>(s[j + 1]))) {
        j += 2;
      } else {
        break;
      }
    }
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace attnreg::text
