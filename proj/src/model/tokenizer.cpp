#include "attnreg/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "attnreg/error.hpp"
#include "attnreg/text.hpp"

namespace attnreg::model {

Vocabulary::Vocabulary() {
  add("<unk>");
  add(std::string(text::kHateSpeechTag));
  add(std::string(text::kCounterNarrativeTag));
  add(std::string(text::kEndOfText));
}

void Vocabulary::add(std::string w) {
  if (index_.contains(w)) return;
  index_.emplace(w, static_cast<TokenId>(words_.size()));
  words_.push_back(std::move(w));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : text::split_words(t)) {
      if (!text::is_special(w)) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [w, c] : ordered) {
    if (c >= min_count && w != "<unk>") v.add(w);
  }
  return v;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view s) const {
  std::vector<TokenId> ids;
  for (const auto& w : text::split_words(s)) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::words(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(word(id));
  return out;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  return text::join(words(ids));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& w : words_) os << w << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  Vocabulary v;
  if (lines.size() < v.size()) throw ParseError("vocabulary file too short: " + path.string());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (lines[i] != v.words_[i]) {
      throw ParseError("vocabulary reserved entry mismatch", i + 1);
    }
  }
  for (std::size_t i = v.size(); i < lines.size(); ++i) {
    if (v.index_.contains(lines[i])) throw ParseError("duplicate vocabulary entry", i + 1);
    v.add(lines[i]);
  }
  return v;
}

}  // namespace attnreg::model
