#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attnreg/model.hpp"

namespace attnreg::model {

// Word-level vocabulary. Ids 0..3 are reserved for <unk> and the three
// structural tags; corpus words follow by descending frequency, ties by
// byte order.
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kHateSpeech = 1;
  static constexpr TokenId kCounterNarrative = 2;
  static constexpr TokenId kEndOfText = 3;

  Vocabulary();

  static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_count = 1);

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(TokenId id) const { return words_.at(id); }
  TokenId id(std::string_view word) const;
  bool is_special(TokenId id) const noexcept { return id >= 1 && id <= 3; }

  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<std::string> words(const std::vector<TokenId>& ids) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  // One word per line, in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void add(std::string w);

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace attnreg::model
