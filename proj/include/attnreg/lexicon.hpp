#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attnreg::lexicon {

struct TargetTerms {
  std::vector<std::string> identity;
  std::vector<std::string> prejudice;

  friend bool operator==(const TargetTerms&, const TargetTerms&) = default;
};

// Identity and prejudice terms per hate target. Terms are lowercase, unique
// within a list, and a term never sits in both lists of one target.
class RelevantLexicon {
 public:
  RelevantLexicon() = default;
  explicit RelevantLexicon(std::map<std::string, TargetTerms> targets);

  const std::map<std::string, TargetTerms>& targets() const noexcept { return targets_; }
  bool has_target(std::string_view name) const;
  // Case-insensitive lookup; throws InvalidArgument for unknown targets.
  const TargetTerms& terms(std::string_view name) const;
  std::vector<std::string> target_names() const;

  friend bool operator==(const RelevantLexicon&, const RelevantLexicon&) = default;

 private:
  const std::string* find_key(std::string_view name) const;
  std::map<std::string, TargetTerms> targets_;
};

// JSON: {"<target>": {"identity": [...], "prejudice": [...]}, ...}.
// Terms are lowercased and deduplicated; an empty list adds a warning.
RelevantLexicon parse_lexicon(std::string_view json_text,
                              std::vector<std::string>* warnings = nullptr);
RelevantLexicon load_lexicon(const std::filesystem::path& path,
                             std::vector<std::string>* warnings = nullptr);
std::string serialize_lexicon(const RelevantLexicon& lex);

// The six targets' identity and prejudice lists used for the regularizers.
const RelevantLexicon& default_lexicon();
std::string_view default_lexicon_json();

// Surface forms tried against the term list: the word itself and the word
// with a trailing "s" or "es" removed.
std::vector<std::string> match_keys(std::string_view word);

// One flag per token: true when the lowercased token matches a term of any
// selected target. Structural tags are flagged only with include_special.
std::vector<bool> mark_relevant(std::span<const std::string> tokens, const RelevantLexicon& lex,
                                std::span<const std::string> targets,
                                bool include_special = false);

}  // namespace attnreg::lexicon
