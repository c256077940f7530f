#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "attnreg/lexicon.hpp"
#include "attnreg/tokenizer.hpp"
#include "attnreg/trainer.hpp"

namespace attnreg::data {

// Accepted target labels, in canonical spelling.
const std::vector<std::string>& target_labels();
// Case-insensitive match against target_labels(); throws InvalidArgument.
std::string canonical_target(std::string_view label);
// "Jews/Women" -> {"Jews", "Women"}, canonical and deduplicated.
std::vector<std::string> parse_targets(std::string_view field);

struct PairRecord {
  std::string id;
  std::string hs;
  std::string cn;
  std::vector<std::string> targets;  // canonical labels, at least one

  bool multi_target() const { return targets.size() > 1; }
  // Labels joined with '/'.
  std::string target() const;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

// One JSON object per line with string fields "hs", "cn" and "target"
// (a label, labels joined by '/', or an array of labels) and an optional
// "id". Blank lines are skipped; a missing id becomes the line number.
// Malformed lines raise ParseError carrying the line number.
std::vector<PairRecord> parse_jsonl(std::istream& is);
std::vector<PairRecord> ingest(const std::filesystem::path& path);

std::string to_json_line(const PairRecord& r);
void write_jsonl(const std::filesystem::path& path, const std::vector<PairRecord>& records);

// "<hatespeech> HS <counternarrative> CN <|endoftext|>"
std::string serialize_pair(const PairRecord& r);
// "<hatespeech> HS <counternarrative>"
std::string generation_prompt(std::string_view hs);

struct ParsedPair {
  std::string hs;
  std::string cn;
};
// Inverse of serialize_pair; throws ParseError on anything else.
ParsedPair parse_pair(std::string_view text);

// Text after the first counter-narrative tag up to the end-of-text tag (or
// the end), with any further tags dropped.
std::string extract_counter_narrative(const std::vector<std::string>& words);

struct Split {
  std::vector<PairRecord> train;
  std::vector<PairRecord> dev;
  std::vector<PairRecord> test;
};

// Stratified 8:1:1 by target label: each group gives round(n/10) records to
// dev and to test, the rest to train. Groups smaller than 3 go wholly to
// train and add a warning. Every part keeps the input order.
Split split_in_target(const std::vector<PairRecord>& records, std::uint64_t seed,
                      std::vector<std::string>* warnings = nullptr);

inline constexpr std::size_t kDefaultLotoCap = 600;

// Test: single-target records of `held_out`, sampled down to `cap` under
// `seed`. Train: single-target records of every other target. Multi-target
// records are left out of both. Only train and test are filled.
Split split_loto(const std::vector<PairRecord>& records, std::string_view held_out,
                 std::size_t cap = kDefaultLotoCap, std::uint64_t seed = 0);

// Words that never enter generated text.
bool is_blocked_term(std::string_view term);

// Templated hate-speech / counter-narrative pairs over the lexicon targets,
// cycling through them in order.
std::vector<PairRecord> make_toy_corpus(std::size_t n_pairs, std::uint64_t seed,
                                        const lexicon::RelevantLexicon& lex =
                                            lexicon::default_lexicon());

// Tokenized training example. Relevant flags come from the lexicon lists of
// the record's targets (targets missing from the lexicon contribute none).
// Sequences longer than max_len are truncated.
model::TrainingExample make_example(const PairRecord& r, const model::Vocabulary& vocab,
                                    const lexicon::RelevantLexicon& lex, std::size_t max_len);

// Relevance flags of a word sequence for the record's targets.
std::vector<bool> relevant_mask(const std::vector<std::string>& words,
                                const std::vector<std::string>& targets,
                                const lexicon::RelevantLexicon& lex);

std::vector<std::string> corpus_texts(const std::vector<PairRecord>& records);

}  // namespace attnreg::data
