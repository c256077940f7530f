#include "attnreg/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "attnreg/error.hpp"
#include "attnreg/random.hpp"
#include "attnreg/text.hpp"

namespace attnreg::data {
namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool contains_tag(std::string_view s) {
  const std::string lower = text::to_lower(s);
  return lower.find(text::kHateSpeechTag) != std::string::npos ||
         lower.find(text::kCounterNarrativeTag) != std::string::npos ||
         lower.find(text::kEndOfText) != std::string::npos;
}

std::vector<std::string> split_labels(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto slash = s.find('/', start);
    const auto part = s.substr(start, slash == std::string_view::npos ? s.npos : slash - start);
    out.push_back(trim(part));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return out;
}

std::string text_field(const json& obj, const char* name) {
  if (!obj.contains(name)) throw InvalidArgument(std::string("missing \"") + name + "\"");
  if (!obj[name].is_string()) throw InvalidArgument(std::string("\"") + name + "\" must be a string");
  std::string v = trim(obj[name].get<std::string>());
  if (v.empty()) throw InvalidArgument(std::string("\"") + name + "\" is empty");
  if (contains_tag(v)) throw InvalidArgument(std::string("\"") + name + "\" contains a special tag");
  return v;
}

PairRecord parse_record(const json& obj, std::size_t line) {
  if (!obj.is_object()) throw InvalidArgument("expected a JSON object");
  PairRecord r;
  r.hs = text_field(obj, "hs");
  r.cn = text_field(obj, "cn");
  if (!obj.contains("target")) throw InvalidArgument("missing \"target\"");
  std::vector<std::string> labels;
  const json& t = obj["target"];
  if (t.is_string()) {
    labels = split_labels(t.get<std::string>());
  } else if (t.is_array()) {
    for (const auto& v : t) {
      if (!v.is_string()) throw InvalidArgument("\"target\" entries must be strings");
      labels.push_back(trim(v.get<std::string>()));
    }
  } else {
    throw InvalidArgument("\"target\" must be a string or an array");
  }
  std::set<std::string> seen;
  for (const auto& l : labels) {
    auto c = canonical_target(l);
    if (seen.insert(c).second) r.targets.push_back(std::move(c));
  }
  if (r.targets.empty()) throw InvalidArgument("\"target\" is empty");
  if (obj.contains("id")) {
    const json& id = obj["id"];
    if (id.is_string()) {
      r.id = id.get<std::string>();
    } else if (id.is_number_integer()) {
      r.id = std::to_string(id.get<long long>());
    } else {
      throw InvalidArgument("\"id\" must be a string or an integer");
    }
  } else {
    r.id = std::to_string(line);
  }
  return r;
}

// Template vocabulary for the toy corpus. Kept free of lexicon terms so the
// planted relevant words are the only matches.
constexpr const char* kVerbs[] = {"ruin", "invade", "poison", "exploit", "corrupt", "threaten"};
constexpr const char* kNouns[] = {"towns", "streets", "homes", "values", "future", "neighbourhoods"};
constexpr const char* kHsTemplates[] = {
    "{id} {verb} our {noun} and bring {prej} everywhere .",
    "every {id} is a source of {prej} , they {verb} our {noun} .",
    "we must stop the {id} before they {verb} our {noun} with {prej} .",
};
constexpr const char* kCnTemplates[] = {
    "linking {id} people to {prej} is a stereotype that ignores the facts .",
    "{id} people do not {verb} our {noun} , they help build them .",
    "there is no evidence that {id} people bring {prej} , such claims only spread fear .",
};

std::string fill(std::string tpl, const std::map<std::string, std::string>& slots) {
  for (const auto& [key, value] : slots) {
    const std::string pat = "{" + key + "}";
    for (auto pos = tpl.find(pat); pos != std::string::npos; pos = tpl.find(pat, pos + value.size())) {
      tpl.replace(pos, pat.size(), value);
    }
  }
  return tpl;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

}  // namespace

const std::vector<std::string>& target_labels() {
  static const std::vector<std::string> labels = {"Disabled", "Jews",  "LGBT+", "Migrants",
                                                  "Muslims",  "POC",   "Women", "other"};
  return labels;
}

std::string canonical_target(std::string_view label) {
  const std::string lower = text::to_lower(trim(label));
  for (const auto& l : target_labels()) {
    if (text::to_lower(l) == lower) return l;
  }
  throw InvalidArgument("unknown target label '" + std::string(label) + "'");
}

std::vector<std::string> parse_targets(std::string_view field) {
  std::vector<std::string> out;
  for (const auto& l : split_labels(field)) {
    auto c = canonical_target(l);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
  }
  return out;
}

std::string PairRecord::target() const {
  std::string out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i) out += '/';
    out += targets[i];
  }
  return out;
}

std::vector<PairRecord> parse_jsonl(std::istream& is) {
  std::vector<PairRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_record(json::parse(line), n));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

std::vector<PairRecord> ingest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read dataset " + path.string());
  try {
    return parse_jsonl(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string to_json_line(const PairRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["hs"] = r.hs;
  j["cn"] = r.cn;
  j["target"] = r.target();
  return j.dump();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<PairRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& r : records) os << to_json_line(r) << '\n';
}

std::string serialize_pair(const PairRecord& r) {
  return generation_prompt(r.hs) + " " + r.cn + " " + std::string(text::kEndOfText);
}

std::string generation_prompt(std::string_view hs) {
  return std::string(text::kHateSpeechTag) + " " + std::string(hs) + " " +
         std::string(text::kCounterNarrativeTag);
}

ParsedPair parse_pair(std::string_view s) {
  const std::string head = std::string(text::kHateSpeechTag) + " ";
  const std::string mid = " " + std::string(text::kCounterNarrativeTag) + " ";
  const std::string tail = " " + std::string(text::kEndOfText);
  if (!s.starts_with(head) || !s.ends_with(tail) || s.size() < head.size() + tail.size()) {
    throw ParseError("not a serialized pair");
  }
  const auto body = s.substr(head.size(), s.size() - head.size() - tail.size());
  const auto m = body.find(mid);
  if (m == std::string_view::npos) throw ParseError("serialized pair lacks the counter-narrative tag");
  ParsedPair p{std::string(body.substr(0, m)), std::string(body.substr(m + mid.size()))};
  if (p.hs.empty() || p.cn.empty()) throw ParseError("serialized pair has an empty side");
  return p;
}

std::string extract_counter_narrative(const std::vector<std::string>& words) {
  auto it = std::find(words.begin(), words.end(), text::kCounterNarrativeTag);
  it = it == words.end() ? words.begin() : it + 1;
  std::vector<std::string> cn;
  for (; it != words.end() && *it != text::kEndOfText; ++it) {
    if (!text::is_special(*it)) cn.push_back(*it);
  }
  return text::join(cn);
}

Split split_in_target(const std::vector<PairRecord>& records, std::uint64_t seed,
                      std::vector<std::string>* warnings) {
  if (records.size() < 10) throw InvalidArgument("split_in_target: need at least 10 records");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].target()].push_back(i);

  enum Part : std::uint8_t { kTrain, kDev, kTest };
  std::vector<Part> part(records.size(), kTrain);
  std::uint64_t g = 0;
  for (auto& [label, idx] : groups) {
    const std::size_t n = idx.size();
    if (n < 3) {
      if (warnings) {
        warnings->push_back("target '" + label + "' has " + std::to_string(n) +
                            " record(s); all assigned to train");
      }
      ++g;
      continue;
    }
    Rng rng(derive_seed(seed, g++));
    rng.shuffle(std::span<std::size_t>(idx));
    const std::size_t held = (n + 5) / 10;  // round(n / 10), halves up
    for (std::size_t k = 0; k < held; ++k) {
      part[idx[k]] = kDev;
      part[idx[held + k]] = kTest;
    }
  }
  Split s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (part[i] == kTrain ? s.train : part[i] == kDev ? s.dev : s.test).push_back(records[i]);
  }
  return s;
}

Split split_loto(const std::vector<PairRecord>& records, std::string_view held_out,
                 std::size_t cap, std::uint64_t seed) {
  const std::string target = canonical_target(held_out);
  std::vector<std::size_t> test_idx;
  bool present = false;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& t = records[i].targets;
    if (std::find(t.begin(), t.end(), target) != t.end()) present = true;
    if (!records[i].multi_target() && t.front() == target) test_idx.push_back(i);
  }
  if (!present) throw InvalidArgument("split_loto: target '" + target + "' not in the data");
  if (test_idx.size() > cap) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(test_idx));
    test_idx.resize(cap);
    std::sort(test_idx.begin(), test_idx.end());
  }
  Split s;
  for (auto i : test_idx) s.test.push_back(records[i]);
  for (const auto& r : records) {
    if (!r.multi_target() && r.targets.front() != target) s.train.push_back(r);
  }
  return s;
}

bool is_blocked_term(std::string_view term) {
  static const std::set<std::string, std::less<>> blocked = {"retard", "downies", "faggot",
                                                             "nigga",  "nigger",  "negro"};
  return blocked.contains(text::to_lower(term));
}

std::vector<PairRecord> make_toy_corpus(std::size_t n_pairs, std::uint64_t seed,
                                        const lexicon::RelevantLexicon& lex) {
  struct Pool {
    std::string name;
    std::vector<std::string> identity, prejudice;
  };
  std::vector<Pool> pools;
  for (const auto& [name, terms] : lex.targets()) {
    Pool p{name, {}, {}};
    for (const auto& t : terms.identity) {
      if (!is_blocked_term(t)) p.identity.push_back(t);
    }
    for (const auto& t : terms.prejudice) {
      if (!is_blocked_term(t)) p.prejudice.push_back(t);
    }
    if (!p.identity.empty() && !p.prejudice.empty()) pools.push_back(std::move(p));
  }
  if (pools.empty()) throw InvalidArgument("make_toy_corpus: lexicon has no usable target");
  const std::vector<std::string> verbs(std::begin(kVerbs), std::end(kVerbs));
  const std::vector<std::string> nouns(std::begin(kNouns), std::end(kNouns));
  const auto n_hs = std::size(kHsTemplates);
  const auto n_cn = std::size(kCnTemplates);

  Rng rng(seed);
  std::vector<PairRecord> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const Pool& pool = pools[i % pools.size()];
    const std::map<std::string, std::string> slots = {
        {"id", pick(rng, pool.identity)},
        {"prej", pick(rng, pool.prejudice)},
        {"verb", pick(rng, verbs)},
        {"noun", pick(rng, nouns)},
    };
    PairRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "toy-%05zu", i + 1);
    r.id = id;
    r.hs = fill(kHsTemplates[rng.below(n_hs)], slots);
    r.cn = fill(kCnTemplates[rng.below(n_cn)], slots);
    r.targets = {canonical_target(pool.name)};
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<bool> relevant_mask(const std::vector<std::string>& words,
                                const std::vector<std::string>& targets,
                                const lexicon::RelevantLexicon& lex) {
  std::vector<std::string> known;
  for (const auto& t : targets) {
    if (lex.has_target(t)) known.push_back(t);
  }
  return lexicon::mark_relevant(words, lex, known, /*include_special=*/false);
}

model::TrainingExample make_example(const PairRecord& r, const model::Vocabulary& vocab,
                                    const lexicon::RelevantLexicon& lex, std::size_t max_len) {
  auto words = text::split_words(serialize_pair(r));
  if (words.size() > max_len) words.resize(max_len);
  model::TrainingExample ex;
  ex.relevant = relevant_mask(words, r.targets, lex);
  ex.special.resize(words.size());
  ex.cn_begin = words.size();
  for (std::size_t i = 0; i < words.size(); ++i) {
    ex.tokens.push_back(vocab.id(words[i]));
    ex.special[i] = text::is_special(words[i]);
    if (ex.cn_begin == words.size() && words[i] == text::kCounterNarrativeTag) ex.cn_begin = i + 1;
  }
  ex.cn_begin = std::min(ex.cn_begin, words.size());
  return ex;
}

std::vector<std::string> corpus_texts(const std::vector<PairRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(serialize_pair(r));
  return out;
}

}  // namespace attnreg::data
