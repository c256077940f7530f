#include "attnreg/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "attnreg/error.hpp"
#include "attnreg/text.hpp"

namespace attnreg::lexicon {
namespace {

using json = nlohmann::json;

std::vector<std::string> normalize_list(const json& list, const std::string& where,
                                        std::vector<std::string>* warnings) {
  if (!list.is_array()) throw ParseError(where + ": expected an array of strings");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t k = 0; k < list.size(); ++k) {
    if (!list[k].is_string()) {
      throw ParseError(where + "[" + std::to_string(k) + "]: expected a string");
    }
    std::string term = text::to_lower(list[k].get<std::string>());
    term.erase(0, term.find_first_not_of(" \t"));
    term.erase(term.find_last_not_of(" \t") + 1);
    if (term.empty()) throw ParseError(where + "[" + std::to_string(k) + "]: empty term");
    if (seen.insert(term).second) out.push_back(std::move(term));
  }
  if (out.empty() && warnings) warnings->push_back(where + ": empty term list");
  return out;
}

}  // namespace

RelevantLexicon::RelevantLexicon(std::map<std::string, TargetTerms> targets)
    : targets_(std::move(targets)) {
  for (const auto& [name, t] : targets_) {
    std::set<std::string> identity(t.identity.begin(), t.identity.end());
    for (const auto& p : t.prejudice) {
      if (identity.contains(p)) {
        throw InvalidArgument("lexicon target '" + name + "': term '" + p +
                              "' is both identity and prejudice");
      }
    }
  }
}

const std::string* RelevantLexicon::find_key(std::string_view name) const {
  auto it = targets_.find(std::string(name));
  if (it != targets_.end()) return &it->first;
  const std::string lower = text::to_lower(name);
  for (const auto& [key, terms] : targets_) {
    if (text::to_lower(key) == lower) return &key;
  }
  return nullptr;
}

bool RelevantLexicon::has_target(std::string_view name) const { return find_key(name) != nullptr; }

const TargetTerms& RelevantLexicon::terms(std::string_view name) const {
  const std::string* key = find_key(name);
  if (!key) throw InvalidArgument("unknown lexicon target '" + std::string(name) + "'");
  return targets_.at(*key);
}

std::vector<std::string> RelevantLexicon::target_names() const {
  std::vector<std::string> names;
  for (const auto& [k, v] : targets_) names.push_back(k);
  return names;
}

RelevantLexicon parse_lexicon(std::string_view json_text, std::vector<std::string>* warnings) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; turn it into a line number.
    const std::size_t offset = std::min<std::size_t>(e.byte, json_text.size());
    const auto line = static_cast<std::size_t>(
        std::count(json_text.begin(), json_text.begin() + static_cast<std::ptrdiff_t>(offset),
                   '\n') + 1);
    throw ParseError(std::string("lexicon: ") + e.what(), line);
  }
  if (!doc.is_object()) throw ParseError("lexicon: top level must be an object");
  std::map<std::string, TargetTerms> targets;
  for (const auto& [name, entry] : doc.items()) {
    if (!entry.is_object()) throw ParseError("lexicon target '" + name + "': expected an object");
    TargetTerms t;
    for (const auto& [field, value] : entry.items()) {
      const std::string where = name + "." + field;
      if (field == "identity") {
        t.identity = normalize_list(value, where, warnings);
      } else if (field == "prejudice") {
        t.prejudice = normalize_list(value, where, warnings);
      } else {
        throw ParseError("lexicon: unknown field '" + where + "'");
      }
    }
    if (!entry.contains("identity") && warnings) warnings->push_back(name + ".identity: missing");
    if (!entry.contains("prejudice") && warnings) warnings->push_back(name + ".prejudice: missing");
    targets.emplace(name, std::move(t));
  }
  try {
    return RelevantLexicon(std::move(targets));
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
}

RelevantLexicon load_lexicon(const std::filesystem::path& path,
                             std::vector<std::string>* warnings) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read lexicon " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_lexicon(ss.str(), warnings);
}

std::string serialize_lexicon(const RelevantLexicon& lex) {
  json doc = json::object();
  for (const auto& [name, t] : lex.targets()) {
    doc[name] = {{"identity", t.identity}, {"prejudice", t.prejudice}};
  }
  return doc.dump(2);
}

const RelevantLexicon& default_lexicon() {
  static const RelevantLexicon lex = parse_lexicon(default_lexicon_json());
  return lex;
}

std::vector<std::string> match_keys(std::string_view word) {
  std::string w = text::to_lower(word);
  std::vector<std::string> keys{w};
  if (w.size() > 1 && w.back() == 's') keys.push_back(w.substr(0, w.size() - 1));
  if (w.size() > 2 && w.ends_with("es")) keys.push_back(w.substr(0, w.size() - 2));
  return keys;
}

std::vector<bool> mark_relevant(std::span<const std::string> tokens, const RelevantLexicon& lex,
                                std::span<const std::string> targets, bool include_special) {
  std::set<std::string> terms;
  for (const auto& name : targets) {
    const TargetTerms& t = lex.terms(name);
    terms.insert(t.identity.begin(), t.identity.end());
    terms.insert(t.prejudice.begin(), t.prejudice.end());
  }
  std::vector<bool> mask(tokens.size(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string lower = text::to_lower(tokens[i]);
    if (text::is_special(lower)) {
      mask[i] = include_special;
      continue;
    }
    for (const auto& key : match_keys(lower)) {
      if (terms.contains(key)) {
        mask[i] = true;
        break;
      }
    }
  }
  return mask;
}

}  // namespace attnreg::lexicon
