#include "attnreg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "attnreg/error.hpp"
#include "attnreg/text.hpp"

namespace attnreg::metrics {
namespace {

constexpr int kMaxRrOrder = 4;

std::string ngram_key(const Sentence& s, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t k = 0; k < n; ++k) {
    if (k) key += '\x1f';
    key += s[start + k];
  }
  return key;
}

std::map<std::string, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::string, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[ngram_key(s, i, n)];
  return counts;
}

struct OrderStats {
  std::size_t matches = 0;
  std::size_t total = 0;
};

// Clipped matches and candidate n-gram totals for orders 1..n.
std::vector<OrderStats> clipped_counts(const Sentence& cand, const std::vector<Sentence>& refs,
                                       int n) {
  std::vector<OrderStats> out(static_cast<std::size_t>(n));
  for (int order = 1; order <= n; ++order) {
    const auto o = static_cast<std::size_t>(order);
    const auto cand_counts = ngram_counts(cand, o);
    std::map<std::string, std::size_t> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, c] : ngram_counts(r, o)) max_ref[g] = std::max(max_ref[g], c);
    }
    OrderStats& st = out[o - 1];
    for (const auto& [g, c] : cand_counts) {
      st.total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) st.matches += std::min(c, it->second);
    }
  }
  return out;
}

std::size_t closest_ref_length(std::size_t cand_len, const std::vector<Sentence>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) {
      return len > cand_len ? len - cand_len : cand_len - len;
    };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

double combine(const std::vector<OrderStats>& stats, std::size_t cand_len, std::size_t ref_len,
               bool smoothing) {
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    double m = static_cast<double>(stats[i].matches);
    double t = static_cast<double>(stats[i].total);
    if (smoothing && i > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (t == 0.0 || m == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = cand_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len))
                        : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(stats.size()));
}

void check_order(int n) {
  if (n < 1 || n > 4) throw InvalidArgument("bleu: order must be in 1..4");
}

}  // namespace

Sentence tokenize(const std::string& s) { return text::split_words(s); }

double repetition_rate(const std::vector<Sentence>& corpus, std::size_t window) {
  if (window < 1) throw InvalidArgument("repetition_rate: window must be >= 1");
  // Flatten, remembering which sentence each position came from.
  Sentence tokens;
  std::vector<std::size_t> sentence_of;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    for (const auto& w : corpus[s]) {
      tokens.push_back(w);
      sentence_of.push_back(s);
    }
  }
  if (tokens.empty()) throw InvalidArgument("repetition_rate: empty corpus");
  const std::size_t total = tokens.size();
  const std::size_t w = std::min(window, total);

  // keys[n-1][s]: n-gram starting at s, empty when it would cross a boundary.
  std::array<std::vector<std::string>, kMaxRrOrder> keys;
  for (std::size_t n = 1; n <= kMaxRrOrder; ++n) {
    auto& kn = keys[n - 1];
    kn.assign(total, {});
    for (std::size_t s = 0; s + n <= total; ++s) {
      if (sentence_of[s] == sentence_of[s + n - 1]) kn[s] = ngram_key(tokens, s, n);
    }
  }

  struct Window {
    std::unordered_map<std::string, std::size_t> counts;
    std::size_t types = 0;
    std::size_t repeated = 0;
    void add(const std::string& k) {
      const std::size_t c = ++counts[k];
      if (c == 1) ++types;
      if (c == 2) ++repeated;
    }
    void remove(const std::string& k) {
      auto it = counts.find(k);
      const std::size_t c = it->second--;
      if (c == 2) --repeated;
      if (c == 1) {
        --types;
        counts.erase(it);
      }
    }
  };
  std::array<Window, kMaxRrOrder> win;
  for (std::size_t n = 1; n <= kMaxRrOrder; ++n) {
    for (std::size_t s = 0; s + n <= w; ++s) {
      if (!keys[n - 1][s].empty()) win[n - 1].add(keys[n - 1][s]);
    }
  }

  double sum = 0.0;
  std::size_t windows = 0;
  for (std::size_t a = 0;; ++a) {
    double log_sum = 0.0;
    int orders = 0;
    bool zero = false;
    for (const auto& wn : win) {
      if (wn.types == 0) continue;
      ++orders;
      if (wn.repeated == 0) {
        zero = true;
        break;
      }
      log_sum += std::log(static_cast<double>(wn.repeated) / static_cast<double>(wn.types));
    }
    sum += (zero || orders == 0) ? 0.0 : std::exp(log_sum / orders);
    ++windows;
    if (a + w >= total) break;
    // Slide [a, a+w) -> [a+1, a+w+1).
    for (std::size_t n = 1; n <= kMaxRrOrder; ++n) {
      if (n <= w && !keys[n - 1][a].empty()) win[n - 1].remove(keys[n - 1][a]);
      if (n <= w) {
        const std::size_t start = a + w + 1 - n;
        if (!keys[n - 1][start].empty()) win[n - 1].add(keys[n - 1][start]);
      }
    }
  }
  return 100.0 * sum / static_cast<double>(windows);
}

double bleu(const Sentence& candidate, const std::vector<Sentence>& references, int n,
            bool smoothing) {
  check_order(n);
  if (references.empty()) throw InvalidArgument("bleu: no references");
  if (candidate.empty()) return 0.0;
  return combine(clipped_counts(candidate, references, n), candidate.size(),
                 closest_ref_length(candidate.size(), references), smoothing);
}

double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references, int n,
                   const BleuOptions& opts) {
  check_order(n);
  if (candidates.size() != references.size()) {
    throw InvalidArgument("corpus_bleu: candidate/reference count mismatch");
  }
  if (candidates.empty()) return 0.0;
  if (opts.sentence_level) {
    double s = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      s += bleu(candidates[i], references[i], n, opts.smoothing);
    return s / static_cast<double>(candidates.size());
  }
  std::vector<OrderStats> pooled(static_cast<std::size_t>(n));
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw InvalidArgument("corpus_bleu: no references for a candidate");
    const auto st = clipped_counts(candidates[i], references[i], n);
    for (std::size_t o = 0; o < st.size(); ++o) {
      pooled[o].matches += st[o].matches;
      pooled[o].total += st[o].total;
    }
    cand_len += candidates[i].size();
    ref_len += closest_ref_length(candidates[i].size(), references[i]);
  }
  return combine(pooled, cand_len, ref_len, opts.smoothing);
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Sentence& candidate, const Sentence& reference) {
  if (reference.empty()) throw InvalidArgument("rouge_l: empty reference");
  if (candidate.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double corpus_rouge_l(const std::vector<Sentence>& candidates,
                      const std::vector<std::vector<Sentence>>& references) {
  if (candidates.size() != references.size()) {
    throw InvalidArgument("corpus_rouge_l: candidate/reference count mismatch");
  }
  if (candidates.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (const auto& r : references[i]) best = std::max(best, rouge_l(candidates[i], r));
    s += best;
  }
  return s / static_cast<double>(candidates.size());
}

bool is_generation_error(const Sentence& raw) {
  std::size_t hs = 0, cn = 0;
  for (const auto& t : raw) {
    if (t == text::kHateSpeechTag) ++hs;
    if (t == text::kCounterNarrativeTag) ++cn;
  }
  if (hs > 1 || cn > 1) return true;
  auto it = std::find(raw.begin(), raw.end(), text::kCounterNarrativeTag);
  it = it == raw.end() ? raw.begin() : it + 1;
  for (; it != raw.end() && *it != text::kEndOfText; ++it) {
    if (!text::is_special(*it)) return false;
  }
  return true;
}

double generation_error_rate(const std::vector<Sentence>& outputs) {
  if (outputs.empty()) return 0.0;
  const auto errors = std::count_if(outputs.begin(), outputs.end(), is_generation_error);
  return static_cast<double>(errors) / static_cast<double>(outputs.size());
}

MetricReport evaluate(const std::vector<Sentence>& outputs, const std::vector<Sentence>& candidates,
                      const std::vector<std::vector<Sentence>>& references,
                      const EvalOptions& opts) {
  MetricReport r;
  r.count = candidates.size();
  std::vector<Sentence> non_empty;
  for (const auto& c : candidates) {
    if (!c.empty()) non_empty.push_back(c);
  }
  r.rr = non_empty.empty() ? 0.0 : repetition_rate(non_empty, opts.rr_window);
  r.bleu1 = corpus_bleu(candidates, references, 1, opts.bleu);
  r.bleu3 = corpus_bleu(candidates, references, 3, opts.bleu);
  r.bleu4 = corpus_bleu(candidates, references, 4, opts.bleu);
  r.rouge_l = corpus_rouge_l(candidates, references);
  r.gen_error_rate = generation_error_rate(outputs);
  return r;
}

std::vector<double> composite_score(const std::vector<MetricReport>& runs) {
  if (runs.size() < 2) throw InvalidArgument("composite_score: need at least two runs");
  struct Metric {
    double MetricReport::*field;
    bool lower_is_better;
  };
  static constexpr std::array<Metric, 6> kMetrics = {{
      {&MetricReport::rr, true},
      {&MetricReport::bleu1, false},
      {&MetricReport::bleu3, false},
      {&MetricReport::bleu4, false},
      {&MetricReport::rouge_l, false},
      {&MetricReport::gen_error_rate, true},
  }};
  std::vector<double> scores(runs.size(), 0.0);
  for (const auto& m : kMetrics) {
    double lo = runs[0].*m.field, hi = lo;
    for (const auto& r : runs) {
      lo = std::min(lo, r.*m.field);
      hi = std::max(hi, r.*m.field);
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
      double v = 0.5;
      if (hi > lo) {
        v = ((runs[i].*m.field) - lo) / (hi - lo);
        if (m.lower_is_better) v = 1.0 - v;
      }
      scores[i] += v;
    }
  }
  for (double& s : scores) s /= static_cast<double>(kMetrics.size());
  return scores;
}

std::string to_json_line(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["rr"] = r.rr;
  j["bleu1"] = r.bleu1;
  j["bleu3"] = r.bleu3;
  j["bleu4"] = r.bleu4;
  j["rouge_l"] = r.rouge_l;
  j["gen_error_rate"] = r.gen_error_rate;
  j["composite"] = r.composite;
  return j.dump();
}

std::string to_table(const MetricReport& r) {
  std::string out;
  char line[96];
  const std::pair<const char*, double> rows[] = {
      {"RR", r.rr},           {"BLEU-1", r.bleu1},   {"BLEU-3", r.bleu3},
      {"BLEU-4", r.bleu4},    {"ROUGE-L", r.rouge_l}, {"gen errors", r.gen_error_rate},
      {"composite", r.composite},
  };
  std::snprintf(line, sizeof line, "%-12s %10zu\n", "count", r.count);
  out += line;
  for (const auto& [name, value] : rows) {
    std::snprintf(line, sizeof line, "%-12s %10.4f\n", name, value);
    out += line;
  }
  return out;
}

}  // namespace attnreg::metrics
