#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "attnreg/error.hpp"
#include "attnreg/metrics.hpp"
#include "attnreg/random.hpp"

using namespace attnreg;
using namespace attnreg::metrics;

namespace {

Sentence words(const std::string& s) { return tokenize(s); }

// Brute force: rebuild every window from scratch.
double rr_oracle(const std::vector<Sentence>& corpus, std::size_t window) {
  std::vector<std::pair<std::string, std::size_t>> toks;
  for (std::size_t s = 0; s < corpus.size(); ++s)
    for (const auto& w : corpus[s]) toks.emplace_back(w, s);
  const std::size_t w = std::min(window, toks.size());
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t a = 0; a + w <= toks.size(); ++a) {
    double log_sum = 0.0;
    int orders = 0;
    bool zero = false;
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> counts;
      for (std::size_t s = a; s + n <= a + w; ++s) {
        if (toks[s].second != toks[s + n - 1].second) continue;
        std::vector<std::string> g;
        for (std::size_t k = s; k < s + n; ++k) g.push_back(toks[k].first);
        ++counts[g];
      }
      if (counts.empty()) continue;
      ++orders;
      const auto rep = std::count_if(counts.begin(), counts.end(),
                                     [](const auto& kv) { return kv.second > 1; });
      if (rep == 0) {
        zero = true;
      } else {
        log_sum += std::log(static_cast<double>(rep) / static_cast<double>(counts.size()));
      }
    }
    total += (zero || orders == 0) ? 0.0 : std::exp(log_sum / orders);
    ++windows;
  }
  return 100.0 * total / static_cast<double>(windows);
}

std::map<Sentence, int> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<Sentence, int> c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Sentence(s.begin() + i, s.begin() + i + n)];
  return c;
}

// Pooled-count BLEU written out directly; sentence BLEU is the one-pair case.
double bleu_oracle(const std::vector<Sentence>& cands, const std::vector<std::vector<Sentence>>& refs,
                   int n, bool smooth) {
  std::vector<double> match(n, 0), total(n, 0);
  double c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (int o = 1; o <= n; ++o) {
      std::map<Sentence, int> max_ref;
      for (const auto& r : refs[i])
        for (const auto& [g, c] : ngram_counts(r, o)) max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : ngram_counts(cands[i], o)) {
        match[o - 1] += std::min(c, max_ref[g]);
        total[o - 1] += c;
      }
    }
    c_len += static_cast<double>(cands[i].size());
    double best = 1e9;
    for (const auto& r : refs[i]) {
      const double d = std::abs(static_cast<double>(r.size()) - static_cast<double>(cands[i].size()));
      const double bd = std::abs(best - static_cast<double>(cands[i].size()));
      if (d < bd || (d == bd && static_cast<double>(r.size()) < best)) best = static_cast<double>(r.size());
    }
    r_len += best;
  }
  if (c_len == 0) return 0.0;
  double prod = 1.0;
  for (int o = 0; o < n; ++o) {
    const double m = match[o] + (smooth && o > 0 ? 1 : 0);
    const double t = total[o] + (smooth && o > 0 ? 1 : 0);
    if (m == 0 || t == 0) return 0.0;
    prod *= m / t;
  }
  const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
  return bp * std::pow(prod, 1.0 / n);
}

Sentence random_sentence(Rng& rng, std::size_t vocab, std::size_t max_len) {
  Sentence s(1 + rng.below(max_len));
  for (auto& w : s) w = "w" + std::to_string(rng.below(vocab));
  return s;
}

MetricReport report(double rr, double b1, double b3, double b4, double rl, double err) {
  MetricReport r;
  r.rr = rr;
  r.bleu1 = b1;
  r.bleu3 = b3;
  r.bleu4 = b4;
  r.rouge_l = rl;
  r.gen_error_rate = err;
  return r;
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(words("Hello, World! <counternarrative> It's afro-american."),
            (Sentence{"hello", ",", "world", "!", "<counternarrative>", "it's", "afro-american", "."}));
}

TEST(RepetitionRate, AllUniqueIsZero) {
  EXPECT_EQ(repetition_rate({words("a b c d e f g")}), 0.0);
}

TEST(RepetitionRate, SingleTokenRunIsHundred) {
  EXPECT_DOUBLE_EQ(repetition_rate({words("a a a a a a")}), 100.0);
}

TEST(RepetitionRate, NgramsStopAtSentenceBoundaries) {
  // Flattened, "a b a" and "b a b" would be unique trigrams; split, no trigram exists.
  EXPECT_DOUBLE_EQ(repetition_rate({words("a b"), words("a b")}), 100.0);
  EXPECT_DOUBLE_EQ(repetition_rate({words("a b a b")}), 0.0);
}

TEST(RepetitionRate, SlidingWindow) {
  const std::vector<Sentence> c = {words("a b c a b c")};
  EXPECT_EQ(repetition_rate(c, 3), 0.0);
  // Window 4: [a b c a] has one repeated unigram of three and nothing else repeated.
  EXPECT_EQ(repetition_rate(c, 4), 0.0);
  EXPECT_NEAR(repetition_rate(c, 6), rr_oracle(c, 6), 1e-12);
}

TEST(RepetitionRate, MatchesBruteForceOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<Sentence> corpus;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) corpus.push_back(random_sentence(rng, 3, 9));
    const std::size_t window = 1 + rng.below(30);
    EXPECT_NEAR(repetition_rate(corpus, window), rr_oracle(corpus, window), 1e-9) << trial;
  }
}

TEST(RepetitionRate, InvariantUnderRelabeling) {
  Rng rng(3);
  std::vector<Sentence> corpus, renamed;
  for (int i = 0; i < 6; ++i) corpus.push_back(random_sentence(rng, 4, 10));
  for (const auto& s : corpus) {
    Sentence r;
    for (const auto& w : s) r.push_back("x" + w + "y");
    renamed.push_back(r);
  }
  EXPECT_DOUBLE_EQ(repetition_rate(corpus, 15), repetition_rate(renamed, 15));
}

TEST(RepetitionRate, BoundsAndErrors) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const double r = repetition_rate({random_sentence(rng, 3, 20)}, 10);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 100.0);
  }
  EXPECT_THROW(repetition_rate({}), InvalidArgument);
  EXPECT_THROW(repetition_rate({Sentence{}}), InvalidArgument);
  EXPECT_THROW(repetition_rate({words("a")}, 0), InvalidArgument);
}

TEST(Bleu, IdenticalIsOne) {
  const auto s = words("we should help people in need");
  for (int n : {1, 2, 3, 4}) EXPECT_DOUBLE_EQ(bleu(s, {s}, n), 1.0);
}

TEST(Bleu, UnigramHandValue) {
  EXPECT_NEAR(bleu(words("the cat sat"), {words("the cat ran")}, 1), 2.0 / 3.0, 1e-12);
}

TEST(Bleu, ZeroHigherOrderOverlapWithoutSmoothing) {
  const auto c = words("cat the sat");
  const auto r = words("the cat sat");
  EXPECT_EQ(bleu(c, {r}, 3), 0.0);
  EXPECT_EQ(bleu(c, {r}, 4), 0.0);
  EXPECT_GT(bleu(c, {r}, 3, true), 0.0);
}

TEST(Bleu, BrevityPenaltyAndClipping) {
  // Candidate "the the" against "the cat sat on": clipped 1/2, BP exp(1 - 4/2).
  EXPECT_NEAR(bleu(words("the the"), {words("the cat sat on")}, 1), 0.5 * std::exp(-1.0), 1e-12);
  // Closest reference length: 3 beats 6 for a 3-token candidate.
  EXPECT_NEAR(bleu(words("a b c"), {words("a b c d e f"), words("x y z")}, 1), 1.0, 1e-12);
}

TEST(Bleu, EmptyCandidateAndBadInput) {
  EXPECT_EQ(bleu({}, {words("a b")}, 1), 0.0);
  EXPECT_THROW(bleu(words("a"), {}, 1), InvalidArgument);
  EXPECT_THROW(bleu(words("a"), {words("a")}, 5), InvalidArgument);
  EXPECT_THROW(bleu(words("a"), {words("a")}, 0), InvalidArgument);
}

TEST(Bleu, OrdersAreMonotone) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_sentence(rng, 4, 12);
    const std::vector<Sentence> r = {random_sentence(rng, 4, 12), random_sentence(rng, 4, 12)};
    const double b1 = bleu(c, r, 1), b3 = bleu(c, r, 3), b4 = bleu(c, r, 4);
    EXPECT_GE(b1 + 1e-12, b3);
    EXPECT_GE(b3 + 1e-12, b4);
    EXPECT_LE(b1, 1.0);
    EXPECT_GE(b4, 0.0);
  }
}

TEST(Bleu, SentenceAndCorpusMatchOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Sentence> cands;
    std::vector<std::vector<Sentence>> refs;
    for (int i = 0; i < 5; ++i) {
      cands.push_back(random_sentence(rng, 5, 10));
      refs.push_back({random_sentence(rng, 5, 10), random_sentence(rng, 5, 10)});
    }
    for (int n : {1, 3, 4})
      for (bool smooth : {false, true}) {
        EXPECT_NEAR(corpus_bleu(cands, refs, n, {smooth, false}),
                    bleu_oracle(cands, refs, n, smooth), 1e-12);
        double mean = 0.0;
        for (int i = 0; i < 5; ++i) mean += bleu_oracle({cands[i]}, {refs[i]}, n, smooth) / 5.0;
        EXPECT_NEAR(corpus_bleu(cands, refs, n, {smooth, true}), mean, 1e-12);
        EXPECT_NEAR(bleu(cands[0], refs[0], n, smooth), bleu_oracle({cands[0]}, {refs[0]}, n, smooth),
                    1e-12);
      }
  }
}

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l(words("a b c"), words("a b c")), 1.0);
  EXPECT_EQ(rouge_l(words("a b"), words("c d")), 0.0);
  EXPECT_EQ(lcs_length(words("a b c d"), words("a c d")), 3u);
  EXPECT_NEAR(rouge_l(words("a b c d"), words("a c d")), 2 * 0.75 / 1.75, 1e-12);
  EXPECT_NEAR(rouge_l(words("a b c d"), words("a c d")), 0.8571, 1e-4);
  EXPECT_EQ(rouge_l({}, words("a")), 0.0);
  EXPECT_THROW(rouge_l(words("a"), {}), InvalidArgument);
}

TEST(RougeL, SymmetricAndMatchesBruteForceLcs) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_sentence(rng, 3, 7);
    const auto b = random_sentence(rng, 3, 7);
    EXPECT_DOUBLE_EQ(rouge_l(a, b), rouge_l(b, a));
    // Brute-force LCS over subsets of a.
    std::size_t best = 0;
    for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
      Sentence sub;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (mask & (1u << i)) sub.push_back(a[i]);
      std::size_t j = 0;
      for (const auto& w : b)
        if (j < sub.size() && w == sub[j]) ++j;
      if (j == sub.size()) best = std::max(best, sub.size());
    }
    EXPECT_EQ(lcs_length(a, b), best);
  }
}

TEST(RougeL, CorpusTakesBestReference) {
  const std::vector<Sentence> c = {words("a b c"), words("x y")};
  const std::vector<std::vector<Sentence>> r = {{words("q"), words("a b c")}, {words("x z")}};
  EXPECT_NEAR(corpus_rouge_l(c, r), (1.0 + 0.5) / 2.0, 1e-12);
}

TEST(GenerationErrors, Counting) {
  const auto ok = words("<hatespeech> they steal jobs <counternarrative> no they do not <|endoftext|>");
  const auto empty = words("<hatespeech> they steal jobs <counternarrative> <|endoftext|>");
  const auto two_cn = words("<hatespeech> x <counternarrative> y <counternarrative> z");
  const auto two_hs = words("<hatespeech> x <counternarrative> y <hatespeech>");
  EXPECT_FALSE(is_generation_error(ok));
  EXPECT_TRUE(is_generation_error(empty));
  EXPECT_TRUE(is_generation_error(two_cn));
  EXPECT_TRUE(is_generation_error(two_hs));
  EXPECT_EQ(generation_error_rate({ok, ok, ok, ok}), 0.0);
  EXPECT_DOUBLE_EQ(generation_error_rate({ok, empty, ok, ok}), 0.25);
  EXPECT_EQ(generation_error_rate({}), 0.0);
}

TEST(Composite, ThreeRunHandComputation) {
  const std::vector<MetricReport> runs = {
      report(10, 0.5, 0.2, 0.10, 0.3, 0.00),
      report(20, 0.3, 0.2, 0.15, 0.4, 0.50),
      report(30, 0.4, 0.2, 0.05, 0.2, 0.25),
  };
  // Normalized (rr, b1, b3, b4, rl, err):
  //   A: 1, 1, .5, .5, .5, 1   B: .5, 0, .5, 1, 1, 0   C: 0, .5, .5, 0, 0, .5
  const auto s = composite_score(runs);
  EXPECT_NEAR(s[0], 4.5 / 6.0, 1e-12);
  EXPECT_NEAR(s[1], 3.0 / 6.0, 1e-12);
  EXPECT_NEAR(s[2], 1.5 / 6.0, 1e-12);
}

TEST(Composite, DominanceAndTies) {
  const auto a = report(5, 0.5, 0.3, 0.2, 0.4, 0.0);
  const auto b = report(9, 0.4, 0.2, 0.1, 0.3, 0.1);
  const auto s = composite_score({a, b});
  EXPECT_GT(s[0], s[1]);
  const auto same = composite_score({a, a, a});
  for (double v : same) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_THROW(composite_score({a}), InvalidArgument);
}

TEST(Evaluate, EndToEndReport) {
  const std::vector<Sentence> raw = {
      words("<hatespeech> h <counternarrative> the cat sat <|endoftext|>"),
      words("<hatespeech> h <counternarrative> <|endoftext|>"),
  };
  const std::vector<Sentence> cands = {words("the cat sat"), {}};
  const std::vector<std::vector<Sentence>> refs = {{words("the cat sat")}, {words("a dog ran")}};
  const auto r = evaluate(raw, cands, refs);
  EXPECT_EQ(r.count, 2u);
  EXPECT_DOUBLE_EQ(r.gen_error_rate, 0.5);
  EXPECT_DOUBLE_EQ(r.rouge_l, 0.5);
  EXPECT_EQ(r.rr, 0.0);
  // Pooled counts: 3 of 3 unigrams match; BP exp(1 - 6/3).
  EXPECT_NEAR(r.bleu1, std::exp(-1.0), 1e-12);
}

TEST(Evaluate, JsonLineAndTable) {
  auto r = report(3.5, 0.4, 0.2, 0.1, 0.3, 0.05);
  r.count = 7;
  const auto line = to_json_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.at("count"), 7);
  EXPECT_DOUBLE_EQ(j.at("rr").get<double>(), 3.5);
  EXPECT_DOUBLE_EQ(j.at("gen_error_rate").get<double>(), 0.05);
  const auto table = to_table(r);
  EXPECT_NE(table.find("BLEU-4"), std::string::npos);
  EXPECT_NE(table.find("3.5000"), std::string::npos);
}
