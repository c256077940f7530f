#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "attnreg/decoding.hpp"
#include "attnreg/error.hpp"
#include "attnreg/model.hpp"
#include "attnreg/random.hpp"

using namespace attnreg;
using namespace attnreg::decode;

namespace {

// Next-token logits looked up by (context length, last token); hidden state of
// a position is a fixed vector per token id.
class TableModel : public LanguageModel {
 public:
  TableModel(std::size_t vocab, std::size_t ctx, std::uint64_t seed) : vocab_(vocab), ctx_(ctx) {
    Rng rng(seed);
    for (std::size_t len = 1; len <= ctx; ++len)
      for (std::size_t last = 0; last < vocab; ++last) {
        std::vector<double> row(vocab);
        for (double& v : row) v = 4.0 * rng.uniform() - 2.0;
        table_[{len, last}] = row;
      }
    for (std::size_t v = 0; v < vocab; ++v) {
      std::vector<double> h(4);
      for (double& x : h) x = rng.uniform() - 0.5;
      hidden_.push_back(h);
    }
  }
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t max_context() const override { return ctx_; }
  StepOutput step(std::span<const TokenId> context) const override {
    StepOutput out;
    out.logits = table_.at({context.size(), context.back()});
    for (auto t : context) out.hidden.push_back(hidden_[t]);
    return out;
  }
  void set(std::size_t len, TokenId last, std::vector<double> logits) {
    table_[{len, last}] = std::move(logits);
  }
  void set_hidden(TokenId t, std::vector<double> h) { hidden_[t] = std::move(h); }

 private:
  std::size_t vocab_, ctx_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> table_;
  std::vector<std::vector<double>> hidden_;
};

DecodeConfig config(Strategy s) {
  DecodeConfig c;
  c.strategy = s;
  return c;
}

double sequence_logprob(const LanguageModel& m, std::vector<TokenId> seq, std::size_t prompt_len) {
  double s = 0.0;
  for (std::size_t i = prompt_len; i < seq.size(); ++i) {
    const auto logits = m.step(std::span(seq).first(i)).logits;
    double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    s += logits[seq[i]] - mx - std::log(z);
  }
  return s;
}

}  // namespace

TEST(Argmax, LowestIdWinsTies) {
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0, 2.0}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{5.0}), 0u);
}

TEST(Softmax, MatchesDirectFormula) {
  const std::vector<double> l = {1.0, 2.0, -0.5};
  const auto p = softmax(l);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(-0.5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], std::exp(l[i]) / z, 1e-15);
  const auto lp = log_softmax(l);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(lp[i], std::log(p[i]), 1e-14);
}

TEST(Greedy, FollowsOneHotTable) {
  TableModel m(4, 10, 1);
  // Each token strongly predicts the next one cyclically.
  for (std::size_t len = 1; len <= 10; ++len)
    for (TokenId t = 0; t < 4; ++t) {
      std::vector<double> row(4, -50.0);
      row[(t + 1) % 4] = 50.0;
      m.set(len, t, row);
    }
  auto c = config(Strategy::kGreedy);
  c.max_new_tokens = 5;
  EXPECT_EQ(greedy(m, std::vector<TokenId>{2}, c), (std::vector<TokenId>{2, 3, 0, 1, 2, 3}));
  c.stop_token = 0;
  EXPECT_EQ(greedy(m, std::vector<TokenId>{2}, c), (std::vector<TokenId>{2, 3, 0}));
}

TEST(Greedy, ZeroNewTokensReturnsPrompt) {
  TableModel m(4, 10, 1);
  auto c = config(Strategy::kGreedy);
  c.max_new_tokens = 0;
  const std::vector<TokenId> prompt = {1, 2};
  for (auto s : {Strategy::kGreedy, Strategy::kBeam, Strategy::kTopK, Strategy::kContrastive}) {
    c.strategy = s;
    EXPECT_EQ(generate(m, prompt, c), prompt);
  }
}

TEST(Greedy, TieGoesToLowestId) {
  TableModel m(3, 4, 1);
  m.set(1, 0, {0.0, 1.0, 1.0});
  auto c = config(Strategy::kGreedy);
  c.max_new_tokens = 1;
  EXPECT_EQ(greedy(m, std::vector<TokenId>{0}, c).back(), 1u);
}

TEST(Greedy, StopsAtContextWindowAndRejectsOverlongPrompt) {
  TableModel m(3, 4, 2);
  auto c = config(Strategy::kGreedy);
  c.max_new_tokens = 10;
  EXPECT_EQ(greedy(m, std::vector<TokenId>{0, 1}, c).size(), 4u);
  EXPECT_THROW(greedy(m, std::vector<TokenId>{0, 1, 2, 0, 1}, c), InvalidArgument);
  EXPECT_THROW(greedy(m, std::vector<TokenId>{}, c), InvalidArgument);
}

TEST(BeamSearch, SingleBeamWithoutPenaltyIsGreedy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TableModel m(6, 12, seed);
    auto c = config(Strategy::kBeam);
    c.beams = 1;
    c.repetition_penalty = 1.0;
    c.max_new_tokens = 8;
    const std::vector<TokenId> prompt = {static_cast<TokenId>(seed % 6)};
    EXPECT_EQ(beam_search(m, prompt, c), greedy(m, prompt, c)) << seed;
  }
}

TEST(BeamSearch, FullWidthMatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    TableModel m(3, 8, 100 + seed);
    auto c = config(Strategy::kBeam);
    c.beams = 9;
    c.repetition_penalty = 1.0;
    c.max_new_tokens = 2;
    const std::vector<TokenId> prompt = {1};
    std::vector<TokenId> best;
    double best_lp = -1e300;
    for (TokenId a = 0; a < 3; ++a)
      for (TokenId b = 0; b < 3; ++b) {
        const std::vector<TokenId> seq = {1, a, b};
        const double lp = sequence_logprob(m, seq, 1);
        if (lp > best_lp) {
          best_lp = lp;
          best = seq;
        }
      }
    EXPECT_EQ(beam_search(m, prompt, c), best) << seed;
  }
}

TEST(BeamSearch, RepetitionPenaltyChangesChoice) {
  TableModel m(3, 6, 3);
  // After [0]: token 0 has logit 2.0, token 1 has 1.5. Halving 2.0 gives 1.0 < 1.5.
  m.set(1, 0, {2.0, 1.5, 0.0});
  auto c = config(Strategy::kBeam);
  c.beams = 1;
  c.max_new_tokens = 1;
  c.repetition_penalty = 1.0;
  EXPECT_EQ(beam_search(m, std::vector<TokenId>{0}, c).back(), 0u);
  c.repetition_penalty = 2.0;
  EXPECT_EQ(beam_search(m, std::vector<TokenId>{0}, c).back(), 1u);
}

TEST(BeamSearch, FinishedHypothesesAreLengthNormalized) {
  TableModel m(3, 8, 4);
  // Stopping at once scores ln(0.4); continuing averages ln(0.6) and ln(0.55)
  // per step, so the normalized continuation wins.
  auto lg = [](std::vector<double> p) {
    for (double& v : p) v = std::log(v);
    return p;
  };
  for (std::size_t len = 1; len <= 8; ++len)
    for (TokenId t = 0; t < 3; ++t) m.set(len, t, lg({0.05, 0.55, 0.4}));
  m.set(1, 0, lg({0.0001, 0.5999, 0.4}));
  auto c = config(Strategy::kBeam);
  c.beams = 2;
  c.repetition_penalty = 1.0;
  c.max_new_tokens = 3;
  c.stop_token = 2;
  const auto out = beam_search(m, std::vector<TokenId>{0}, c);
  EXPECT_EQ(out, (std::vector<TokenId>{0, 1, 1, 1}));
  // Raw cumulative scores would have preferred stopping.
  EXPECT_GT(std::log(0.4), std::log(0.5999) + 2 * std::log(0.55));
}

TEST(RepetitionPenalty, DividesPositiveMultipliesNegative) {
  std::vector<double> logits = {2.0, -1.0, 3.0, 0.5};
  apply_repetition_penalty(logits, std::vector<TokenId>{0, 1, 1}, 2.0);
  EXPECT_EQ(logits, (std::vector<double>{1.0, -2.0, 3.0, 0.5}));
  std::vector<double> same = {2.0, -1.0};
  apply_repetition_penalty(same, std::vector<TokenId>{0, 1}, 1.0);
  EXPECT_EQ(same, (std::vector<double>{2.0, -1.0}));
}

TEST(FilterDistribution, TopPHandExample) {
  const auto f = filter_distribution(std::vector<double>{0.5, 0.3, 0.2}, 0, 0.8);
  EXPECT_NEAR(f[0], 0.625, 1e-12);
  EXPECT_NEAR(f[1], 0.375, 1e-12);
  EXPECT_EQ(f[2], 0.0);
}

TEST(FilterDistribution, TopKThenTopP) {
  const std::vector<double> p = {0.1, 0.4, 0.2, 0.3};
  const auto k2 = filter_distribution(p, 2, 1.0);
  EXPECT_NEAR(k2[1], 0.4 / 0.7, 1e-12);
  EXPECT_NEAR(k2[3], 0.3 / 0.7, 1e-12);
  EXPECT_EQ(k2[0] + k2[2], 0.0);
  // Within the top 3, the first 0.7 of renormalized mass is {1, 3}.
  const auto kp = filter_distribution(p, 3, 0.7);
  EXPECT_NEAR(kp[1], 0.4 / 0.7, 1e-12);
  EXPECT_EQ(kp[2], 0.0);
}

TEST(FilterDistribution, NoFilterIsIdentity) {
  const std::vector<double> p = {0.1, 0.4, 0.2, 0.3};
  const auto f = filter_distribution(p, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f[i], p[i], 1e-15);
}

TEST(FilterDistribution, TopPSupportIsMonotone) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(8);
    double s = 0.0;
    for (double& v : p) s += v = rng.uniform();
    for (double& v : p) v /= s;
    double p1 = rng.uniform(), p2 = rng.uniform();
    if (p1 > p2) std::swap(p1, p2);
    const auto a = filter_distribution(p, 0, std::max(p1, 1e-3));
    const auto b = filter_distribution(p, 0, std::max(p2, 1e-3));
    for (std::size_t i = 0; i < 8; ++i) {
      if (a[i] > 0.0) {
        EXPECT_GT(b[i], 0.0);
      }
    }
  }
}

TEST(Sampling, TopOneIsGreedyForAnySeed) {
  TableModel m(7, 12, 9);
  auto g = config(Strategy::kGreedy);
  g.max_new_tokens = 9;
  const auto expect = greedy(m, std::vector<TokenId>{3}, g);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto c = config(Strategy::kTopK);
    c.k = 1;
    c.seed = seed;
    c.max_new_tokens = 9;
    EXPECT_EQ(sample_filtered(m, std::vector<TokenId>{3}, c), expect);
  }
}

TEST(Sampling, ReproducibleForFixedSeed) {
  TableModel m(7, 12, 9);
  for (auto s : {Strategy::kTopK, Strategy::kTopP, Strategy::kTopKP}) {
    auto c = config(s);
    c.k = 4;
    c.p = 0.9;
    c.seed = 42;
    c.max_new_tokens = 9;
    EXPECT_EQ(sample_filtered(m, std::vector<TokenId>{1}, c),
              sample_filtered(m, std::vector<TokenId>{1}, c));
  }
}

TEST(Sampling, UnfilteredFrequenciesMatchModel) {
  TableModel m(4, 4, 1);
  m.set(1, 0, {std::log(0.1), std::log(0.2), std::log(0.3), std::log(0.4)});
  auto c = config(Strategy::kTopKP);
  c.k = 4;
  c.p = 1.0;
  c.max_new_tokens = 1;
  std::vector<double> freq(4, 0.0);
  const int n = 20000;
  for (int s = 0; s < n; ++s) {
    c.seed = static_cast<std::uint64_t>(s);
    freq[sample_filtered(m, std::vector<TokenId>{0}, c).back()] += 1.0 / n;
  }
  for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(freq[v], 0.1 * static_cast<double>(v + 1), 0.015);
}

TEST(Sampling, OnlySupportTokensAreEmitted) {
  TableModel m(6, 30, 12);
  auto c = config(Strategy::kTopK);
  c.k = 2;
  c.max_new_tokens = 25;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    c.seed = seed;
    const auto out = sample_filtered(m, std::vector<TokenId>{0}, c);
    for (std::size_t i = 1; i < out.size(); ++i) {
      const auto probs = softmax(m.step(std::span(out).first(i)).logits);
      const auto f = filter_distribution(probs, 2, 1.0);
      EXPECT_GT(f[out[i]], 0.0);
    }
  }
}

TEST(Contrastive, ZeroPenaltyIsGreedy) {
  for (std::size_t k : kContrastiveKGrid) {
    TableModel m(9, 12, k);
    auto c = config(Strategy::kContrastive);
    c.penalty_alpha = 0.0;
    c.k = k;
    c.max_new_tokens = 8;
    EXPECT_EQ(contrastive_search(m, std::vector<TokenId>{2}, c),
              greedy(m, std::vector<TokenId>{2}, c));
  }
}

TEST(Contrastive, HandComputedTwoCandidateScore) {
  TableModel m(3, 4, 1);
  m.set(1, 0, {std::log(0.1), std::log(0.55), std::log(0.35)});
  m.set_hidden(0, {1.0, 0.0});
  m.set_hidden(1, {1.0, 0.1});
  m.set_hidden(2, {0.0, 1.0});
  // Candidate 1: 0.4 * 0.55 - 0.6 * cos((1, 0.1), (1, 0)); candidate 2: 0.4 * 0.35 - 0.
  const double s1 = 0.4 * 0.55 - 0.6 * (1.0 / std::sqrt(1.01));
  const double s2 = 0.4 * 0.35;
  EXPECT_NEAR(contrastive_score(0.55, std::vector<double>{1.0, 0.1}, {{1.0, 0.0}}, 0.6), s1, 1e-12);
  EXPECT_NEAR(contrastive_score(0.35, std::vector<double>{0.0, 1.0}, {{1.0, 0.0}}, 0.6), s2, 1e-12);
  auto c = config(Strategy::kContrastive);
  c.k = 2;
  c.penalty_alpha = 0.6;
  c.max_new_tokens = 1;
  EXPECT_EQ(contrastive_search(m, std::vector<TokenId>{0}, c).back(), 2u);
  c.penalty_alpha = 0.0;
  EXPECT_EQ(contrastive_search(m, std::vector<TokenId>{0}, c).back(), 1u);
}

TEST(Contrastive, CosineBounds) {
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{2, 4}), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{-3, 0}), -1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), 0.0);
  EXPECT_THROW(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 2}), InvalidArgument);
}

TEST(Contrastive, KGridAcceptedAndDeterministic) {
  TableModel m(12, 16, 77);
  for (std::size_t k : kContrastiveKGrid) {
    auto c = config(Strategy::kContrastive);
    c.k = k;
    c.max_new_tokens = 10;
    c.seed = 1;
    const auto a = contrastive_search(m, std::vector<TokenId>{5}, c);
    c.seed = 2;
    EXPECT_EQ(contrastive_search(m, std::vector<TokenId>{5}, c), a);
  }
}

TEST(Decoding, AllStrategiesStayInVocabAndWithinLimit) {
  TableModel m(5, 40, 8);
  for (auto s : {Strategy::kGreedy, Strategy::kBeam, Strategy::kTopK, Strategy::kTopP,
                 Strategy::kTopKP, Strategy::kContrastive}) {
    auto c = config(s);
    c.k = 3;
    c.max_new_tokens = 12;
    c.stop_token = 4;
    const auto out = generate(m, std::vector<TokenId>{0, 1}, c);
    EXPECT_LE(out.size(), 14u) << to_string(s);
    for (auto t : out) EXPECT_LT(t, 5u);
    const auto stop = std::find(out.begin() + 2, out.end(), 4u);
    if (stop != out.end()) {
      EXPECT_EQ(stop + 1, out.end()) << to_string(s);
    }
  }
}

TEST(Decoding, SeedIndependentStrategies) {
  TableModel m(6, 20, 5);
  for (auto s : {Strategy::kGreedy, Strategy::kBeam, Strategy::kContrastive}) {
    auto c = config(s);
    c.k = 3;
    c.max_new_tokens = 10;
    c.seed = 1;
    const auto a = generate(m, std::vector<TokenId>{0}, c);
    c.seed = 99;
    EXPECT_EQ(generate(m, std::vector<TokenId>{0}, c), a) << to_string(s);
  }
}

TEST(DecodeConfig, ValidationAndParsing) {
  DecodeConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.beams, 5u);
  EXPECT_DOUBLE_EQ(c.repetition_penalty, 2.0);
  EXPECT_EQ(c.k, 40u);
  EXPECT_DOUBLE_EQ(c.p, 0.92);
  EXPECT_DOUBLE_EQ(c.penalty_alpha, 0.6);
  c.beams = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = DecodeConfig{};
  c.p = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = DecodeConfig{};
  c.penalty_alpha = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_EQ(parse_strategy("con"), Strategy::kContrastive);
  EXPECT_EQ(parse_strategy("topkp"), Strategy::kTopKP);
  EXPECT_THROW(parse_strategy("nucleus2"), InvalidArgument);
}

TEST(TransformerModel, HiddenStatesAndLogitsMatchForward) {
  model::ModelConfig mc;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_model = 8;
  mc.d_ff = 16;
  mc.vocab_size = 10;
  mc.max_seq_len = 8;
  const auto params = model::init_params(mc);
  TransformerModel tm(params);
  const std::vector<TokenId> ctx = {1, 5, 2};
  const auto out = tm.step(ctx);
  const auto fwd = model::forward(params, ctx);
  ASSERT_EQ(out.logits.size(), 10u);
  for (std::size_t v = 0; v < 10; ++v) EXPECT_EQ(out.logits[v], fwd.logits.at(2, v));
  ASSERT_EQ(out.hidden.size(), 3u);
  EXPECT_EQ(out.hidden[0].size(), 8u);
}
