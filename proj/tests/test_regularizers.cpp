#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "attnreg/error.hpp"
#include "attnreg/model.hpp"
#include "attnreg/random.hpp"
#include "attnreg/regularizers.hpp"

using namespace attnreg;
using namespace attnreg::reg;
using model::AttentionTrace;

namespace {

// Every head of every layer gets the same causal rows drawn from `row`.
template <class RowFn>
AttentionTrace make_trace(std::size_t layers, std::size_t heads, std::size_t n, RowFn row) {
  AttentionTrace t(layers, heads, n);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = row(l, h, i);
        for (std::size_t j = 0; j <= i; ++j) t.at(l, h, i, j) = r[j];
      }
  return t;
}

AttentionTrace random_trace(std::size_t layers, std::size_t heads, std::size_t n,
                            std::uint64_t seed) {
  Rng rng(seed);
  return make_trace(layers, heads, n, [&](std::size_t, std::size_t, std::size_t i) {
    std::vector<double> r(i + 1);
    double s = 0.0;
    for (double& v : r) s += v = 0.05 + rng.uniform();
    for (double& v : r) v /= s;
    return r;
  });
}

double direct_kl(const std::vector<double>& a, const std::vector<double>& t) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j)
    if (a[j] > 0) s += a[j] * std::log(a[j] / t[j]);
  return s;
}

Mask mask(std::initializer_list<int> bits) {
  Mask m;
  for (int b : bits) m.push_back(b != 0);
  return m;
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = 12;
  c.max_seq_len = 10;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Entropy, OneHotIsZero) { EXPECT_EQ(entropy(std::vector<double>{0, 1, 0}), 0.0); }

TEST(Entropy, UniformOverFour) {
  EXPECT_NEAR(entropy(std::vector<double>(4, 0.25)), std::log(4.0), 1e-12);
  EXPECT_NEAR(std::log(4.0), 1.3863, 1e-4);
}

TEST(Entropy, TwoPointHandSum) {
  EXPECT_NEAR(entropy(std::vector<double>{0.6, 0.4}),
              -0.6 * std::log(0.6) - 0.4 * std::log(0.4), 1e-12);
  EXPECT_NEAR(entropy(std::vector<double>{0.6, 0.4}), 0.6730, 1e-4);
}

TEST(Entropy, RejectsNonDistributions) {
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.6}), InvalidArgument);
  EXPECT_THROW(entropy(std::vector<double>{1.2, -0.2}), InvalidArgument);
  EXPECT_THROW(entropy(std::vector<double>{}), InvalidArgument);
  EXPECT_NO_THROW(entropy(std::vector<double>{0.5, 0.5 + 5e-7}));
}

TEST(Entropy, BoundedByLogLength) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + rng.below(9));
    double s = 0.0;
    for (double& v : p) s += v = rng.uniform();
    for (double& v : p) v /= s;
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(p.size())) + 1e-12);
  }
}

TEST(EarPenalty, OneHotRowsGiveZeroOnPlainHeadMean) {
  const auto t = make_trace(2, 3, 5, [](std::size_t, std::size_t, std::size_t i) {
    std::vector<double> r(i + 1, 0.0);
    r[i / 2] = 1.0;
    return r;
  });
  RegConfig cfg;
  cfg.resoftmax = false;
  EXPECT_EQ(ear_penalty(t, cfg), 0.0);
  // Re-softmax spreads a one-hot row, so the default configuration is positive.
  EXPECT_GT(ear_penalty(t), 0.0);
}

TEST(EarPenalty, UniformRowsGiveMeanOfLogs) {
  const std::size_t n = 6;
  const auto t = make_trace(3, 2, n, [](std::size_t, std::size_t, std::size_t i) {
    return std::vector<double>(i + 1, 1.0 / static_cast<double>(i + 1));
  });
  double mean_log = 0.0;
  for (std::size_t k = 1; k <= n; ++k) mean_log += std::log(static_cast<double>(k));
  mean_log /= static_cast<double>(n);
  EXPECT_NEAR(ear_penalty(t), mean_log, 1e-12);
  RegConfig plain;
  plain.resoftmax = false;
  EXPECT_NEAR(ear_penalty(t, plain), mean_log, 1e-12);
}

TEST(EarPenalty, BoundedByLogSeqLen) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = random_trace(2, 2, 7, seed);
    for (bool rs : {true, false}) {
      RegConfig cfg;
      cfg.resoftmax = rs;
      const double p = ear_penalty(t, cfg);
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, std::log(7.0));
    }
  }
}

TEST(EarPenalty, FirstPositionRestrictsAverage) {
  const auto t = make_trace(1, 1, 4, [](std::size_t, std::size_t, std::size_t i) {
    return std::vector<double>(i + 1, 1.0 / static_cast<double>(i + 1));
  });
  EXPECT_NEAR(ear_penalty(t, {}, 2), 0.5 * (std::log(3.0) + std::log(4.0)), 1e-12);
}

TEST(EarPenalty, PerHeadEntropyUsesHeadRows) {
  // Two heads with opposite one-hot rows: head mean is spread, each head is not.
  AttentionTrace t(1, 2, 2);
  t.at(0, 0, 0, 0) = t.at(0, 1, 0, 0) = 1.0;
  t.at(0, 0, 1, 0) = 1.0;
  t.at(0, 1, 1, 1) = 1.0;
  RegConfig per_head;
  per_head.per_head_entropy = true;
  EXPECT_EQ(ear_penalty(t, per_head), 0.0);
  RegConfig plain;
  plain.resoftmax = false;
  EXPECT_NEAR(ear_penalty(t, plain), 0.5 * std::log(2.0), 1e-12);
}

TEST(BuildTarget, OneRelevantAmongFive) {
  const auto t = build_target(mask({0, 0, 1, 0, 0}), mask({0, 0, 0, 0, 0}), 0.6, false);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_NEAR(t[2], 0.6, 1e-12);
  for (std::size_t j : {0, 1, 3, 4}) EXPECT_NEAR(t[j], 0.1, 1e-12);
}

TEST(BuildTarget, NoRelevantFallsBackToUniform) {
  const auto t = build_target(mask({0, 0, 0, 0}), mask({1, 0, 0, 0}), 0.6, false);
  for (double v : t) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(BuildTarget, AllRelevantIsUniformForAnyShare) {
  for (double share : {0.1, 0.4, 0.9}) {
    const auto t = build_target(mask({1, 1, 1}), mask({0, 0, 0}), share, false);
    for (double v : t) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
  }
}

TEST(BuildTarget, SpecialPositionsCountOnlyWhenIncluded) {
  const auto rel = mask({0, 1, 0, 0});
  const auto spec = mask({1, 0, 0, 0});
  const auto excl = build_target(rel, spec, 0.4, false);
  EXPECT_NEAR(excl[1], 0.4, 1e-12);
  EXPECT_NEAR(excl[0], 0.2, 1e-12);
  const auto incl = build_target(rel, spec, 0.4, true);
  EXPECT_NEAR(incl[0], 0.2, 1e-12);
  EXPECT_NEAR(incl[1], 0.2, 1e-12);
  EXPECT_NEAR(incl[2], 0.3, 1e-12);
}

TEST(BuildTarget, IsDistributionAndPermutationInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    Mask rel(n), spec(n, false);
    for (std::size_t j = 0; j < n; ++j) rel[j] = rng.uniform() < 0.3;
    const double share = 0.05 + 0.9 * rng.uniform();
    const auto t = build_target(rel, spec, share, false);
    EXPECT_NEAR(std::accumulate(t.begin(), t.end(), 0.0), 1.0, 1e-9);
    // Constant within the relevant set and within the rest.
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        if (rel[a] == rel[b]) {
          EXPECT_DOUBLE_EQ(t[a], t[b]);
        }
      }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    rng.shuffle(std::span<std::size_t>(perm));
    Mask prel(n);
    for (std::size_t j = 0; j < n; ++j) prel[j] = rel[perm[j]];
    const auto pt = build_target(prel, spec, share, false);
    for (std::size_t j = 0; j < n; ++j) EXPECT_DOUBLE_EQ(pt[j], t[perm[j]]);
  }
}

TEST(Kl, HandValue) {
  const double kl = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.6, 0.4});
  EXPECT_NEAR(kl, 0.5 * std::log(0.5 / 0.6) + 0.5 * std::log(0.5 / 0.4), 1e-12);
  EXPECT_NEAR(kl, 0.02041, 1e-5);
}

TEST(Kl, IdentityAndNonNegativity) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> a(n), t(n);
    double sa = 0.0, st = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sa += a[j] = rng.uniform();
      st += t[j] = rng.uniform() + 1e-3;
    }
    for (std::size_t j = 0; j < n; ++j) {
      a[j] /= sa;
      t[j] /= st;
    }
    EXPECT_GE(kl_divergence(a, t), 0.0);
    EXPECT_NEAR(kl_divergence(a, a), 0.0, 1e-12);
    EXPECT_NEAR(kl_divergence(a, t), direct_kl(a, t), 1e-9);
  }
}

TEST(KlarPenalty, SingleLayerTwoPositions) {
  // Position 1 row [0.5, 0.5] against target [0.6, 0.4].
  AttentionTrace t(1, 1, 2);
  t.at(0, 0, 0, 0) = 1.0;
  t.at(0, 0, 1, 0) = 0.5;
  t.at(0, 0, 1, 1) = 0.5;
  RegConfig cfg{.kind = RegKind::kKlar, .alpha = 0.1, .share = 0.6, .resoftmax = false};
  const auto v = klar_penalty(t, mask({1, 0}), mask({0, 0}), cfg);
  ASSERT_EQ(v.per_position.size(), 2u);
  EXPECT_NEAR(v.per_position[0], 0.0, 1e-12);
  EXPECT_NEAR(v.per_position[1], 0.02041, 1e-5);
  EXPECT_NEAR(v.mean, 0.5 * v.per_position[1], 1e-15);
}

TEST(KlarPenalty, MatchingTargetGivesZero) {
  const Mask rel = mask({0, 1, 0, 0, 1});
  const Mask spec(5, false);
  const auto t = make_trace(2, 2, 5, [&](std::size_t, std::size_t, std::size_t i) {
    return build_target(Mask(rel.begin(), rel.begin() + static_cast<long>(i) + 1),
                        Mask(i + 1, false), 0.4, false);
  });
  RegConfig cfg{.kind = RegKind::kKlar, .alpha = 0.1, .share = 0.4, .resoftmax = false};
  EXPECT_NEAR(klar_penalty(t, rel, spec, cfg).mean, 0.0, 1e-12);
}

TEST(KlarPenalty, PerPositionMatchesIndependentComputation) {
  const auto tr = random_trace(3, 2, 8, 17);
  const Mask rel = mask({0, 1, 0, 0, 1, 0, 1, 0});
  const Mask spec = mask({1, 0, 0, 0, 0, 0, 0, 0});
  RegConfig cfg{.kind = RegKind::kKlar, .alpha = 0.1, .share = 0.4};
  const auto batched = klar_penalty(tr, rel, spec, cfg);
  const auto avg = model::head_average(tr, cfg.resoftmax);
  double sum = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto target = build_target(Mask(rel.begin(), rel.begin() + static_cast<long>(i) + 1),
                                     Mask(spec.begin(), spec.begin() + static_cast<long>(i) + 1),
                                     0.4, false);
    double v = 0.0;
    for (std::size_t l = 0; l < 3; ++l) v += direct_kl(avg[l][i], target);
    v /= 3.0;
    EXPECT_NEAR(batched.per_position[i], v, 1e-12);
    sum += v;
  }
  EXPECT_NEAR(batched.mean, sum / 8.0, 1e-12);
  EXPECT_NEAR(klar_penalty(tr, rel, spec, cfg, 5).mean,
              (batched.per_position[5] + batched.per_position[6] + batched.per_position[7]) / 3.0,
              1e-12);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(total_loss(1.0, {.kind = RegKind::kKlar, .alpha = 0.1}, 0.5), 1.05);
  EXPECT_DOUBLE_EQ(total_loss(1.0, {.kind = RegKind::kEar, .alpha = 1.0}, 0.3), 0.7);
  EXPECT_DOUBLE_EQ(total_loss(1.3, {.kind = RegKind::kEar, .alpha = 0.0}, 0.9), 1.3);
  EXPECT_DOUBLE_EQ(total_loss(1.3, {.kind = RegKind::kNone, .alpha = 2.0}, 0.9), 1.3);
}

TEST(TotalLoss, SlopeInAlphaIsMinusPenaltyForEar) {
  const double p = 0.37;
  RegConfig a{.kind = RegKind::kEar, .alpha = 0.5};
  RegConfig b{.kind = RegKind::kEar, .alpha = 0.75};
  EXPECT_NEAR((total_loss(2.0, b, p) - total_loss(2.0, a, p)) / 0.25, -p, 1e-12);
}

TEST(RegConfig, ValidationAndParsing) {
  EXPECT_THROW((RegConfig{.kind = RegKind::kEar, .alpha = -1.0}).validate(), InvalidArgument);
  EXPECT_THROW((RegConfig{.kind = RegKind::kKlar, .alpha = 0.1, .share = 0.0}).validate(),
               InvalidArgument);
  EXPECT_NO_THROW((RegConfig{.kind = RegKind::kEar, .alpha = 1.0, .share = 0.0}).validate());
  EXPECT_EQ(parse_reg_kind("klar"), RegKind::kKlar);
  EXPECT_EQ(parse_reg_kind("none"), RegKind::kNone);
  EXPECT_STREQ(to_string(RegKind::kEar), "ear");
  EXPECT_THROW(parse_reg_kind("l2"), InvalidArgument);
}

TEST(GraphNodes, AgreeWithPlainFunctions) {
  const auto params = model::init_params(tiny_model());
  const std::vector<model::TokenId> toks = {1, 4, 9, 2, 7, 5, 3};
  const Mask rel = mask({0, 1, 0, 0, 1, 0, 0});
  const Mask spec = mask({1, 0, 0, 1, 0, 0, 1});
  const auto trace = model::forward(params, toks).trace;
  for (bool rs : {true, false}) {
    for (std::size_t first : {0u, 3u}) {
      auto mg = model::build_model_graph(params.config, toks);
      RegConfig ear{.kind = RegKind::kEar, .alpha = 1.0, .resoftmax = rs};
      RegConfig klar{.kind = RegKind::kKlar, .alpha = 0.1, .share = 0.4, .resoftmax = rs};
      const auto e = ear_penalty_node(mg, ear, first);
      const auto k = klar_penalty_node(mg, rel, spec, klar, first);
      const auto kp = klar_per_position_node(mg, rel, spec, klar);
      const auto v = mg.graph.eval(params.tensors);
      EXPECT_NEAR(v[e].item(), ear_penalty(trace, ear, first), 1e-12);
      const auto plain = klar_penalty(trace, rel, spec, klar, first);
      EXPECT_NEAR(v[k].item(), plain.mean, 1e-12);
      const auto full = klar_penalty(trace, rel, spec, klar);
      for (std::size_t i = 0; i < toks.size(); ++i)
        EXPECT_NEAR(v[kp][i], full.per_position[i], 1e-12);
    }
  }
}

TEST(GraphNodes, TotalLossNode) {
  grad::Graph g;
  const auto task = g.input("task", {});
  const auto pen = g.input("pen", {});
  const auto ear = total_loss_node(g, task, {.kind = RegKind::kEar, .alpha = 1.0}, pen);
  const auto klar = total_loss_node(g, task, {.kind = RegKind::kKlar, .alpha = 0.1}, pen);
  const auto v = g.eval({{"task", grad::Tensor::scalar(1.0)}, {"pen", grad::Tensor::scalar(0.3)}});
  EXPECT_NEAR(v[ear].item(), 0.7, 1e-15);
  EXPECT_NEAR(v[klar].item(), 1.03, 1e-15);
}
