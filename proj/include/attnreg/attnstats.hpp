#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "attnreg/model.hpp"

namespace attnreg::attnstats {

using model::AttentionTrace;

// Half-open position range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool empty() const { return size() == 0; }
};

struct CategoryStats {
  double mean_attention = 0.0;
  double mean_received_entropy = 0.0;  // nats
  double mean_std = 0.0;
  std::size_t tokens = 0;
};

// One analysed sequence: `relevant` has one flag per hate-speech token,
// `steps` are the generated positions whose rows are read.
struct ReceivedInput {
  const AttentionTrace* trace = nullptr;
  std::vector<bool> relevant;
  Span hs;
  Span steps;
};

struct ReceivedStats {
  std::optional<CategoryStats> relevant;
  std::optional<CategoryStats> normal;
};

// Attention each prompt token receives across decoding steps, averaged over
// heads then layers. Per token: mean, population std over steps, and the
// entropy of the L1-normalized step profile. Macro averaging computes each
// example's category means first; micro pools all tokens. A category with no
// token is left empty.
ReceivedStats received_stats(std::span<const ReceivedInput> inputs, bool micro = false);

// Received attention of token j at each step, averaged over heads then layers.
std::vector<double> received_profile(const AttentionTrace& trace, std::size_t j, Span steps);

struct ExpressedEntropy {
  std::vector<double> per_token;
  double mean = 0.0;
};

// Entropy of each span token's head-and-layer-averaged row over its left context.
ExpressedEntropy expressed_entropy(const AttentionTrace& trace, Span cn);

std::vector<double> fractional_ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

using Statistic = std::function<double(std::span<const double>, std::span<const double>)>;

inline constexpr std::size_t kDefaultPermutations = 10000;

// Two-sided: (1 + #{|stat(x, perm y)| >= |stat(x, y)|}) / (n_perm + 1).
// Permutation k shuffles y with a generator seeded by derive_seed(seed, k).
double permutation_pvalue(std::span<const double> x, std::span<const double> y,
                          const Statistic& statistic, std::size_t n_perm = kDefaultPermutations,
                          std::uint64_t seed = 0);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  double dof = 0.0;
};

// Pooled-variance independent-samples t test.
TTest t_test_two_sided(std::span<const double> a, std::span<const double> b);

// Head-and-layer-averaged attention matrix as CSV: a header of column tokens,
// then one row per query token. Entries above the diagonal are 0.
void write_heatmap_csv(std::ostream& os, const AttentionTrace& trace,
                       const std::vector<std::string>& tokens);

std::string csv_escape(const std::string& field);

}  // namespace attnreg::attnstats
