#include "attnreg/attnstats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "attnreg/error.hpp"
#include "attnreg/random.hpp"
#include "attnreg/regularizers.hpp"

namespace attnreg::attnstats {
namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double profile_entropy(std::span<const double> v) {
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  // All-zero profile (underflow) is treated as uniform.
  if (total <= 0.0) return std::log(static_cast<double>(v.size()));
  double h = 0.0;
  for (double x : v) {
    const double p = x / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

struct TokenStats {
  double mean, entropy, std;
};

TokenStats token_stats(const AttentionTrace& trace, std::size_t j, Span steps) {
  const auto prof = received_profile(trace, j, steps);
  const double m = mean_of(prof);
  double var = 0.0;
  for (double x : prof) var += (x - m) * (x - m);
  var /= static_cast<double>(prof.size());
  return {m, profile_entropy(prof), std::sqrt(var)};
}

struct Accum {
  double attention = 0.0, entropy = 0.0, std = 0.0;
  std::size_t n = 0;
  void add(const TokenStats& s) {
    attention += s.mean;
    entropy += s.entropy;
    std += s.std;
    ++n;
  }
  void add_mean_of(const Accum& a) {
    attention += a.attention / static_cast<double>(a.n);
    entropy += a.entropy / static_cast<double>(a.n);
    std += a.std / static_cast<double>(a.n);
    ++n;
  }
  std::optional<CategoryStats> finish(std::size_t tokens) const {
    if (n == 0) return std::nullopt;
    const auto d = static_cast<double>(n);
    return CategoryStats{attention / d, entropy / d, std / d, tokens};
  }
};

void check_input(const ReceivedInput& in) {
  if (!in.trace) throw InvalidArgument("received_stats: missing trace");
  const auto& t = *in.trace;
  if (in.relevant.size() != in.hs.size()) {
    throw InvalidArgument("received_stats: mask length does not match the prompt span");
  }
  if (in.hs.empty() || in.steps.empty()) throw InvalidArgument("received_stats: empty span");
  if (in.hs.end > t.seq_len || in.steps.end > t.seq_len) {
    throw InvalidArgument("received_stats: span outside the trace");
  }
  if (in.steps.begin < in.hs.end) {
    throw InvalidArgument("received_stats: decoding steps must follow the prompt");
  }
}

}  // namespace

std::vector<double> received_profile(const AttentionTrace& trace, std::size_t j, Span steps) {
  std::vector<double> prof;
  prof.reserve(steps.size());
  for (std::size_t i = steps.begin; i < steps.end; ++i) {
    double over_layers = 0.0;
    for (std::size_t l = 0; l < trace.layers; ++l) {
      double over_heads = 0.0;
      for (std::size_t h = 0; h < trace.heads; ++h) over_heads += trace.at(l, h, i, j);
      over_layers += over_heads / static_cast<double>(trace.heads);
    }
    prof.push_back(over_layers / static_cast<double>(trace.layers));
  }
  return prof;
}

ReceivedStats received_stats(std::span<const ReceivedInput> inputs, bool micro) {
  Accum rel, norm;
  std::size_t rel_tokens = 0, norm_tokens = 0;
  for (const auto& in : inputs) {
    check_input(in);
    Accum ex_rel, ex_norm;
    for (std::size_t k = 0; k < in.hs.size(); ++k) {
      const auto s = token_stats(*in.trace, in.hs.begin + k, in.steps);
      if (in.relevant[k]) {
        (micro ? rel : ex_rel).add(s);
        ++rel_tokens;
      } else {
        (micro ? norm : ex_norm).add(s);
        ++norm_tokens;
      }
    }
    if (!micro) {
      if (ex_rel.n) rel.add_mean_of(ex_rel);
      if (ex_norm.n) norm.add_mean_of(ex_norm);
    }
  }
  return {rel.finish(rel_tokens), norm.finish(norm_tokens)};
}

ExpressedEntropy expressed_entropy(const AttentionTrace& trace, Span cn) {
  if (cn.empty()) throw InvalidArgument("expressed_entropy: empty span");
  if (cn.end > trace.seq_len) throw InvalidArgument("expressed_entropy: span outside the trace");
  const auto avg = model::head_average(trace, /*resoftmax=*/false);
  ExpressedEntropy out;
  const double inv_layers = 1.0 / static_cast<double>(trace.layers);
  for (std::size_t i = cn.begin; i < cn.end; ++i) {
    std::vector<double> row(i + 1, 0.0);
    for (std::size_t l = 0; l < trace.layers; ++l) {
      for (std::size_t j = 0; j <= i; ++j) row[j] += avg[l][i][j] * inv_layers;
    }
    out.per_token.push_back(reg::entropy(row));
  }
  out.mean = mean_of(out.per_token);
  return out;
}

std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    // Ranks are 1-based; a tie group shares the mean of its positions.
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson: length mismatch");
  if (x.size() < 2) throw InvalidArgument("pearson: need at least two points");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("spearman: length mismatch");
  if (x.size() < 3) throw InvalidArgument("spearman: need at least three points");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

double permutation_pvalue(std::span<const double> x, std::span<const double> y,
                          const Statistic& statistic, std::size_t n_perm, std::uint64_t seed) {
  if (n_perm < 100) throw InvalidArgument("permutation_pvalue: need at least 100 permutations");
  const double observed = std::abs(statistic(x, y));
  std::vector<double> shuffled(y.begin(), y.end());
  std::size_t extreme = 0;
  for (std::size_t k = 0; k < n_perm; ++k) {
    std::copy(y.begin(), y.end(), shuffled.begin());
    Rng rng(derive_seed(seed, k));
    rng.shuffle(std::span<double>(shuffled));
    // Relative slack so permutations equal to the observed value up to
    // rounding count as extreme.
    if (std::abs(statistic(x, shuffled)) >= observed * (1.0 - 1e-12)) ++extreme;
  }
  return static_cast<double>(1 + extreme) / static_cast<double>(n_perm + 1);
}

TTest t_test_two_sided(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("t_test: each sample needs >= 2 values");
  const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean_of(a), mb = mean_of(b);
  double ssa = 0.0, ssb = 0.0;
  for (double v : a) ssa += (v - ma) * (v - ma);
  for (double v : b) ssb += (v - mb) * (v - mb);
  const double dof = na + nb - 2.0;
  const double pooled = (ssa + ssb) / dof;
  if (pooled <= 0.0) throw InvalidArgument("t_test: zero pooled variance");
  const double t = (ma - mb) / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  const boost::math::students_t dist(dof);
  const double p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  return {t, p, dof};
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_heatmap_csv(std::ostream& os, const AttentionTrace& trace,
                       const std::vector<std::string>& tokens) {
  if (tokens.size() != trace.seq_len) {
    throw InvalidArgument("heatmap: token count does not match the trace");
  }
  const auto avg = model::head_average(trace, /*resoftmax=*/false);
  os << "query";
  for (const auto& t : tokens) os << ',' << csv_escape(t);
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < trace.seq_len; ++i) {
    os << csv_escape(tokens[i]);
    for (std::size_t j = 0; j < trace.seq_len; ++j) {
      double v = 0.0;
      if (j <= i) {
        for (std::size_t l = 0; l < trace.layers; ++l) v += avg[l][i][j];
        v /= static_cast<double>(trace.layers);
      }
      std::snprintf(buf, sizeof buf, "%.6g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace attnreg::attnstats
