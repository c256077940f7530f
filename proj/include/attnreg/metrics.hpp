#pragma once

#include <string>
#include <vector>

namespace attnreg::metrics {

using Sentence = std::vector<std::string>;

// Lowercased word tokens with punctuation split off.
Sentence tokenize(const std::string& text);

inline constexpr std::size_t kDefaultRrWindow = 1000;

// Repetition rate in percent. For every sliding window of `window` tokens
// (clamped to the corpus length) and n = 1..4, the share of distinct n-gram
// types seen more than once; geometric mean over n, arithmetic mean over
// windows. N-grams never cross sentence boundaries; orders with no n-gram in
// a window are left out of that window's geometric mean.
double repetition_rate(const std::vector<Sentence>& corpus,
                       std::size_t window = kDefaultRrWindow);

struct BleuOptions {
  // Add-one smoothing on orders >= 2.
  bool smoothing = false;
  // Average of sentence scores instead of pooled corpus counts.
  bool sentence_level = false;
};

// Sentence BLEU-n: brevity penalty times the geometric mean of clipped
// 1..n-gram precisions. 0 for an empty candidate.
double bleu(const Sentence& candidate, const std::vector<Sentence>& references, int n,
            bool smoothing = false);

double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references, int n,
                   const BleuOptions& opts = {});

std::size_t lcs_length(const Sentence& a, const Sentence& b);

// LCS F-measure, 2PR / (P + R).
double rouge_l(const Sentence& candidate, const Sentence& reference);

// Mean over pairs; with several references the best one counts.
double corpus_rouge_l(const std::vector<Sentence>& candidates,
                      const std::vector<std::vector<Sentence>>& references);

// `raw` is the full emitted sequence, prompt tags included. Errors are an
// empty counter narrative or more than one <hatespeech> / <counternarrative>.
bool is_generation_error(const Sentence& raw);
double generation_error_rate(const std::vector<Sentence>& outputs);

struct MetricReport {
  double rr = 0.0;
  double bleu1 = 0.0;
  double bleu3 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double gen_error_rate = 0.0;
  double composite = 0.0;
  std::size_t count = 0;
};

struct EvalOptions {
  std::size_t rr_window = kDefaultRrWindow;
  BleuOptions bleu;
};

// `outputs` are raw token sequences, `candidates` the extracted counter
// narratives aligned with `references`.
MetricReport evaluate(const std::vector<Sentence>& outputs, const std::vector<Sentence>& candidates,
                      const std::vector<std::vector<Sentence>>& references,
                      const EvalOptions& opts = {});

// Min-max normalizes every metric across runs (RR and error rate inverted so
// higher is better) and returns each run's mean normalized value. A metric on
// which all runs tie contributes 0.5. Needs at least two runs.
std::vector<double> composite_score(const std::vector<MetricReport>& runs);

std::string to_json_line(const MetricReport& r);
std::string to_table(const MetricReport& r);

}  // namespace attnreg::metrics
