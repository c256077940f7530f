#include "attnreg/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnreg/error.hpp"
#include "attnreg/random.hpp"

namespace attnreg::decode {
namespace {

void check_prompt(const LanguageModel& m, std::span<const TokenId> prompt) {
  if (prompt.empty()) throw InvalidArgument("decode: empty prompt");
  if (prompt.size() > m.max_context()) {
    throw InvalidArgument("decode: prompt of " + std::to_string(prompt.size()) +
                          " tokens exceeds the context window of " +
                          std::to_string(m.max_context()));
  }
}

bool is_stop(const DecodeConfig& cfg, TokenId t) { return cfg.stop_token && *cfg.stop_token == t; }

// Indices sorted by descending value, ascending index on ties.
std::vector<std::size_t> ranked(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return idx;
}

std::vector<double> checked_logits(const LanguageModel& m, std::span<const TokenId> ctx,
                                   StepOutput* out = nullptr) {
  StepOutput s = m.step(ctx);
  if (s.logits.size() != m.vocab_size()) throw InvalidArgument("decode: logits/vocab mismatch");
  std::vector<double> logits = s.logits;
  if (out) *out = std::move(s);
  return logits;
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kBeam: return "beam";
    case Strategy::kTopK: return "topk";
    case Strategy::kTopP: return "topp";
    case Strategy::kTopKP: return "topkp";
    case Strategy::kContrastive: return "con";
  }
  return "greedy";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "greedy") return Strategy::kGreedy;
  if (s == "beam" || s == "bs") return Strategy::kBeam;
  if (s == "topk") return Strategy::kTopK;
  if (s == "topp") return Strategy::kTopP;
  if (s == "topkp") return Strategy::kTopKP;
  if (s == "con" || s == "contrastive") return Strategy::kContrastive;
  throw InvalidArgument("unknown decoding strategy '" + s + "'");
}

void DecodeConfig::validate() const {
  if (beams < 1) throw InvalidArgument("beams must be >= 1");
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("p must lie in (0, 1]");
  if (!(penalty_alpha >= 0.0 && penalty_alpha <= 1.0)) {
    throw InvalidArgument("penalty_alpha must lie in [0, 1]");
  }
  if (!(repetition_penalty > 0.0)) throw InvalidArgument("repetition penalty must be > 0");
}

StepOutput TransformerModel::step(std::span<const TokenId> context) const {
  const model::ForwardResult r = model::forward(params_, context);
  const std::size_t n = context.size();
  const std::size_t v = r.logits.shape[1];
  const std::size_t d = r.hidden.shape[1];
  StepOutput out;
  out.logits.assign(r.logits.data.end() - static_cast<std::ptrdiff_t>(v), r.logits.data.end());
  out.hidden.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.hidden[i].assign(r.hidden.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                         r.hidden.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

void apply_repetition_penalty(std::vector<double>& logits, std::span<const TokenId> context,
                              double penalty) {
  if (penalty == 1.0) return;
  std::vector<bool> seen(logits.size(), false);
  for (TokenId t : context) {
    if (t < seen.size()) seen[t] = true;
  }
  for (std::size_t v = 0; v < logits.size(); ++v) {
    if (!seen[v]) continue;
    logits[v] = logits[v] > 0.0 ? logits[v] / penalty : logits[v] * penalty;
  }
}

std::vector<double> filter_distribution(std::span<const double> probs, std::size_t k, double p) {
  const std::vector<std::size_t> order = ranked(probs);
  std::size_t keep = probs.size();
  if (k > 0) keep = std::min(keep, k);
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  for (std::size_t r = 0; r < keep; ++r) mass += probs[order[r]];
  if (p < 1.0) {
    double cum = 0.0;
    std::size_t cut = keep;
    for (std::size_t r = 0; r < keep; ++r) {
      cum += probs[order[r]] / mass;
      if (cum >= p - 1e-12) {
        cut = r + 1;
        break;
      }
    }
    keep = cut;
    mass = 0.0;
    for (std::size_t r = 0; r < keep; ++r) mass += probs[order[r]];
  }
  for (std::size_t r = 0; r < keep; ++r) out[order[r]] = probs[order[r]] / mass;
  return out;
}

std::vector<TokenId> greedy(const LanguageModel& m, std::span<const TokenId> prompt,
                            const DecodeConfig& cfg) {
  check_prompt(m, prompt);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t t = 0; t < cfg.max_new_tokens && seq.size() < m.max_context(); ++t) {
    const auto next = static_cast<TokenId>(argmax(checked_logits(m, seq)));
    seq.push_back(next);
    if (is_stop(cfg, next)) break;
  }
  return seq;
}

std::vector<TokenId> beam_search(const LanguageModel& m, std::span<const TokenId> prompt,
                                 const DecodeConfig& cfg) {
  cfg.validate();
  check_prompt(m, prompt);
  struct Hyp {
    std::vector<TokenId> tokens;
    double score = 0.0;
  };
  struct Candidate {
    std::size_t beam;
    TokenId token;
    double score;
  };
  std::vector<Hyp> live{{std::vector<TokenId>(prompt.begin(), prompt.end()), 0.0}};
  std::vector<Hyp> finished;

  for (std::size_t t = 0; t < cfg.max_new_tokens && !live.empty(); ++t) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      if (live[b].tokens.size() >= m.max_context()) continue;
      std::vector<double> logits = checked_logits(m, live[b].tokens);
      apply_repetition_penalty(logits, live[b].tokens, cfg.repetition_penalty);
      const std::vector<double> lp = log_softmax(logits);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        cands.push_back({b, static_cast<TokenId>(v), live[b].score + lp[v]});
      }
    }
    for (auto& h : live) {
      if (h.tokens.size() >= m.max_context()) finished.push_back(h);
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.score > b.score;
    });
    std::vector<Hyp> next;
    for (std::size_t r = 0; r < cands.size() && next.size() < cfg.beams; ++r) {
      const Candidate& c = cands[r];
      Hyp h{live[c.beam].tokens, c.score};
      h.tokens.push_back(c.token);
      if (is_stop(cfg, c.token)) {
        if (r < cfg.beams) finished.push_back(std::move(h));
        continue;
      }
      next.push_back(std::move(h));
    }
    live = std::move(next);
  }
  for (auto& h : live) finished.push_back(std::move(h));

  const Hyp* best = nullptr;
  double best_norm = 0.0;
  for (const auto& h : finished) {
    const std::size_t generated = h.tokens.size() - prompt.size();
    const double norm = generated ? h.score / static_cast<double>(generated) : h.score;
    if (!best || norm > best_norm) {
      best = &h;
      best_norm = norm;
    }
  }
  if (!best) return {prompt.begin(), prompt.end()};
  return best->tokens;
}

std::vector<TokenId> sample_filtered(const LanguageModel& m, std::span<const TokenId> prompt,
                                     const DecodeConfig& cfg) {
  cfg.validate();
  check_prompt(m, prompt);
  std::size_t k = 0;
  double p = 1.0;
  switch (cfg.strategy) {
    case Strategy::kTopK: k = cfg.k; break;
    case Strategy::kTopP: p = cfg.p; break;
    default:
      k = cfg.k;
      p = cfg.p;
  }
  Rng rng(cfg.seed);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t t = 0; t < cfg.max_new_tokens && seq.size() < m.max_context(); ++t) {
    const std::vector<double> probs = filter_distribution(softmax(checked_logits(m, seq)), k, p);
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t pick = probs.size();
    std::size_t last_nonzero = 0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (probs[v] <= 0.0) continue;
      last_nonzero = v;
      cum += probs[v];
      if (u < cum) {
        pick = v;
        break;
      }
    }
    if (pick == probs.size()) pick = last_nonzero;
    const auto next = static_cast<TokenId>(pick);
    seq.push_back(next);
    if (is_stop(cfg, next)) break;
  }
  return seq;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double contrastive_score(double prob, std::span<const double> candidate_hidden,
                         const std::vector<std::vector<double>>& context_hidden, double alpha) {
  double degeneration = -1.0;
  for (const auto& h : context_hidden) {
    degeneration = std::max(degeneration, cosine_similarity(candidate_hidden, h));
  }
  if (context_hidden.empty()) degeneration = 0.0;
  return (1.0 - alpha) * prob - alpha * degeneration;
}

std::vector<TokenId> contrastive_search(const LanguageModel& m, std::span<const TokenId> prompt,
                                        const DecodeConfig& cfg) {
  cfg.validate();
  check_prompt(m, prompt);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t t = 0; t < cfg.max_new_tokens && seq.size() < m.max_context(); ++t) {
    StepOutput ctx;
    const std::vector<double> probs = softmax(checked_logits(m, seq, &ctx));
    const std::vector<std::size_t> order = ranked(probs);
    const std::size_t k = std::min(cfg.k, order.size());
    std::size_t best = order[0];
    if (cfg.penalty_alpha > 0.0) {
      double best_score = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        std::vector<TokenId> extended = seq;
        extended.push_back(static_cast<TokenId>(order[r]));
        const StepOutput cand = m.step(extended);
        const double s =
            contrastive_score(probs[order[r]], cand.hidden.back(), ctx.hidden, cfg.penalty_alpha);
        if (r == 0 || s > best_score) {
          best = order[r];
          best_score = s;
        }
      }
    }
    const auto next = static_cast<TokenId>(best);
    seq.push_back(next);
    if (is_stop(cfg, next)) break;
  }
  return seq;
}

std::vector<TokenId> generate(const LanguageModel& m, std::span<const TokenId> prompt,
                              const DecodeConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::kGreedy: return greedy(m, prompt, cfg);
    case Strategy::kBeam: return beam_search(m, prompt, cfg);
    case Strategy::kTopK:
    case Strategy::kTopP:
    case Strategy::kTopKP: return sample_filtered(m, prompt, cfg);
    case Strategy::kContrastive: return contrastive_search(m, prompt, cfg);
  }
  return greedy(m, prompt, cfg);
}

}  // namespace attnreg::decode
