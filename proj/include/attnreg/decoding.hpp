#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnreg/model.hpp"

namespace attnreg::decode {

using model::TokenId;

enum class Strategy { kGreedy, kBeam, kTopK, kTopP, kTopKP, kContrastive };

const char* to_string(Strategy s);
// Accepts the CLI spellings: greedy, beam, topk, topp, topkp, con.
Strategy parse_strategy(const std::string& s);

struct DecodeConfig {
  Strategy strategy = Strategy::kBeam;
  std::size_t beams = 5;
  double repetition_penalty = 2.0;
  std::size_t k = 40;
  double p = 0.92;
  double penalty_alpha = 0.6;
  std::size_t max_new_tokens = 40;
  std::uint64_t seed = 0;
  std::optional<TokenId> stop_token;

  void validate() const;
};

// Contrastive search k grid.
inline constexpr std::size_t kContrastiveKGrid[] = {2, 3, 5, 7, 9};

struct StepOutput {
  std::vector<double> logits;               // next-token logits after the last position
  std::vector<std::vector<double>> hidden;  // one state per context position
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_context() const = 0;
  virtual StepOutput step(std::span<const TokenId> context) const = 0;
};

// Adapter over trained transformer parameters; hidden states are the final
// layer-norm outputs that feed the output head.
class TransformerModel : public LanguageModel {
 public:
  explicit TransformerModel(const model::Parameters& params) : params_(params) {}
  std::size_t vocab_size() const override { return params_.config.vocab_size; }
  std::size_t max_context() const override { return params_.config.max_seq_len; }
  StepOutput step(std::span<const TokenId> context) const override;

 private:
  const model::Parameters& params_;
};

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Divides positive logits of every token present in `context` by `penalty`,
// multiplies negative ones.
void apply_repetition_penalty(std::vector<double>& logits, std::span<const TokenId> context,
                              double penalty);

// Keeps the k most probable tokens, then the smallest prefix (by descending
// probability) whose mass reaches p, and renormalizes. k = 0 disables the
// first filter.
std::vector<double> filter_distribution(std::span<const double> probs, std::size_t k, double p);

// Every strategy returns prompt + generated tokens. Generation ends at the
// stop token (kept in the output), after max_new_tokens, or when the model's
// context is full.
std::vector<TokenId> greedy(const LanguageModel& m, std::span<const TokenId> prompt,
                            const DecodeConfig& cfg);
std::vector<TokenId> beam_search(const LanguageModel& m, std::span<const TokenId> prompt,
                                 const DecodeConfig& cfg);
std::vector<TokenId> sample_filtered(const LanguageModel& m, std::span<const TokenId> prompt,
                                     const DecodeConfig& cfg);

// Score of one candidate: (1 - alpha) * prob - alpha * max cosine similarity
// between its hidden state and the states of all context positions.
double contrastive_score(double prob, std::span<const double> candidate_hidden,
                         const std::vector<std::vector<double>>& context_hidden, double alpha);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

std::vector<TokenId> contrastive_search(const LanguageModel& m, std::span<const TokenId> prompt,
                                        const DecodeConfig& cfg);

// Dispatches on cfg.strategy.
std::vector<TokenId> generate(const LanguageModel& m, std::span<const TokenId> prompt,
                              const DecodeConfig& cfg);

}  // namespace attnreg::decode
