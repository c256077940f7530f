#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "attnreg/error.hpp"
#include "attnreg/model.hpp"
#include "attnreg/regularizers.hpp"

namespace attnreg::model {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  double learning_rate = 5e-5;
  double warmup_ratio = 0.1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// One serialized pair ready for teacher forcing.
struct TrainingExample {
  std::vector<TokenId> tokens;
  std::vector<bool> relevant;  // lexicon matches, never set on tags
  std::vector<bool> special;   // structural tags
  std::size_t cn_begin = 0;    // first counter-narrative position
};

struct TrainingGraph {
  ModelGraph mg;
  grad::NodeId task = 0;
  std::optional<grad::NodeId> penalty;
  grad::NodeId total = 0;
};

TrainingGraph build_training_graph(const ModelConfig& config, const TrainingExample& example,
                                   const reg::RegConfig& reg);

struct ExampleLoss {
  double task = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  grad::NamedTensors grads;
};

ExampleLoss example_loss(const Parameters& params, const TrainingExample& example,
                         const reg::RegConfig& reg, bool with_grad = true);

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(grad::NamedTensors& params, const grad::NamedTensors& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  grad::NamedTensors m_, v_;
};

// Linear warmup over the first ceil(warmup_ratio * total_steps) steps, then
// constant.
double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

struct EpochStats {
  double task_loss = 0.0;
  double penalty = 0.0;
  double total_loss = 0.0;
};

struct TrainResult {
  Parameters params;
  std::vector<EpochStats> history;
  std::size_t steps = 0;
};

// Raised when a step produces a non-finite loss; carries the parameters from
// before that step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, Parameters last_good, std::size_t step)
      : Error(what), last_good_(std::move(last_good)), step_(step) {}
  const Parameters& last_good() const noexcept { return last_good_; }
  std::size_t step() const noexcept { return step_; }

 private:
  Parameters last_good_;
  std::size_t step_;
};

TrainResult train(Parameters params, const std::vector<TrainingExample>& data,
                  const TrainConfig& cfg, const reg::RegConfig& reg);

}  // namespace attnreg::model
