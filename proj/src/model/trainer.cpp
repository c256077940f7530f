#include "attnreg/trainer.hpp"

#include <cmath>
#include <numeric>

#include "attnreg/random.hpp"

namespace attnreg::model {

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
    throw InvalidArgument("warmup_ratio must lie in [0, 1]");
  }
}

TrainingGraph build_training_graph(const ModelConfig& config, const TrainingExample& ex,
                                   const reg::RegConfig& reg) {
  reg.validate();
  const std::size_t n = ex.tokens.size();
  if (ex.relevant.size() != n || ex.special.size() != n) {
    throw InvalidArgument("training example: mask length mismatch");
  }
  TrainingGraph tg{build_model_graph(config, ex.tokens), 0, std::nullopt, 0};
  auto& g = tg.mg.graph;
  tg.task = lm_loss_node(g, tg.mg.logits, ex.tokens);
  const std::size_t first = reg.cn_only ? std::min(ex.cn_begin, n - 1) : 0;
  switch (reg.kind) {
    case reg::RegKind::kNone:
      break;
    case reg::RegKind::kEar:
      tg.penalty = reg::ear_penalty_node(tg.mg, reg, first);
      break;
    case reg::RegKind::kKlar:
      tg.penalty = reg::klar_penalty_node(tg.mg, ex.relevant, ex.special, reg, first);
      break;
  }
  tg.total = tg.penalty ? reg::total_loss_node(g, tg.task, reg, *tg.penalty) : tg.task;
  return tg;
}

ExampleLoss example_loss(const Parameters& params, const TrainingExample& ex,
                         const reg::RegConfig& reg, bool with_grad) {
  const TrainingGraph tg = build_training_graph(params.config, ex, reg);
  const grad::Values values = tg.mg.graph.eval(params.tensors);
  ExampleLoss out;
  out.task = values[tg.task].item();
  out.penalty = tg.penalty ? values[*tg.penalty].item() : 0.0;
  out.total = values[tg.total].item();
  if (with_grad) out.grads = tg.mg.graph.backward(values, tg.total);
  return out;
}

void Adam::step(grad::NamedTensors& params, const grad::NamedTensors& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    const grad::Tensor& g = grads.at(name);
    auto [mit, m_new] = m_.try_emplace(name, p.shape, 0.0);
    auto [vit, v_new] = v_.try_emplace(name, p.shape, 0.0);
    grad::Tensor& m = mit->second;
    grad::Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warmup =
      static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (warmup == 0 || step >= warmup) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

TrainResult train(Parameters params, const std::vector<TrainingExample>& data,
                  const TrainConfig& cfg, const reg::RegConfig& reg) {
  cfg.validate();
  reg.validate();
  if (data.empty()) throw InvalidArgument("train: empty dataset");

  const std::size_t batches_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches_per_epoch * cfg.epochs;
  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    EpochStats stats;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, data.size());
      const double inv = 1.0 / static_cast<double>(end - begin);
      grad::NamedTensors acc;
      for (std::size_t k = begin; k < end; ++k) {
        ExampleLoss loss;
        try {
          loss = example_loss(params, data[order[k]], reg);
        } catch (const NonFiniteError& e) {
          throw DivergenceError(std::string("training diverged: ") + e.what(), params, step);
        }
        if (!std::isfinite(loss.total)) {
          throw DivergenceError("training diverged: non-finite loss", params, step);
        }
        stats.task_loss += loss.task;
        stats.penalty += loss.penalty;
        stats.total_loss += loss.total;
        if (acc.empty()) {
          acc = std::move(loss.grads);
          for (auto& [name, t] : acc)
            for (double& x : t.data) x *= inv;
        } else {
          for (auto& [name, t] : acc) {
            const grad::Tensor& g = loss.grads.at(name);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i] * inv;
          }
        }
      }
      adam.step(params.tensors, acc, learning_rate_at(cfg, step, total_steps));
      ++step;
    }
    const double n = static_cast<double>(data.size());
    stats.task_loss /= n;
    stats.penalty /= n;
    stats.total_loss /= n;
    result.history.push_back(stats);
  }
  result.params = std::move(params);
  result.steps = step;
  return result;
}

}  // namespace attnreg::model
