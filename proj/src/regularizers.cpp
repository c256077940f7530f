#include "attnreg/regularizers.hpp"

#include <algorithm>
#include <cmath>

#include "attnreg/error.hpp"

namespace attnreg::reg {
namespace {

using grad::Graph;
using grad::NodeId;
using grad::Shape;
using grad::Tensor;

void check_masks(std::size_t n, const Mask& relevant, const Mask& special) {
  if (relevant.size() != n || special.size() != n) {
    throw InvalidArgument("mask length does not match sequence length " + std::to_string(n));
  }
}

// Rows fed to the penalties for one layer: [n, n], zero above the diagonal.
NodeId layer_rows(model::ModelGraph& mg, std::size_t layer, bool resoftmax) {
  Graph& g = mg.graph;
  const auto& heads = mg.attention[layer];
  NodeId avg = heads[0];
  for (std::size_t h = 1; h < heads.size(); ++h) avg = g.add(avg, heads[h]);
  if (heads.size() > 1) avg = g.mul(avg, g.scalar(1.0 / static_cast<double>(heads.size())));
  if (!resoftmax) return avg;
  const std::size_t n = mg.seq_len;
  Tensor mask(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask.at(i, j) = -1e30;
  return g.softmax(g.add(avg, g.constant(std::move(mask))), 1);
}

// Entropy of every row of a [n, n] node -> [n].
NodeId row_entropy(Graph& g, NodeId rows) {
  return g.neg(g.sum(g.mul(rows, g.log(rows, kLogFloor)), 1));
}

NodeId mean_from(Graph& g, NodeId per_position, std::size_t first, std::size_t n) {
  if (first >= n) throw InvalidArgument("penalty: first position beyond sequence");
  return g.mean(g.slice(per_position, 0, first, n - first));
}

}  // namespace

const char* to_string(RegKind kind) {
  switch (kind) {
    case RegKind::kNone: return "none";
    case RegKind::kEar: return "ear";
    case RegKind::kKlar: return "klar";
  }
  return "none";
}

RegKind parse_reg_kind(const std::string& s) {
  if (s == "none") return RegKind::kNone;
  if (s == "ear") return RegKind::kEar;
  if (s == "klar") return RegKind::kKlar;
  throw InvalidArgument("unknown regularizer '" + s + "' (expected none, ear or klar)");
}

void RegConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be >= 0");
  if (kind == RegKind::kKlar && !(share > 0.0 && share < 1.0)) {
    throw InvalidArgument("share must lie in (0, 1) for klar");
  }
}

double entropy(std::span<const double> dist) {
  if (dist.empty()) throw InvalidArgument("entropy: empty distribution");
  double total = 0.0, h = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw InvalidArgument("entropy: negative probability");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-6) throw InvalidArgument("entropy: input does not sum to 1");
  return h;
}

double kl_divergence(std::span<const double> a, std::span<const double> t) {
  if (a.size() != t.size()) throw InvalidArgument("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    kl += a[j] * (std::log(std::max(a[j], kLogFloor)) - std::log(std::max(t[j], kLogFloor)));
  }
  return kl;
}

double ear_penalty(const AttentionTrace& trace, const RegConfig& cfg, std::size_t first) {
  const std::size_t n = trace.seq_len;
  if (first >= n) throw InvalidArgument("ear_penalty: first position beyond sequence");
  double total = 0.0;
  if (cfg.per_head_entropy) {
    for (std::size_t l = 0; l < trace.layers; ++l) {
      double layer = 0.0;
      for (std::size_t i = first; i < n; ++i) {
        double heads = 0.0;
        for (std::size_t h = 0; h < trace.heads; ++h) heads += entropy(trace.row(l, h, i));
        layer += heads / static_cast<double>(trace.heads);
      }
      total += layer / static_cast<double>(n - first);
    }
  } else {
    const auto rows = model::head_average(trace, cfg.resoftmax);
    for (const auto& layer_rows : rows) {
      double layer = 0.0;
      for (std::size_t i = first; i < n; ++i) layer += entropy(layer_rows[i]);
      total += layer / static_cast<double>(n - first);
    }
  }
  return total / static_cast<double>(trace.layers);
}

namespace {

// Target row over the first n positions of the masks.
Distribution target_prefix(const Mask& relevant, const Mask& special, std::size_t n, double share,
                           bool include_special) {
  if (!(share > 0.0 && share < 1.0)) throw InvalidArgument("build_target: share must be in (0,1)");
  std::vector<bool> in_r(n);
  std::size_t r = 0;
  for (std::size_t j = 0; j < n; ++j) {
    in_r[j] = special[j] ? include_special : relevant[j];
    if (in_r[j]) ++r;
  }
  if (r == 0 || r == n) return Distribution(n, 1.0 / static_cast<double>(n));
  Distribution t(n);
  const double wr = share / static_cast<double>(r);
  const double wn = (1.0 - share) / static_cast<double>(n - r);
  for (std::size_t j = 0; j < n; ++j) t[j] = in_r[j] ? wr : wn;
  return t;
}

}  // namespace

Distribution build_target(const Mask& relevant, const Mask& special, double share,
                          bool include_special) {
  if (relevant.size() != special.size() || relevant.empty()) {
    throw InvalidArgument("build_target: masks must be non-empty and of equal length");
  }
  return target_prefix(relevant, special, relevant.size(), share, include_special);
}

KlarValue klar_penalty(const AttentionTrace& trace, const Mask& relevant,
                       const Mask& special, const RegConfig& cfg, std::size_t first) {
  const std::size_t n = trace.seq_len;
  check_masks(n, relevant, special);
  if (first >= n) throw InvalidArgument("klar_penalty: first position beyond sequence");
  const auto rows = model::head_average(trace, cfg.resoftmax);
  KlarValue out;
  out.per_position.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Distribution t = target_prefix(relevant, special, i + 1,
                                        cfg.share, cfg.include_special_tokens);
    double s = 0.0;
    for (const auto& layer_rows : rows) s += kl_divergence(layer_rows[i], t);
    out.per_position[i] = s / static_cast<double>(trace.layers);
  }
  double sum = 0.0;
  for (std::size_t i = first; i < n; ++i) sum += out.per_position[i];
  out.mean = sum / static_cast<double>(n - first);
  return out;
}

double total_loss(double task_loss, const RegConfig& cfg, double penalty) {
  switch (cfg.kind) {
    case RegKind::kNone: return task_loss;
    case RegKind::kEar: return task_loss - cfg.alpha * penalty;
    case RegKind::kKlar: return task_loss + cfg.alpha * penalty;
  }
  return task_loss;
}

NodeId ear_penalty_node(model::ModelGraph& mg, const RegConfig& cfg, std::size_t first) {
  Graph& g = mg.graph;
  const std::size_t layers = mg.attention.size();
  NodeId total = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    NodeId layer_entropy;
    if (cfg.per_head_entropy) {
      const auto& heads = mg.attention[l];
      NodeId acc = row_entropy(g, heads[0]);
      for (std::size_t h = 1; h < heads.size(); ++h) acc = g.add(acc, row_entropy(g, heads[h]));
      layer_entropy = g.mul(acc, g.scalar(1.0 / static_cast<double>(heads.size())));
    } else {
      layer_entropy = row_entropy(g, layer_rows(mg, l, cfg.resoftmax));
    }
    const NodeId m = mean_from(g, layer_entropy, first, mg.seq_len);
    total = l == 0 ? m : g.add(total, m);
  }
  return g.mul(total, g.scalar(1.0 / static_cast<double>(layers)));
}

NodeId klar_per_position_node(model::ModelGraph& mg, const Mask& relevant,
                              const Mask& special, const RegConfig& cfg) {
  const std::size_t n = mg.seq_len;
  check_masks(n, relevant, special);
  Graph& g = mg.graph;
  Tensor log_target(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Distribution t = target_prefix(relevant, special, i + 1,
                                        cfg.share, cfg.include_special_tokens);
    for (std::size_t j = 0; j <= i; ++j) log_target.at(i, j) = std::log(std::max(t[j], kLogFloor));
  }
  const NodeId log_t = g.constant(std::move(log_target));
  NodeId total = 0;
  const std::size_t layers = mg.attention.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const NodeId a = layer_rows(mg, l, cfg.resoftmax);
    const NodeId kl = g.sum(g.mul(a, g.sub(g.log(a, kLogFloor), log_t)), 1);
    total = l == 0 ? kl : g.add(total, kl);
  }
  return g.mul(total, g.scalar(1.0 / static_cast<double>(layers)));
}

NodeId klar_penalty_node(model::ModelGraph& mg, const Mask& relevant,
                         const Mask& special, const RegConfig& cfg, std::size_t first) {
  const NodeId per_position = klar_per_position_node(mg, relevant, special, cfg);
  return mean_from(mg.graph, per_position, first, mg.seq_len);
}

NodeId total_loss_node(Graph& g, NodeId task, const RegConfig& cfg, NodeId penalty) {
  switch (cfg.kind) {
    case RegKind::kNone: return task;
    case RegKind::kEar: return g.sub(task, g.mul(penalty, g.scalar(cfg.alpha)));
    case RegKind::kKlar: return g.add(task, g.mul(penalty, g.scalar(cfg.alpha)));
  }
  return task;
}

}  // namespace attnreg::reg
