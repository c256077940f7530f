#pragma once

#include <span>
#include <string>
#include <vector>

#include "attnreg/graph.hpp"
#include "attnreg/model.hpp"

namespace attnreg::reg {

using model::AttentionTrace;
using model::Distribution;

// One flag per sequence position.
using Mask = std::vector<bool>;

enum class RegKind { kNone, kEar, kKlar };

const char* to_string(RegKind kind);
RegKind parse_reg_kind(const std::string& s);

inline constexpr double kLogFloor = 1e-12;

struct RegConfig {
  RegKind kind = RegKind::kNone;
  double alpha = 0.0;
  // Attention share given to relevant positions (KLAR only).
  double share = 0.4;
  bool include_special_tokens = false;
  // Restrict the penalty to counter-narrative positions.
  bool cn_only = false;
  // EAR: entropy of each head's own row instead of the head-averaged row.
  bool per_head_entropy = false;
  // Softmax again after averaging heads. Off means the plain head mean.
  bool resoftmax = true;

  void validate() const;
};

// Shannon entropy in nats, 0 ln 0 = 0. Throws unless the input is a
// distribution within 1e-6.
double entropy(std::span<const double> dist);

// KL(a || t) with both logs floored at kLogFloor.
double kl_divergence(std::span<const double> a, std::span<const double> t);

// Mean over layers and over positions >= first_position of the entropy of the
// attention rows selected by `cfg` (head-averaged, re-softmaxed by default).
double ear_penalty(const AttentionTrace& trace, const RegConfig& cfg = {},
                   std::size_t first_position = 0);

// Target row for a position whose left context has the given masks: the
// relevant positions share `share` equally, the others share 1 - share.
// Special positions count as relevant only when include_special is set.
// With no relevant or no non-relevant position the row is uniform.
Distribution build_target(const Mask& relevant, const Mask& special,
                          double share, bool include_special);

struct KlarValue {
  double mean = 0.0;
  // Mean over layers of KL(a_i || t_i), one entry per position.
  std::vector<double> per_position;
};

KlarValue klar_penalty(const AttentionTrace& trace, const Mask& relevant,
                       const Mask& special, const RegConfig& cfg,
                       std::size_t first_position = 0);

// none: task; ear: task - alpha * penalty; klar: task + alpha * penalty.
double total_loss(double task_loss, const RegConfig& cfg, double penalty);

// Graph counterparts of the penalties above, built over a model graph's
// attention nodes. Values agree with the plain functions.
grad::NodeId ear_penalty_node(model::ModelGraph& mg, const RegConfig& cfg,
                              std::size_t first_position = 0);
grad::NodeId klar_penalty_node(model::ModelGraph& mg, const Mask& relevant,
                               const Mask& special, const RegConfig& cfg,
                               std::size_t first_position = 0);
// Per-position KLAR values as a [seq_len] node.
grad::NodeId klar_per_position_node(model::ModelGraph& mg, const Mask& relevant,
                                    const Mask& special, const RegConfig& cfg);
grad::NodeId total_loss_node(grad::Graph& g, grad::NodeId task, const RegConfig& cfg,
                             grad::NodeId penalty);

}  // namespace attnreg::reg
