#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "attnreg/graph.hpp"
#include "attnreg/tensor.hpp"

namespace attnreg::model {

using TokenId = std::uint32_t;
using Distribution = std::vector<double>;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws InvalidArgument unless every extent is >= 1 and d_model % n_heads == 0.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameters {
  ModelConfig config;
  grad::NamedTensors tensors;
};

// GPT-2 style pre-norm decoder. Weights ~ N(0, 0.02), biases zero, layer-norm
// scales one. Keys carry no bias: it would shift every score in a row by the
// same amount and never change the attention.
Parameters init_params(const ModelConfig& config);

// Causal attention weights of one sequence, stored [layer][head][i][j].
struct AttentionTrace {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t seq_len = 0;
  std::vector<double> weights;

  AttentionTrace() = default;
  AttentionTrace(std::size_t layers, std::size_t heads, std::size_t seq_len);

  double& at(std::size_t l, std::size_t h, std::size_t i, std::size_t j) {
    return weights[((l * heads + h) * seq_len + i) * seq_len + j];
  }
  double at(std::size_t l, std::size_t h, std::size_t i, std::size_t j) const {
    return weights[((l * heads + h) * seq_len + i) * seq_len + j];
  }
  // Row i restricted to its left context 0..i.
  std::span<const double> row(std::size_t l, std::size_t h, std::size_t i) const {
    return {&weights[((l * heads + h) * seq_len + i) * seq_len], i + 1};
  }

  // Checks causality, range and row normalization; throws InvalidArgument.
  void validate(double tol = 1e-6) const;
};

// Graph of one forward pass with handles to the nodes callers need.
struct ModelGraph {
  grad::Graph graph;
  std::size_t seq_len = 0;
  grad::NodeId logits = 0;                          // [n, vocab]
  grad::NodeId hidden = 0;                          // [n, d_model], final norm output
  std::vector<std::vector<grad::NodeId>> attention; // [layer][head] -> [n, n]
};

// Throws InvalidArgument for out-of-range ids, empty or overlong sequences.
ModelGraph build_model_graph(const ModelConfig& config, std::span<const TokenId> tokens);

struct ForwardResult {
  grad::Tensor logits;
  grad::Tensor hidden;
  AttentionTrace trace;
};

ForwardResult forward(const Parameters& params, std::span<const TokenId> tokens);

AttentionTrace extract_trace(const ModelGraph& mg, const grad::Values& values);

// Mean cross-entropy (nats) of logits rows against targets; one target per row.
double cross_entropy(const grad::Tensor& logits, std::span<const TokenId> targets);

// Next-token loss: row k of `logits` predicts tokens[k + 1].
double lm_loss(const grad::Tensor& logits, std::span<const TokenId> tokens);
grad::NodeId lm_loss_node(grad::Graph& g, grad::NodeId logits, std::span<const TokenId> tokens);

// Per layer, per position: mean over heads of row i, then (optionally) a
// softmax over positions 0..i. Result indexed [layer][i], rows of length i+1.
std::vector<std::vector<Distribution>> head_average(const AttentionTrace& trace,
                                                    bool resoftmax = true);

}  // namespace attnreg::model
