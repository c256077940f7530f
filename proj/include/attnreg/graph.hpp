#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "attnreg/tensor.hpp"

namespace attnreg::grad {

using NodeId = std::size_t;

enum class Op {
  kParameter,
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kTranspose,
  kExp,
  kLog,
  kPow,
  kSum,
  kMean,
  kSoftmax,
  kGather,
  kConcat,
  kSlice,
  kLayerNorm,
  kGelu,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kConstant;
  std::vector<NodeId> inputs;
  Shape shape;

  std::string name;                 // parameter / input leaves
  std::optional<Tensor> constant;   // constant leaves
  std::optional<std::size_t> axis;  // sum, mean, softmax, concat, slice
  double scalar = 0.0;              // pow exponent, log floor, layer-norm eps
  std::size_t start = 0;            // slice
  std::vector<std::size_t> indices; // gather
};

// Node values produced by Graph::eval, indexed by NodeId.
class Values {
 public:
  explicit Values(std::vector<Tensor> v) : values_(std::move(v)) {}
  const Tensor& operator[](NodeId id) const { return values_.at(id); }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  std::vector<Tensor> values_;
};

// Static computation graph. Nodes are appended in topological order; leaves
// named as parameters or inputs are bound at eval time, parameters receive
// gradients in backward. Shapes are inferred and checked at construction.
class Graph {
 public:
  NodeId parameter(const std::string& name, Shape shape);
  NodeId input(const std::string& name, Shape shape);
  NodeId constant(Tensor value);
  NodeId scalar(double v) { return constant(Tensor::scalar(v)); }

  // Elementwise ops broadcast when one shape is a trailing suffix of the other.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);

  NodeId matmul(NodeId a, NodeId b);  // [m,k] x [k,n]
  NodeId transpose(NodeId a);         // rank 2
  NodeId exp(NodeId a);
  // log(max(a, floor)); the gradient is zero where the floor is active.
  NodeId log(NodeId a, double floor = 0.0);
  NodeId pow(NodeId a, double exponent);
  // Reduce over one axis, or over everything (scalar result) when omitted.
  NodeId sum(NodeId a, std::optional<std::size_t> axis = std::nullopt);
  NodeId mean(NodeId a, std::optional<std::size_t> axis = std::nullopt);
  NodeId softmax(NodeId a, std::size_t axis);
  // Rows of a rank-2 table selected by index.
  NodeId gather(NodeId table, std::vector<std::size_t> indices);
  NodeId concat(const std::vector<NodeId>& parts, std::size_t axis);
  NodeId slice(NodeId a, std::size_t axis, std::size_t start, std::size_t len);
  // Normalization over the last axis, no affine part.
  NodeId layer_norm(NodeId a, double eps = 1e-5);
  NodeId gelu(NodeId a);

  NodeId neg(NodeId a) { return mul(a, scalar(-1.0)); }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Shape& shape(NodeId id) const { return nodes_.at(id).shape; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::vector<std::string> parameter_names() const;

  // Evaluates every node. Parameters and inputs must all be bound with
  // matching shapes; a non-finite intermediate raises NonFiniteError.
  Values eval(const NamedTensors& bindings) const;

  // Reverse-mode gradient of a scalar node with respect to every parameter.
  // Parameters the loss does not depend on get zero tensors.
  NamedTensors backward(const Values& values, NodeId loss) const;

 private:
  NodeId push(Node n);
  NodeId elementwise(Op op, NodeId a, NodeId b);
  NodeId unary(Op op, NodeId a, double scalar = 0.0);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace attnreg::grad
