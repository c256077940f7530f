#pragma once

#include <functional>

#include "attnreg/graph.hpp"
#include "attnreg/tensor.hpp"

namespace attnreg::grad {

// A scalar function of named parameters. When `grad` is non-null the callee
// also writes the analytic gradient into it.
using ScalarFn = std::function<double(const NamedTensors& params, NamedTensors* grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the analytic gradient with central differences at every entry:
// |analytic - cd| / max(|analytic|, |cd|, 1e-12).
GradCheckResult grad_check(const ScalarFn& fn, const NamedTensors& params, double eps);

// Adapter: `loss` node of `graph`, parameters bound from `params`, any extra
// inputs from `inputs`.
ScalarFn graph_fn(const Graph& graph, NodeId loss, NamedTensors inputs = {});

}  // namespace attnreg::grad
