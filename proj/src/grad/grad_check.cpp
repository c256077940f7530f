#include "attnreg/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "attnreg/error.hpp"

namespace attnreg::grad {

GradCheckResult grad_check(const ScalarFn& fn, const NamedTensors& params, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("grad_check: eps must be positive");

  NamedTensors analytic;
  const double f0 = fn(params, &analytic);
  if (!std::isfinite(f0)) throw NonFiniteError(0, "grad_check: non-finite function value");

  GradCheckResult result;
  NamedTensors probe = params;
  for (const auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    if (it == analytic.end()) throw InvalidArgument("grad_check: no gradient for '" + name + "'");
    if (it->second.shape != tensor.shape) {
      throw ShapeError("grad_check: gradient shape mismatch for '" + name + "'");
    }
    Tensor& p = probe.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = fn(probe, nullptr);
      p[i] = orig - eps;
      const double down = fn(probe, nullptr);
      p[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError(0, "grad_check: non-finite value perturbing '" + name + "'");
      }
      const double cd = (up - down) / (2.0 * eps);
      const double an = it->second[i];
      const double denom = std::max({std::abs(an), std::abs(cd), 1e-12});
      const double rel = std::abs(an - cd) / denom;
      if (result.worst_parameter.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = name;
        result.worst_index = i;
        result.analytic = an;
        result.numeric = cd;
      }
    }
  }
  return result;
}

ScalarFn graph_fn(const Graph& graph, NodeId loss, NamedTensors inputs) {
  return [&graph, loss, inputs = std::move(inputs)](const NamedTensors& params,
                                                     NamedTensors* grad) {
    NamedTensors bindings = inputs;
    for (const auto& [k, t] : params) bindings.insert_or_assign(k, t);
    Values v = graph.eval(bindings);
    if (grad) *grad = graph.backward(v, loss);
    return v[loss].item();
  };
}

}  // namespace attnreg::grad
