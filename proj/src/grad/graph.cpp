#include "attnreg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "attnreg/error.hpp"

namespace attnreg::grad {
namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void accumulate(Tensor& dst, char& live, const Shape& shape) {
  if (!live) {
    dst = Tensor(shape, 0.0);
    live = true;
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kParameter: return "parameter";
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kPow: return "pow";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSoftmax: return "softmax";
    case Op::kGather: return "gather";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kGelu: return "gelu";
  }
  return "?";
}

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw InvalidArgument("unknown node id " + std::to_string(id));
}

NodeId Graph::push(Node n) {
  for (auto in : n.inputs) check_id(in);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(const std::string& name, Shape shape) {
  for (const auto& n : nodes_) {
    if ((n.op == Op::kParameter || n.op == Op::kInput) && n.name == name) {
      throw InvalidArgument("duplicate leaf name '" + name + "'");
    }
  }
  Node n;
  n.op = Op::kParameter;
  n.name = name;
  n.shape = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::input(const std::string& name, Shape shape) {
  for (const auto& n : nodes_) {
    if ((n.op == Op::kParameter || n.op == Op::kInput) && n.name == name) {
      throw InvalidArgument("duplicate leaf name '" + name + "'");
    }
  }
  Node n;
  n.op = Op::kInput;
  n.name = name;
  n.shape = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.shape = value.shape;
  n.constant = std::move(value);
  return push(std::move(n));
}

NodeId Graph::elementwise(Op op, NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  Node n;
  n.op = op;
  n.inputs = {a, b};
  if (is_suffix(sb, sa)) {
    n.shape = sa;
  } else if (is_suffix(sa, sb)) {
    n.shape = sb;
  } else {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + to_string(sa) +
                     " and " + to_string(sb));
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return elementwise(Op::kAdd, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return elementwise(Op::kSub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return elementwise(Op::kMul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return elementwise(Op::kDiv, a, b); }

NodeId Graph::unary(Op op, NodeId a, double scalar) {
  check_id(a);
  Node n;
  n.op = op;
  n.inputs = {a};
  n.shape = nodes_[a].shape;
  n.scalar = scalar;
  return push(std::move(n));
}

NodeId Graph::exp(NodeId a) { return unary(Op::kExp, a); }
NodeId Graph::log(NodeId a, double floor) { return unary(Op::kLog, a, floor); }
NodeId Graph::pow(NodeId a, double exponent) { return unary(Op::kPow, a, exponent); }
NodeId Graph::gelu(NodeId a) { return unary(Op::kGelu, a); }

NodeId Graph::layer_norm(NodeId a, double eps) {
  check_id(a);
  if (nodes_[a].shape.empty()) throw ShapeError("layer_norm needs rank >= 1");
  return unary(Op::kLayerNorm, a, eps);
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  }
  Node n;
  n.op = Op::kMatMul;
  n.inputs = {a, b};
  n.shape = {sa[0], sb[1]};
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  check_id(a);
  const Shape& s = nodes_[a].shape;
  if (s.size() != 2) throw ShapeError("transpose needs rank 2, got " + to_string(s));
  Node n;
  n.op = Op::kTranspose;
  n.inputs = {a};
  n.shape = {s[1], s[0]};
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a, std::optional<std::size_t> axis) {
  check_id(a);
  Node n;
  n.op = Op::kSum;
  n.inputs = {a};
  n.axis = axis;
  if (axis) {
    Shape s = nodes_[a].shape;
    if (*axis >= s.size()) throw ShapeError("sum: axis out of range");
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(*axis));
    n.shape = std::move(s);
  }
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a, std::optional<std::size_t> axis) {
  NodeId s = sum(a, axis);
  nodes_[s].op = Op::kMean;
  return s;
}

NodeId Graph::softmax(NodeId a, std::size_t axis) {
  check_id(a);
  if (axis >= nodes_[a].shape.size()) throw ShapeError("softmax: axis out of range");
  Node n;
  n.op = Op::kSoftmax;
  n.inputs = {a};
  n.axis = axis;
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

NodeId Graph::gather(NodeId table, std::vector<std::size_t> indices) {
  check_id(table);
  const Shape& s = nodes_[table].shape;
  if (s.size() != 2) throw ShapeError("gather: table must be rank 2");
  if (indices.empty()) throw ShapeError("gather: no indices");
  for (auto i : indices) {
    if (i >= s[0]) {
      throw ShapeError("gather: index " + std::to_string(i) + " out of range for " +
                       to_string(s));
    }
  }
  Node n;
  n.op = Op::kGather;
  n.inputs = {table};
  n.shape = {indices.size(), s[1]};
  n.indices = std::move(indices);
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (auto p : parts) check_id(p);
  Shape out = nodes_[parts[0]].shape;
  if (axis >= out.size()) throw ShapeError("concat: axis out of range");
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const Shape& s = nodes_[parts[k]].shape;
    if (s.size() != out.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != out[d]) throw ShapeError("concat: extent mismatch");
    }
    out[axis] += s[axis];
  }
  Node n;
  n.op = Op::kConcat;
  n.inputs = parts;
  n.axis = axis;
  n.shape = std::move(out);
  return push(std::move(n));
}

NodeId Graph::slice(NodeId a, std::size_t axis, std::size_t start, std::size_t len) {
  check_id(a);
  Shape s = nodes_[a].shape;
  if (axis >= s.size()) throw ShapeError("slice: axis out of range");
  if (len == 0 || start + len > s[axis]) {
    throw ShapeError("slice: range out of bounds for " + to_string(s));
  }
  s[axis] = len;
  Node n;
  n.op = Op::kSlice;
  n.inputs = {a};
  n.axis = axis;
  n.start = start;
  n.shape = std::move(s);
  return push(std::move(n));
}

std::vector<std::string> Graph::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_) {
    if (n.op == Op::kParameter) names.push_back(n.name);
  }
  return names;
}

Values Graph::eval(const NamedTensors& bindings) const {
  std::vector<Tensor> v(nodes_.size());
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    Tensor& out = v[id];
    switch (n.op) {
      case Op::kParameter:
      case Op::kInput: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw InvalidArgument("unbound leaf '" + n.name + "'");
        if (it->second.shape != n.shape) {
          throw ShapeError("leaf '" + n.name + "' expects shape " + to_string(n.shape) +
                           ", bound " + to_string(it->second.shape));
        }
        out = it->second;
        break;
      }
      case Op::kConstant:
        out = *n.constant;
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        const Tensor& a = v[n.inputs[0]];
        const Tensor& b = v[n.inputs[1]];
        out = Tensor(n.shape, 0.0);
        const std::size_t na = a.size(), nb = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double x = a[i % na], y = b[i % nb];
          switch (n.op) {
            case Op::kAdd: out[i] = x + y; break;
            case Op::kSub: out[i] = x - y; break;
            case Op::kMul: out[i] = x * y; break;
            default: out[i] = x / y; break;
          }
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor& a = v[n.inputs[0]];
        const Tensor& b = v[n.inputs[1]];
        const std::size_t m = a.shape[0], k = a.shape[1], cols = b.shape[1];
        out = Tensor(n.shape, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          double* row = &out.data[i * cols];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double s = a.data[i * k + kk];
            const double* brow = &b.data[kk * cols];
            for (std::size_t j = 0; j < cols; ++j) row[j] += s * brow[j];
          }
        }
        break;
      }
      case Op::kTranspose: {
        const Tensor& a = v[n.inputs[0]];
        out = Tensor(n.shape, 0.0);
        for (std::size_t i = 0; i < a.shape[0]; ++i)
          for (std::size_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
        break;
      }
      case Op::kExp:
      case Op::kLog:
      case Op::kPow:
      case Op::kGelu: {
        const Tensor& a = v[n.inputs[0]];
        out = Tensor(n.shape, 0.0);
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double x = a[i];
          switch (n.op) {
            case Op::kExp: out[i] = std::exp(x); break;
            case Op::kLog: out[i] = std::log(std::max(x, n.scalar)); break;
            case Op::kPow: out[i] = std::pow(x, n.scalar); break;
            default: {
              const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
              out[i] = 0.5 * x * (1.0 + t);
            }
          }
        }
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        const Tensor& a = v[n.inputs[0]];
        out = Tensor(n.shape, 0.0);
        if (!n.axis) {
          double s = 0.0;
          for (double x : a.data) s += x;
          out[0] = n.op == Op::kMean ? s / static_cast<double>(a.size()) : s;
        } else {
          const AxisSplit sp = split_at(a.shape, *n.axis);
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
              for (std::size_t in = 0; in < sp.inner; ++in)
                out[o * sp.inner + in] += a[(o * sp.extent + e) * sp.inner + in];
          if (n.op == Op::kMean) {
            for (double& x : out.data) x /= static_cast<double>(sp.extent);
          }
        }
        break;
      }
      case Op::kSoftmax: {
        const Tensor& a = v[n.inputs[0]];
        out = Tensor(n.shape, 0.0);
        const AxisSplit sp = split_at(a.shape, *n.axis);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            double mx = a[base];
            for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, a[base + e * sp.inner]);
            double z = 0.0;
            for (std::size_t e = 0; e < sp.extent; ++e) {
              const double ex = std::exp(a[base + e * sp.inner] - mx);
              out[base + e * sp.inner] = ex;
              z += ex;
            }
            for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= z;
          }
        }
        break;
      }
      case Op::kGather: {
        const Tensor& t = v[n.inputs[0]];
        const std::size_t d = t.shape[1];
        out = Tensor(n.shape, 0.0);
        for (std::size_t r = 0; r < n.indices.size(); ++r)
          std::copy_n(&t.data[n.indices[r] * d], d, &out.data[r * d]);
        break;
      }
      case Op::kConcat: {
        out = Tensor(n.shape, 0.0);
        const AxisSplit so = split_at(n.shape, *n.axis);
        std::size_t offset = 0;
        for (auto in_id : n.inputs) {
          const Tensor& p = v[in_id];
          const AxisSplit sp = split_at(p.shape, *n.axis);
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
              std::copy_n(&p.data[(o * sp.extent + e) * sp.inner], sp.inner,
                          &out.data[(o * so.extent + offset + e) * so.inner]);
          offset += sp.extent;
        }
        break;
      }
      case Op::kSlice: {
        const Tensor& a = v[n.inputs[0]];
        out = Tensor(n.shape, 0.0);
        const AxisSplit sa = split_at(a.shape, *n.axis);
        const std::size_t len = n.shape[*n.axis];
        for (std::size_t o = 0; o < sa.outer; ++o)
          for (std::size_t e = 0; e < len; ++e)
            std::copy_n(&a.data[(o * sa.extent + n.start + e) * sa.inner], sa.inner,
                        &out.data[(o * len + e) * sa.inner]);
        break;
      }
      case Op::kLayerNorm: {
        const Tensor& a = v[n.inputs[0]];
        out = Tensor(n.shape, 0.0);
        const std::size_t d = a.shape.back();
        const std::size_t rows = a.size() / d;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* x = &a.data[r * d];
          double mu = 0.0;
          for (std::size_t c = 0; c < d; ++c) mu += x[c];
          mu /= static_cast<double>(d);
          double var = 0.0;
          for (std::size_t c = 0; c < d; ++c) var += (x[c] - mu) * (x[c] - mu);
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + n.scalar);
          for (std::size_t c = 0; c < d; ++c) out.data[r * d + c] = (x[c] - mu) * inv;
        }
        break;
      }
    }
    if (!out.all_finite()) {
      throw NonFiniteError(id, std::string("non-finite value at node ") + std::to_string(id) +
                                   " (" + op_name(n.op) + ")");
    }
  }
  return Values(std::move(v));
}

NamedTensors Graph::backward(const Values& values, NodeId loss) const {
  check_id(loss);
  if (values.size() != nodes_.size()) throw InvalidArgument("values do not belong to this graph");
  if (num_elements(nodes_[loss].shape) != 1) {
    throw ShapeError("backward root must be scalar, got " + to_string(nodes_[loss].shape));
  }

  std::vector<Tensor> g(loss + 1);
  std::vector<char> live(loss + 1, 0);
  g[loss] = Tensor(nodes_[loss].shape, 1.0);
  live[loss] = true;

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!live[id]) continue;
    const Node& n = nodes_[id];
    const Tensor& gy = g[id];
    const Tensor& y = values[id];

    auto grad_of = [&](NodeId in) -> Tensor& {
      accumulate(g[in], live[in], nodes_[in].shape);
      return g[in];
    };

    switch (n.op) {
      case Op::kParameter:
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul:
      case Op::kDiv: {
        const Tensor& a = values[n.inputs[0]];
        const Tensor& b = values[n.inputs[1]];
        const std::size_t na = a.size(), nb = b.size();
        Tensor& ga = grad_of(n.inputs[0]);
        // Same node used twice (x*x) must accumulate into one buffer.
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const double x = a[i % na], w = b[i % nb], up = gy[i];
          switch (n.op) {
            case Op::kAdd:
              ga[i % na] += up;
              gb[i % nb] += up;
              break;
            case Op::kSub:
              ga[i % na] += up;
              gb[i % nb] -= up;
              break;
            case Op::kMul:
              ga[i % na] += up * w;
              gb[i % nb] += up * x;
              break;
            default:
              ga[i % na] += up / w;
              gb[i % nb] -= up * x / (w * w);
              break;
          }
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor& a = values[n.inputs[0]];
        const Tensor& b = values[n.inputs[1]];
        const std::size_t m = a.shape[0], k = a.shape[1], cols = b.shape[1];
        {
          Tensor& ga = grad_of(n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = &gy.data[i * cols];
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double* brow = &b.data[kk * cols];
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j) s += grow[j] * brow[j];
              ga.data[i * k + kk] += s;
            }
          }
        }
        {
          Tensor& gb = grad_of(n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = &gy.data[i * cols];
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double s = a.data[i * k + kk];
              double* gbrow = &gb.data[kk * cols];
              for (std::size_t j = 0; j < cols; ++j) gbrow[j] += s * grow[j];
            }
          }
        }
        break;
      }
      case Op::kTranspose: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < n.shape[0]; ++i)
          for (std::size_t j = 0; j < n.shape[1]; ++j) ga.at(j, i) += gy.at(i, j);
        break;
      }
      case Op::kExp: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * y[i];
        break;
      }
      case Op::kLog: {
        const Tensor& a = values[n.inputs[0]];
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          if (a[i] > n.scalar) ga[i] += gy[i] / a[i];
        }
        break;
      }
      case Op::kPow: {
        const Tensor& a = values[n.inputs[0]];
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i)
          ga[i] += gy[i] * n.scalar * std::pow(a[i], n.scalar - 1.0);
        break;
      }
      case Op::kGelu: {
        const Tensor& a = values[n.inputs[0]];
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const double x = a[i];
          const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
          const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
          ga[i] += gy[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
        }
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        const Shape& sa = nodes_[n.inputs[0]].shape;
        Tensor& ga = grad_of(n.inputs[0]);
        if (!n.axis) {
          const double s =
              n.op == Op::kMean ? gy[0] / static_cast<double>(ga.size()) : gy[0];
          for (double& x : ga.data) x += s;
        } else {
          const AxisSplit sp = split_at(sa, *n.axis);
          const double scale = n.op == Op::kMean ? 1.0 / static_cast<double>(sp.extent) : 1.0;
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
              for (std::size_t in = 0; in < sp.inner; ++in)
                ga[(o * sp.extent + e) * sp.inner + in] += gy[o * sp.inner + in] * scale;
        }
        break;
      }
      case Op::kSoftmax: {
        Tensor& ga = grad_of(n.inputs[0]);
        const AxisSplit sp = split_at(n.shape, *n.axis);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            double dot = 0.0;
            for (std::size_t e = 0; e < sp.extent; ++e) {
              const std::size_t k = base + e * sp.inner;
              dot += gy[k] * y[k];
            }
            for (std::size_t e = 0; e < sp.extent; ++e) {
              const std::size_t k = base + e * sp.inner;
              ga[k] += y[k] * (gy[k] - dot);
            }
          }
        }
        break;
      }
      case Op::kGather: {
        Tensor& gt = grad_of(n.inputs[0]);
        const std::size_t d = n.shape[1];
        for (std::size_t r = 0; r < n.indices.size(); ++r)
          for (std::size_t c = 0; c < d; ++c) gt.data[n.indices[r] * d + c] += gy.data[r * d + c];
        break;
      }
      case Op::kConcat: {
        const AxisSplit so = split_at(n.shape, *n.axis);
        std::size_t offset = 0;
        for (auto in_id : n.inputs) {
          const Shape& ps = nodes_[in_id].shape;
          const AxisSplit sp = split_at(ps, *n.axis);
          Tensor& gp = grad_of(in_id);
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
              for (std::size_t in = 0; in < sp.inner; ++in)
                gp.data[(o * sp.extent + e) * sp.inner + in] +=
                    gy.data[(o * so.extent + offset + e) * so.inner + in];
          offset += sp.extent;
        }
        break;
      }
      case Op::kSlice: {
        const Shape& sa_shape = nodes_[n.inputs[0]].shape;
        Tensor& ga = grad_of(n.inputs[0]);
        const AxisSplit sa = split_at(sa_shape, *n.axis);
        const std::size_t len = n.shape[*n.axis];
        for (std::size_t o = 0; o < sa.outer; ++o)
          for (std::size_t e = 0; e < len; ++e)
            for (std::size_t in = 0; in < sa.inner; ++in)
              ga.data[(o * sa.extent + n.start + e) * sa.inner + in] +=
                  gy.data[(o * len + e) * sa.inner + in];
        break;
      }
      case Op::kLayerNorm: {
        const Tensor& a = values[n.inputs[0]];
        Tensor& ga = grad_of(n.inputs[0]);
        const std::size_t d = n.shape.back();
        const std::size_t rows = a.size() / d;
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* x = &a.data[r * d];
          double mu = 0.0;
          for (std::size_t c = 0; c < d; ++c) mu += x[c];
          mu /= dd;
          double var = 0.0;
          for (std::size_t c = 0; c < d; ++c) var += (x[c] - mu) * (x[c] - mu);
          var /= dd;
          const double inv = 1.0 / std::sqrt(var + n.scalar);
          double mg = 0.0, mgx = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            mg += gy.data[r * d + c];
            mgx += gy.data[r * d + c] * y.data[r * d + c];
          }
          mg /= dd;
          mgx /= dd;
          for (std::size_t c = 0; c < d; ++c)
            ga.data[r * d + c] += inv * (gy.data[r * d + c] - mg - y.data[r * d + c] * mgx);
        }
        break;
      }
    }
  }

  NamedTensors out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kParameter) continue;
    if (id <= loss && live[id]) {
      out.emplace(n.name, std::move(g[id]));
    } else {
      out.emplace(n.name, Tensor(n.shape, 0.0));
    }
  }
  return out;
}

}  // namespace attnreg::grad
