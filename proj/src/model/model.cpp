#include "attnreg/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "attnreg/error.hpp"
#include "attnreg/random.hpp"

namespace attnreg::model {
namespace {

using grad::Graph;
using grad::NodeId;
using grad::Shape;
using grad::Tensor;

constexpr double kInitStd = 0.02;
constexpr double kMaskValue = -1e30;

std::string layer_key(std::size_t l, const char* suffix) {
  return "h" + std::to_string(l) + "." + suffix;
}

enum class Init { kNormal, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::vector<ParamSpec> specs;
  specs.push_back({"wte", {c.vocab_size, d}, Init::kNormal});
  specs.push_back({"wpe", {c.max_seq_len, d}, Init::kNormal});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    specs.push_back({layer_key(l, "ln1.g"), {d}, Init::kOne});
    specs.push_back({layer_key(l, "ln1.b"), {d}, Init::kZero});
    specs.push_back({layer_key(l, "attn.wq"), {d, d}, Init::kNormal});
    specs.push_back({layer_key(l, "attn.bq"), {d}, Init::kZero});
    specs.push_back({layer_key(l, "attn.wk"), {d, d}, Init::kNormal});
    specs.push_back({layer_key(l, "attn.wv"), {d, d}, Init::kNormal});
    specs.push_back({layer_key(l, "attn.bv"), {d}, Init::kZero});
    specs.push_back({layer_key(l, "attn.wo"), {d, d}, Init::kNormal});
    specs.push_back({layer_key(l, "attn.bo"), {d}, Init::kZero});
    specs.push_back({layer_key(l, "ln2.g"), {d}, Init::kOne});
    specs.push_back({layer_key(l, "ln2.b"), {d}, Init::kZero});
    specs.push_back({layer_key(l, "mlp.w1"), {d, c.d_ff}, Init::kNormal});
    specs.push_back({layer_key(l, "mlp.b1"), {c.d_ff}, Init::kZero});
    specs.push_back({layer_key(l, "mlp.w2"), {c.d_ff, d}, Init::kNormal});
    specs.push_back({layer_key(l, "mlp.b2"), {d}, Init::kZero});
  }
  specs.push_back({"lnf.g", {d}, Init::kOne});
  specs.push_back({"lnf.b", {d}, Init::kZero});
  specs.push_back({"head.w", {d, c.vocab_size}, Init::kNormal});
  return specs;
}

Tensor causal_mask(std::size_t n) {
  Tensor m(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = kMaskValue;
  return m;
}

NodeId affine_norm(Graph& g, NodeId x, NodeId gain, NodeId bias) {
  return g.add(g.mul(g.layer_norm(x), gain), bias);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 ||
      max_seq_len < 1) {
    throw InvalidArgument("model config: all extents must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw InvalidArgument("model config: d_model (" + std::to_string(d_model) +
                          ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
}

Parameters init_params(const ModelConfig& config) {
  config.validate();
  Parameters p;
  p.config = config;
  Rng rng(config.seed);
  for (const auto& spec : parameter_specs(config)) {
    Tensor t(spec.shape, spec.init == Init::kOne ? 1.0 : 0.0);
    if (spec.init == Init::kNormal) {
      for (double& v : t.data) v = kInitStd * rng.normal();
    }
    p.tensors.emplace(spec.name, std::move(t));
  }
  return p;
}

AttentionTrace::AttentionTrace(std::size_t l, std::size_t h, std::size_t n)
    : layers(l), heads(h), seq_len(n), weights(l * h * n * n, 0.0) {}

void AttentionTrace::validate(double tol) const {
  if (weights.size() != layers * heads * seq_len * seq_len) {
    throw InvalidArgument("attention trace: weight count does not match extents");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq_len; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const double w = at(l, h, i, j);
          if (j > i && w != 0.0) throw InvalidArgument("attention trace: non-causal weight");
          if (w < 0.0 || w > 1.0) throw InvalidArgument("attention trace: weight out of [0,1]");
          s += w;
        }
        if (std::abs(s - 1.0) > tol) {
          throw InvalidArgument("attention trace: row does not sum to 1");
        }
      }
    }
  }
}

ModelGraph build_model_graph(const ModelConfig& c, std::span<const TokenId> tokens) {
  c.validate();
  const std::size_t n = tokens.size();
  if (n == 0) throw InvalidArgument("forward: empty token sequence");
  if (n > c.max_seq_len) {
    throw InvalidArgument("forward: sequence length " + std::to_string(n) +
                          " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  std::vector<std::size_t> ids(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] >= c.vocab_size) {
      throw InvalidArgument("forward: token id " + std::to_string(tokens[i]) +
                            " out of range for vocabulary of " + std::to_string(c.vocab_size));
    }
    ids[i] = tokens[i];
    positions[i] = i;
  }

  ModelGraph mg;
  mg.seq_len = n;
  Graph& g = mg.graph;
  std::map<std::string, NodeId> p;
  for (const auto& spec : parameter_specs(c)) p[spec.name] = g.parameter(spec.name, spec.shape);

  const std::size_t hd = c.head_dim();
  const NodeId scale = g.scalar(1.0 / std::sqrt(static_cast<double>(hd)));
  const NodeId mask = g.constant(causal_mask(n));

  NodeId x = g.add(g.gather(p["wte"], ids), g.gather(p["wpe"], positions));
  mg.attention.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto key = [&](const char* s) { return p.at(layer_key(l, s)); };
    const NodeId h = affine_norm(g, x, key("ln1.g"), key("ln1.b"));
    const NodeId q = g.add(g.matmul(h, key("attn.wq")), key("attn.bq"));
    const NodeId k = g.matmul(h, key("attn.wk"));
    const NodeId v = g.add(g.matmul(h, key("attn.wv")), key("attn.bv"));
    std::vector<NodeId> heads;
    for (std::size_t hh = 0; hh < c.n_heads; ++hh) {
      const NodeId qh = g.slice(q, 1, hh * hd, hd);
      const NodeId kh = g.slice(k, 1, hh * hd, hd);
      const NodeId vh = g.slice(v, 1, hh * hd, hd);
      const NodeId scores = g.add(g.mul(g.matmul(qh, g.transpose(kh)), scale), mask);
      const NodeId att = g.softmax(scores, 1);
      mg.attention[l].push_back(att);
      heads.push_back(g.matmul(att, vh));
    }
    const NodeId merged = heads.size() == 1 ? heads[0] : g.concat(heads, 1);
    x = g.add(x, g.add(g.matmul(merged, key("attn.wo")), key("attn.bo")));
    const NodeId h2 = affine_norm(g, x, key("ln2.g"), key("ln2.b"));
    const NodeId ff = g.gelu(g.add(g.matmul(h2, key("mlp.w1")), key("mlp.b1")));
    x = g.add(x, g.add(g.matmul(ff, key("mlp.w2")), key("mlp.b2")));
  }
  mg.hidden = affine_norm(g, x, p["lnf.g"], p["lnf.b"]);
  mg.logits = g.matmul(mg.hidden, p["head.w"]);
  return mg;
}

AttentionTrace extract_trace(const ModelGraph& mg, const grad::Values& values) {
  const std::size_t layers = mg.attention.size();
  const std::size_t heads = layers ? mg.attention[0].size() : 0;
  const std::size_t n = mg.seq_len;
  AttentionTrace trace(layers, heads, n);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor& a = values[mg.attention[l][h]];
      std::copy(a.data.begin(), a.data.end(),
                trace.weights.begin() + static_cast<std::ptrdiff_t>((l * heads + h) * n * n));
    }
  }
  return trace;
}

ForwardResult forward(const Parameters& params, std::span<const TokenId> tokens) {
  ModelGraph mg = build_model_graph(params.config, tokens);
  grad::Values values = mg.graph.eval(params.tensors);
  ForwardResult r;
  r.logits = values[mg.logits];
  r.hidden = values[mg.hidden];
  r.trace = extract_trace(mg, values);
  return r;
}

double cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  if (logits.rank() != 2 || logits.shape[0] != targets.size() || targets.empty()) {
    throw InvalidArgument("cross_entropy: " + std::to_string(targets.size()) +
                          " targets for logits of shape " + grad::to_string(logits.shape));
  }
  const std::size_t v = logits.shape[1];
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= v) throw InvalidArgument("cross_entropy: target out of range");
    const double* row = &logits.data[r * v];
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
    total += std::log(z) + mx - row[targets[r]];
  }
  return total / static_cast<double>(targets.size());
}

double lm_loss(const Tensor& logits, std::span<const TokenId> tokens) {
  if (logits.rank() != 2 || logits.shape[0] != tokens.size()) {
    throw InvalidArgument("lm_loss: logits cover " +
                          (logits.rank() ? std::to_string(logits.shape[0]) : std::string("0")) +
                          " positions but sequence has " + std::to_string(tokens.size()));
  }
  if (tokens.size() < 2) throw InvalidArgument("lm_loss: need at least two tokens");
  const std::size_t v = logits.shape[1];
  Tensor head(grad::Shape{tokens.size() - 1, v},
              std::vector<double>(logits.data.begin(),
                                  logits.data.end() - static_cast<std::ptrdiff_t>(v)));
  return cross_entropy(head, tokens.subspan(1));
}

NodeId lm_loss_node(Graph& g, NodeId logits, std::span<const TokenId> tokens) {
  const Shape& s = g.shape(logits);
  if (s.size() != 2 || s[0] != tokens.size()) {
    throw InvalidArgument("lm_loss: logits/sequence length mismatch");
  }
  if (tokens.size() < 2) throw InvalidArgument("lm_loss: need at least two tokens");
  const std::size_t rows = tokens.size() - 1;
  const std::size_t v = s[1];
  Tensor onehot(Shape{rows, v}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (tokens[r + 1] >= v) throw InvalidArgument("lm_loss: target out of range");
    onehot.at(r, tokens[r + 1]) = -1.0 / static_cast<double>(rows);
  }
  const NodeId logp = g.log(g.softmax(g.slice(logits, 0, 0, rows), 1), 1e-300);
  return g.sum(g.mul(logp, g.constant(std::move(onehot))));
}

std::vector<std::vector<Distribution>> head_average(const AttentionTrace& trace,
                                                    bool resoftmax) {
  std::vector<std::vector<Distribution>> out(trace.layers);
  const double inv_heads = 1.0 / static_cast<double>(trace.heads);
  for (std::size_t l = 0; l < trace.layers; ++l) {
    out[l].resize(trace.seq_len);
    for (std::size_t i = 0; i < trace.seq_len; ++i) {
      Distribution row(i + 1, 0.0);
      for (std::size_t h = 0; h < trace.heads; ++h) {
        auto r = trace.row(l, h, i);
        for (std::size_t j = 0; j <= i; ++j) row[j] += r[j];
      }
      for (double& w : row) w *= inv_heads;
      if (resoftmax) {
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double& w : row) {
          w = std::exp(w - mx);
          z += w;
        }
        for (double& w : row) w /= z;
      }
      out[l][i] = std::move(row);
    }
  }
  return out;
}

}  // namespace attnreg::model
