// SPDX-License-Identifier: Apache-2.0
#include "qwid/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qwid {

namespace {

/// Working copy of a node list where nodes can be dropped or replaced in
/// place. Dropped nodes forward their readers to `redirect[id]`.
struct Rewrite {
  std::vector<std::optional<Node>> slots;
  std::vector<int> redirect;

  explicit Rewrite(const LayerGraph& g) : slots(g.nodes.begin(), g.nodes.end()), redirect(g.nodes.size()) {
    std::iota(redirect.begin(), redirect.end(), 0);
  }

  void drop(int id, int to) {
    slots[static_cast<std::size_t>(id)].reset();
    redirect[static_cast<std::size_t>(id)] = to;
  }

  std::vector<Node> compact() const {
    std::vector<int> position(slots.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i]) position[i] = next++;
    }
    auto resolve = [&](int id) {
      while (id >= 0 && !slots[static_cast<std::size_t>(id)]) id = redirect[static_cast<std::size_t>(id)];
      return id < 0 ? id : position[static_cast<std::size_t>(id)];
    };
    std::vector<Node> out;
    for (const auto& s : slots) {
      if (!s) continue;
      Node n = *s;
      n.id = static_cast<int>(out.size());
      for (int& in : n.inputs) in = resolve(in);
      out.push_back(std::move(n));
    }
    return out;
  }
};

bool sole_consumer(const std::vector<std::vector<int>>& cons, int id, int consumer) {
  const auto& c = cons[static_cast<std::size_t>(id)];
  return c.size() == 1 && c.front() == consumer;
}

void require_mode(const LayerGraph& g, NumericMode mode, const char* pass) {
  if (g.mode != mode) {
    throw GraphError(std::string(pass) + ": expected a " + mode_name(mode) + " graph, got " + mode_name(g.mode));
  }
}

}  // namespace

void fold_batchnorm(FloatTensor& w, FloatTensor& b, const BatchNormParams& bn) {
  const Index out_c = w.dim(0);
  if (bn.gamma.size() != out_c || bn.beta.size() != out_c || bn.mean.size() != out_c || bn.var.size() != out_c) {
    throw ShapeError("fold_batchnorm: " + std::to_string(out_c) + " output channels but BN has " +
                     std::to_string(bn.gamma.size()));
  }
  if (b.empty()) b = FloatTensor(Shape{out_c});
  if (b.size() != out_c) throw ShapeError("fold_batchnorm: bias length must equal c_out");
  auto rows = w.matrix(out_c);
  for (Index c = 0; c < out_c; ++c) {
    const double denom = static_cast<double>(bn.var[c]) + bn.eps;
    if (!(denom > 0)) throw ArgumentError("fold_batchnorm: var + eps must be positive");
    const double k = bn.gamma[c] / std::sqrt(denom);
    rows.row(c) = (rows.row(c).cast<double>() * k).cast<float>();
    b[c] = static_cast<float>(bn.beta[c] + (static_cast<double>(b[c]) - bn.mean[c]) * k);
  }
}

LayerGraph fold_batchnorm(const LayerGraph& g) {
  require_mode(g, NumericMode::kFloat32, "fold_batchnorm");
  validate(g);
  const auto cons = consumers(g);
  Rewrite rw(g);
  for (const auto& n : g.nodes) {
    if (n.kind == OpKind::kFusedConvBnRelu) {
      Node f = n;
      fold_batchnorm(f.weight, f.bias, *f.bn);
      f.bn.reset();
      f.kind = OpKind::kFusedConvRelu;
      rw.slots[static_cast<std::size_t>(n.id)] = std::move(f);
      continue;
    }
    if (n.kind != OpKind::kBatchNorm) continue;
    const int src = n.inputs.front();
    if (src < 0) continue;
    const Node& conv = g.nodes[static_cast<std::size_t>(src)];
    if (conv.kind != OpKind::kConv || !sole_consumer(cons, src, n.id)) continue;
    // The folded conv takes the BN's position so that a trailing BN keeps
    // the graph output last.
    Node f = conv;
    fold_batchnorm(f.weight, f.bias, *n.bn);
    rw.slots[static_cast<std::size_t>(n.id)] = std::move(f);
    rw.drop(src, n.id);
  }
  LayerGraph out = g;
  out.nodes = rw.compact();
  return out;
}

LayerGraph fuse(const LayerGraph& g) {
  require_mode(g, NumericMode::kFloat32, "fuse");
  validate(g);
  const auto cons = consumers(g);
  Rewrite rw(g);
  for (const auto& n : g.nodes) {
    if (n.kind != OpKind::kRelu) continue;
    const int mid = n.inputs.front();
    if (mid < 0 || !sole_consumer(cons, mid, n.id)) continue;
    const Node& m = g.nodes[static_cast<std::size_t>(mid)];
    if (m.kind == OpKind::kConv) {
      Node f = m;
      f.kind = OpKind::kFusedConvRelu;
      rw.slots[static_cast<std::size_t>(n.id)] = std::move(f);
      rw.drop(mid, n.id);
    } else if (m.kind == OpKind::kBatchNorm) {
      const int src = m.inputs.front();
      if (src < 0 || !sole_consumer(cons, src, mid)) continue;
      const Node& conv = g.nodes[static_cast<std::size_t>(src)];
      if (conv.kind != OpKind::kConv) continue;
      Node f = conv;
      f.kind = OpKind::kFusedConvBnRelu;
      f.bn = m.bn;
      rw.slots[static_cast<std::size_t>(n.id)] = std::move(f);
      rw.drop(mid, n.id);
      rw.drop(src, n.id);
    }
  }
  LayerGraph out = g;
  out.nodes = rw.compact();
  return out;
}

LayerGraph insert_fake_quant(const LayerGraph& g) {
  if (g.mode != NumericMode::kFloat32) throw ContractError("insert_fake_quant: expected an fp32 graph");
  validate(g);
  const auto cons = consumers(g);
  for (const auto& n : g.nodes) {
    if (n.kind == OpKind::kBatchNorm || n.kind == OpKind::kFusedConvBnRelu) {
      throw ContractError("insert_fake_quant: fold batch norm before inserting fake-quant nodes");
    }
    if (n.kind == OpKind::kConv && cons[static_cast<std::size_t>(n.id)].size() == 1 &&
        g.nodes[static_cast<std::size_t>(cons[static_cast<std::size_t>(n.id)].front())].kind == OpKind::kRelu) {
      throw ContractError("insert_fake_quant: graph is not fused (conv " + std::to_string(n.id) + " feeds a relu)");
    }
  }

  LayerGraph out;
  out.mode = NumericMode::kFakeQuant;
  out.input = g.input;
  auto add_fq = [&](int input) {
    Node fq;
    fq.id = static_cast<int>(out.nodes.size());
    fq.kind = OpKind::kFakeQuant;
    fq.inputs = {input};
    fq.observer = static_cast<int>(out.observers.size());
    out.observers.push_back(MinMaxObserver::per_tensor());
    out.nodes.push_back(std::move(fq));
    return out.nodes.back().id;
  };

  const int input_fq = add_fq(kGraphInput);
  std::vector<int> map(g.nodes.size());
  for (const auto& n : g.nodes) {
    Node c = n;
    c.id = static_cast<int>(out.nodes.size());
    for (int& in : c.inputs) in = in == kGraphInput ? input_fq : map[static_cast<std::size_t>(in)];
    const bool observed = n.has_weights() || n.kind == OpKind::kAdd || n.kind == OpKind::kConcat;
    out.nodes.push_back(std::move(c));
    const int id = out.nodes.back().id;
    map[static_cast<std::size_t>(n.id)] = observed ? add_fq(id) : id;
  }
  return out;
}

void prepare_int8(LayerGraph& g) {
  for (auto& n : g.nodes) {
    if (n.has_conv() && n.quantized) n.quantized->packed = pack_conv_weights(n.quantized->weight);
  }
}

LayerGraph convert(const LayerGraph& g) {
  if (g.mode != NumericMode::kFakeQuant) {
    throw ConversionError(std::string("convert: expected a fake-quant graph with observers, got ") + mode_name(g.mode));
  }
  validate(g);

  std::vector<std::optional<QuantParams>> observed(g.nodes.size());
  std::optional<QuantParams> input_params;
  for (const auto& n : g.nodes) {
    if (n.kind != OpKind::kFakeQuant) continue;
    const auto& obs = g.observers[static_cast<std::size_t>(*n.observer)];
    if (obs.count() == 0) {
      throw ConversionError("convert: observer " + std::to_string(*n.observer) + " has not been finalized (no data seen)");
    }
    const QuantParams p = obs.finalize_one();
    const int src = n.inputs.front();
    if (src == kGraphInput) {
      input_params = p;
    } else {
      observed[static_cast<std::size_t>(src)] = p;
    }
  }
  if (!input_params) throw ConversionError("convert: graph input has no observer");

  LayerGraph out;
  out.mode = NumericMode::kInt8;
  out.input = g.input;
  {
    Node stub;
    stub.kind = OpKind::kQuantizeStub;
    stub.inputs = {kGraphInput};
    stub.out_params = input_params;
    out.nodes.push_back(std::move(stub));
  }
  std::vector<int> map(g.nodes.size());
  auto resolve = [&](int id) { return id == kGraphInput ? 0 : map[static_cast<std::size_t>(id)]; };
  auto require_observed = [&](const Node& n) {
    const auto& p = observed[static_cast<std::size_t>(n.id)];
    if (!p) throw ConversionError("convert: node " + std::to_string(n.id) + " (" + op_name(n.kind) + ") has no output observer");
    return *p;
  };

  for (const auto& n : g.nodes) {
    if (n.kind == OpKind::kFakeQuant) {
      map[static_cast<std::size_t>(n.id)] = resolve(n.inputs.front());
      continue;
    }
    Node q;
    q.id = static_cast<int>(out.nodes.size());
    q.kind = n.kind;
    q.conv = n.conv;
    q.pool = n.pool;
    for (int in : n.inputs) q.inputs.push_back(resolve(in));
    const QuantParams px = *out.nodes[static_cast<std::size_t>(q.inputs.front())].out_params;
    switch (n.kind) {
      case OpKind::kConv:
      case OpKind::kFusedConvRelu:
      case OpKind::kLinear: {
        const QuantParams py = require_observed(n);
        QuantizedLayer layer;
        layer.weight = quantize_tensor(n.weight, QuantScheme::kPerChannelSymmetric);
        layer.bias = quantize_bias(n.bias, px, layer.weight);
        layer.requant = make_requant(px, layer.weight, py);
        q.quantized = std::move(layer);
        q.out_params = py;
        break;
      }
      case OpKind::kAdd:
      case OpKind::kConcat: q.out_params = require_observed(n); break;
      case OpKind::kRelu:
      case OpKind::kMaxPool:
      case OpKind::kGlobalAvgPool: q.out_params = px; break;
      case OpKind::kBatchNorm:
      case OpKind::kFusedConvBnRelu: throw ConversionError("convert: batch norm must be folded first");
      default: throw ConversionError(std::string("convert: unexpected node kind ") + op_name(n.kind));
    }
    map[static_cast<std::size_t>(n.id)] = q.id;
    out.nodes.push_back(std::move(q));
  }
  Node deq;
  deq.id = static_cast<int>(out.nodes.size());
  deq.kind = OpKind::kDequantizeStub;
  deq.inputs = {deq.id - 1};
  out.nodes.push_back(std::move(deq));
  prepare_int8(out);
  validate(out);
  return out;
}

std::vector<double> node_ops(const LayerGraph& g) {
  const auto shapes = infer_shapes(g, 1);
  std::vector<double> ops(g.nodes.size(), 0.0);
  for (const auto& n : g.nodes) {
    const Shape& y = shapes[static_cast<std::size_t>(n.id)];
    const double out_elems = static_cast<double>(y.numel());
    double v = 0;
    switch (n.kind) {
      case OpKind::kConv:
      case OpKind::kFusedConvRelu:
      case OpKind::kFusedConvBnRelu: {
        const Shape& w = n.quantized ? n.quantized->weight.shape() : n.weight.shape();
        v = 2.0 * static_cast<double>(w[2] * w[3] * w[1] * w[0] * y[2] * y[3]);
        if (n.kind != OpKind::kConv) v += out_elems;
        break;
      }
      case OpKind::kLinear: {
        const Shape& w = n.quantized ? n.quantized->weight.shape() : n.weight.shape();
        v = 2.0 * static_cast<double>(w[0] * w[1]);
        break;
      }
      case OpKind::kRelu:
      case OpKind::kAdd:
      case OpKind::kMaxPool:
      case OpKind::kGlobalAvgPool: v = out_elems; break;
      default: break;
    }
    ops[static_cast<std::size_t>(n.id)] = v;
  }
  return ops;
}

double count_ops(const LayerGraph& g) {
  const auto ops = node_ops(g);
  return std::accumulate(ops.begin(), ops.end(), 0.0);
}

std::vector<std::size_t> node_footprints(const LayerGraph& g) {
  const auto shapes = infer_shapes(g, 1);
  const Shape in_shape = g.input.batch_shape(1);
  const std::size_t bytes = g.mode == NumericMode::kInt8 ? 1 : 4;
  std::vector<std::size_t> out(g.nodes.size(), 0);
  for (const auto& n : g.nodes) {
    if (n.kind == OpKind::kQuantizeStub || n.kind == OpKind::kDequantizeStub || n.kind == OpKind::kFakeQuant) continue;
    Index elems = shapes[static_cast<std::size_t>(n.id)].numel();
    for (int in : n.inputs) elems += in == kGraphInput ? in_shape.numel() : shapes[static_cast<std::size_t>(in)].numel();
    out[static_cast<std::size_t>(n.id)] = static_cast<std::size_t>(elems) * bytes;
  }
  return out;
}

std::size_t memory_footprint(const LayerGraph& g) {
  const auto f = node_footprints(g);
  return f.empty() ? 0 : *std::max_element(f.begin(), f.end());
}

}  // namespace qwid
