// SPDX-License-Identifier: Apache-2.0
#include "qwid/graph.hpp"

#include <algorithm>
#include <variant>

namespace qwid {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConv: return "conv";
    case OpKind::kLinear: return "linear";
    case OpKind::kRelu: return "relu";
    case OpKind::kAdd: return "add";
    case OpKind::kMaxPool: return "maxpool";
    case OpKind::kGlobalAvgPool: return "gavgpool";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kFusedConvRelu: return "conv_relu";
    case OpKind::kFusedConvBnRelu: return "conv_bn_relu";
    case OpKind::kQuantizeStub: return "quantize";
    case OpKind::kDequantizeStub: return "dequantize";
    case OpKind::kFakeQuant: return "fake_quant";
    case OpKind::kConcat: return "concat";
  }
  return "?";
}

const char* mode_name(NumericMode mode) {
  switch (mode) {
    case NumericMode::kFloat32: return "fp32";
    case NumericMode::kInt8: return "int8";
    case NumericMode::kFakeQuant: return "fake-quant";
  }
  return "?";
}

const QuantParams& LayerGraph::input_params() const {
  if (mode != NumericMode::kInt8 || nodes.empty() || nodes.front().kind != OpKind::kQuantizeStub ||
      !nodes.front().out_params) {
    throw GraphError("input_params: graph has no quantize stub");
  }
  return *nodes.front().out_params;
}

std::size_t LayerGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes) {
    if (node.quantized) {
      n += static_cast<std::size_t>(node.quantized->weight.size()) + node.quantized->bias.size();
    } else {
      n += static_cast<std::size_t>(node.weight.size() + node.bias.size());
    }
    if (node.bn) n += static_cast<std::size_t>(node.bn->gamma.size() * 4);
  }
  return n;
}

namespace {

Index expected_inputs(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kConcat: return 2;
    default: return 1;
  }
}

[[noreturn]] void invalid(const Node& n, const std::string& what) {
  throw GraphError("node " + std::to_string(n.id) + " (" + op_name(n.kind) + "): " + what);
}

void validate_mode(const LayerGraph& g, const Node& n) {
  const bool fp32 = g.mode == NumericMode::kFloat32;
  const bool int8 = g.mode == NumericMode::kInt8;
  switch (n.kind) {
    case OpKind::kQuantizeStub:
    case OpKind::kDequantizeStub:
      if (!int8) invalid(n, "stubs only appear in int8 graphs");
      break;
    case OpKind::kFakeQuant:
      if (g.mode != NumericMode::kFakeQuant) invalid(n, "fake-quant node outside a fake-quant graph");
      if (!n.observer || *n.observer < 0 || *n.observer >= static_cast<int>(g.observers.size())) {
        invalid(n, "fake-quant node without a valid observer");
      }
      break;
    case OpKind::kBatchNorm:
    case OpKind::kFusedConvBnRelu:
      if (int8) invalid(n, "batch norm must be folded before conversion");
      if (!n.bn) invalid(n, "missing batch-norm parameters");
      break;
    default: break;
  }
  if (n.has_weights()) {
    if (int8) {
      if (!n.quantized) invalid(n, "int8 graph node without quantized weights");
      if (!n.out_params) invalid(n, "int8 graph node without output params");
    } else if (n.weight.empty()) {
      invalid(n, "missing weights");
    }
  }
  if (int8 && !n.out_params && n.kind != OpKind::kDequantizeStub) invalid(n, "int8 node without output params");
  if (fp32 && n.observer) invalid(n, "fp32 graph node with an observer");
}

}  // namespace

void validate(const LayerGraph& g) {
  std::vector<int> uses(g.nodes.size(), 0);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    if (n.id != static_cast<int>(i)) invalid(n, "ids must equal positions");
    if (static_cast<Index>(n.inputs.size()) != expected_inputs(n.kind)) {
      invalid(n, "expected " + std::to_string(expected_inputs(n.kind)) + " inputs");
    }
    for (int in : n.inputs) {
      if (in < kGraphInput || in >= n.id) invalid(n, "input " + std::to_string(in) + " is not an earlier node");
      if (in >= 0) ++uses[static_cast<std::size_t>(in)];
    }
    validate_mode(g, n);
  }
  for (std::size_t i = 0; i + 1 < g.nodes.size(); ++i) {
    if (uses[i] == 0) invalid(g.nodes[i], "output is never consumed (graphs have exactly one output)");
  }
  if (g.mode == NumericMode::kInt8 && !g.nodes.empty()) {
    if (g.nodes.front().kind != OpKind::kQuantizeStub) throw GraphError("int8 graph must start with a quantize stub");
    if (g.nodes.back().kind != OpKind::kDequantizeStub) throw GraphError("int8 graph must end with a dequantize stub");
  }
}

std::vector<std::vector<int>> consumers(const LayerGraph& g) {
  std::vector<std::vector<int>> out(g.nodes.size());
  for (const auto& n : g.nodes) {
    for (int in : n.inputs) {
      if (in >= 0) out[static_cast<std::size_t>(in)].push_back(n.id);
    }
  }
  return out;
}

std::vector<Shape> infer_shapes(const LayerGraph& g, Index batch) {
  std::vector<Shape> shapes;
  shapes.reserve(g.nodes.size());
  const Shape in_shape = g.input.batch_shape(batch);
  auto input_of = [&](const Node& n, std::size_t k) -> const Shape& {
    const int id = n.inputs.at(k);
    return id == kGraphInput ? in_shape : shapes[static_cast<std::size_t>(id)];
  };
  for (const auto& n : g.nodes) {
    const Shape& x = input_of(n, 0);
    switch (n.kind) {
      case OpKind::kConv:
      case OpKind::kFusedConvRelu:
      case OpKind::kFusedConvBnRelu: {
        const Shape& w = n.quantized ? n.quantized->weight.shape() : n.weight.shape();
        const auto geo = detail::conv_geometry(x, w, n.conv);
        shapes.push_back(Shape{geo.batch, geo.out_c, geo.out_h, geo.out_w});
        break;
      }
      case OpKind::kLinear: {
        const Shape& w = n.quantized ? n.quantized->weight.shape() : n.weight.shape();
        if (w.rank() != 2 || detail::features_of(x) != w[1]) invalid(n, "feature count mismatch");
        shapes.push_back(Shape{x[0], w[0]});
        break;
      }
      case OpKind::kMaxPool:
        detail::require_rank(x, 4, "maxpool");
        shapes.push_back(Shape{x[0], x[1], pool_out_dim(x[2], n.pool), pool_out_dim(x[3], n.pool)});
        break;
      case OpKind::kGlobalAvgPool:
        detail::require_rank(x, 4, "gavgpool");
        shapes.push_back(Shape{x[0], x[1], 1, 1});
        break;
      case OpKind::kAdd:
        if (input_of(n, 1) != x) invalid(n, "operand shapes differ");
        shapes.push_back(x);
        break;
      case OpKind::kConcat: {
        const Shape& y = input_of(n, 1);
        if (x.rank() != 4 || y.rank() != 4 || x[0] != y[0] || x[2] != y[2] || x[3] != y[3]) {
          invalid(n, "operands differ outside the channel axis");
        }
        shapes.push_back(Shape{x[0], x[1] + y[1], x[2], x[3]});
        break;
      }
      default: shapes.push_back(x); break;
    }
  }
  return shapes;
}

FloatTensor fake_quantize_weight(const FloatTensor& w) {
  const Index out_c = w.dim(0);
  FloatTensor y(w.shape());
  const auto src = w.matrix(out_c);
  auto dst = y.matrix(out_c);
  for (Index c = 0; c < out_c; ++c) {
    const QuantParams p = compute_qparams({src.row(c).minCoeff(), src.row(c).maxCoeff()}, kInt8Min, kInt8Max, true);
    for (Index k = 0; k < src.cols(); ++k) dst(c, k) = static_cast<float>(fake_quantize(src(c, k), p));
  }
  return y;
}

namespace {

FloatTensor fake_quantize_activation(const FloatTensor& x, const QuantParams& p) {
  if (!x.array().isFinite().all()) throw InputError("fake_quant: non-finite activation");
  FloatTensor y(x.shape());
  const double inv = 1.0 / p.scale;
  const double lo = p.qmin, hi = p.qmax;
  const float* src = x.data();
  float* dst = y.data();
  for (Index i = 0; i < x.size(); ++i) {
    const double q = std::clamp(round_half_even(src[i] * inv + p.zero_point), lo, hi);
    dst[i] = static_cast<float>(p.scale * (q - p.zero_point));
  }
  return y;
}

const FloatTensor& node_input(const std::vector<FloatTensor>& values, const FloatTensor& x, int id) {
  return id == kGraphInput ? x : values[static_cast<std::size_t>(id)];
}

}  // namespace

FloatTensor forward_float(const LayerGraph& g, const FloatTensor& x, bool training, Trace* trace) {
  if (g.mode == NumericMode::kInt8) throw GraphError("forward_float: int8 graph");
  if (g.nodes.empty()) throw GraphError("forward: empty graph");
  if (x.shape().rank() != 4 || x.shape() != g.input.batch_shape(x.dim(0))) {
    throw ShapeError("forward: input " + x.shape().to_string() + " does not match the graph input");
  }
  const bool fq = g.mode == NumericMode::kFakeQuant;
  const std::size_t count = g.nodes.size();
  std::vector<FloatTensor> values(count);
  if (trace) {
    trace->input = x;
    trace->pre_activation.assign(count, {});
    trace->normalized.assign(count, {});
    trace->batch_stats.assign(count, {});
    trace->effective_weight.assign(count, {});
    trace->fq_params.assign(count, {});
    trace->observers = g.observers;
  }

  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = g.nodes[i];
    const FloatTensor& a = node_input(values, x, n.inputs.front());
    FloatTensor out;
    switch (n.kind) {
      case OpKind::kConv:
      case OpKind::kFusedConvRelu:
      case OpKind::kFusedConvBnRelu: {
        FloatTensor w = fq ? fake_quantize_weight(n.weight) : FloatTensor{};
        const FloatTensor& wu = fq ? w : n.weight;
        FloatTensor z = conv2d(a, wu, n.bias, n.conv);
        if (n.kind == OpKind::kConv) {
          out = std::move(z);
        } else if (n.kind == OpKind::kFusedConvRelu) {
          out = relu(z);
          if (trace) trace->pre_activation[i] = std::move(z);
        } else {
          const auto& bn = *n.bn;
          FloatTensor normed;
          if (training) {
            auto st = batch_statistics(z, bn.eps);
            normed = batchnorm_train(z, bn.gamma, bn.beta, st);
            if (trace) trace->batch_stats[i] = std::move(st);
          } else {
            normed = batchnorm_inference(z, bn.gamma, bn.beta, bn.mean, bn.var, bn.eps);
          }
          out = relu(normed);
          if (trace) {
            trace->pre_activation[i] = std::move(z);
            trace->normalized[i] = std::move(normed);
          }
        }
        if (trace && fq) trace->effective_weight[i] = std::move(w);
        break;
      }
      case OpKind::kLinear: {
        FloatTensor w = fq ? fake_quantize_weight(n.weight) : FloatTensor{};
        out = linear(a, fq ? w : n.weight, n.bias);
        if (trace && fq) trace->effective_weight[i] = std::move(w);
        break;
      }
      case OpKind::kRelu: out = relu(a); break;
      case OpKind::kAdd: out = add(a, node_input(values, x, n.inputs[1])); break;
      case OpKind::kConcat: out = concat_channels(a, node_input(values, x, n.inputs[1])); break;
      case OpKind::kMaxPool: out = maxpool2d(a, n.pool); break;
      case OpKind::kGlobalAvgPool: out = global_avgpool(a); break;
      case OpKind::kBatchNorm: {
        const auto& bn = *n.bn;
        if (training) {
          auto st = batch_statistics(a, bn.eps);
          out = batchnorm_train(a, bn.gamma, bn.beta, st);
          if (trace) trace->batch_stats[i] = std::move(st);
        } else {
          out = batchnorm_inference(a, bn.gamma, bn.beta, bn.mean, bn.var, bn.eps);
        }
        break;
      }
      case OpKind::kFakeQuant: {
        const auto k = static_cast<std::size_t>(*n.observer);
        QuantParams p;
        if (training && trace) {
          trace->observers[k].observe(a);
          p = trace->observers[k].finalize_one();
        } else if (training) {
          MinMaxObserver obs = g.observers[k];
          obs.observe(a);
          p = obs.finalize_one();
        } else {
          p = g.observers[k].finalize_one();
        }
        out = fake_quantize_activation(a, p);
        if (trace) trace->fq_params[i] = p;
        break;
      }
      case OpKind::kQuantizeStub:
      case OpKind::kDequantizeStub: invalid(n, "stub in a float graph");
    }
    values[i] = std::move(out);
  }
  FloatTensor result = values.back();
  if (trace) trace->outputs = std::move(values);
  return result;
}

void commit_training_state(LayerGraph& g, const Trace& trace) {
  if (trace.outputs.size() != g.nodes.size()) throw GraphError("commit_training_state: trace does not match graph");
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    Node& n = g.nodes[i];
    if (!n.bn || trace.batch_stats[i].count == 0) continue;
    auto& bn = *n.bn;
    const auto& st = trace.batch_stats[i];
    // Running variance uses the unbiased estimate.
    const double m = static_cast<double>(st.count);
    const float unbias = m > 1 ? static_cast<float>(m / (m - 1)) : 1.0f;
    bn.mean.array() = (1 - bn.momentum) * bn.mean.array() + bn.momentum * st.mean;
    bn.var.array() = (1 - bn.momentum) * bn.var.array() + bn.momentum * unbias * st.var;
  }
  g.observers = trace.observers;
}

namespace {

using Value = std::variant<FloatTensor, QuantTensor>;

const QuantTensor& quant_input(const std::vector<Value>& values, const Node& n, std::size_t k) {
  const int id = n.inputs.at(k);
  if (id == kGraphInput) invalid(n, "int8 nodes cannot read the float graph input");
  const auto* q = std::get_if<QuantTensor>(&values[static_cast<std::size_t>(id)]);
  if (!q) invalid(n, "expected an int8 input");
  return *q;
}

FloatTensor forward_int8(const LayerGraph& g, const FloatTensor& x) {
  if (g.nodes.empty()) throw GraphError("forward: empty graph");
  if (x.shape().rank() != 4 || x.shape() != g.input.batch_shape(x.dim(0))) {
    throw ShapeError("forward: input " + x.shape().to_string() + " does not match the graph input");
  }
  std::vector<Value> values(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    switch (n.kind) {
      case OpKind::kQuantizeStub:
        if (n.inputs.front() != kGraphInput) invalid(n, "quantize stub must read the graph input");
        values[i] = quantize_tensor(x, *n.out_params);
        break;
      case OpKind::kDequantizeStub: values[i] = dequantize_tensor(quant_input(values, n, 0)); break;
      case OpKind::kConv:
      case OpKind::kFusedConvRelu: {
        const auto& q = *n.quantized;
        const QuantTensor& a = quant_input(values, n, 0);
        const bool relu = n.kind == OpKind::kFusedConvRelu;
        values[i] = q.packed.words.empty() ? qconv2d(a, q.weight, q.bias, n.conv, q.requant, relu)
                                           : qconv2d(a, q.weight, q.packed, q.bias, n.conv, q.requant, relu);
        break;
      }
      case OpKind::kLinear: {
        const auto& q = *n.quantized;
        values[i] = qlinear(quant_input(values, n, 0), q.weight, q.bias, q.requant);
        break;
      }
      case OpKind::kRelu: values[i] = qrelu(quant_input(values, n, 0), *n.out_params); break;
      case OpKind::kAdd: values[i] = qadd(quant_input(values, n, 0), quant_input(values, n, 1), *n.out_params); break;
      case OpKind::kConcat:
        values[i] = qconcat(quant_input(values, n, 0), quant_input(values, n, 1), *n.out_params);
        break;
      case OpKind::kMaxPool: values[i] = maxpool2d(quant_input(values, n, 0), n.pool); break;
      case OpKind::kGlobalAvgPool: values[i] = global_avgpool(quant_input(values, n, 0), *n.out_params); break;
      default: invalid(n, "not executable in int8 mode");
    }
    // Release operands that have no later reader.
    for (int in : n.inputs) {
      if (in < 0) continue;
      bool later = false;
      for (std::size_t j = i + 1; j < g.nodes.size() && !later; ++j) {
        for (int other : g.nodes[j].inputs) later = later || other == in;
      }
      if (!later) values[static_cast<std::size_t>(in)] = FloatTensor{};
    }
  }
  const auto* out = std::get_if<FloatTensor>(&values.back());
  if (!out) throw GraphError("int8 graph output is not dequantized");
  return *out;
}

}  // namespace

FloatTensor forward(const LayerGraph& g, const FloatTensor& x) {
  if (g.mode == NumericMode::kInt8) return forward_int8(g, x);
  return forward_float(g, x, false, nullptr);
}

}  // namespace qwid
