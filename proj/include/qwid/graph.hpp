// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qwid/kernels.hpp"
#include "qwid/observer.hpp"
#include "qwid/qkernels.hpp"
#include "qwid/quant.hpp"
#include "qwid/tensor.hpp"

namespace qwid {

/// Byte values are part of the model file format; do not renumber.
enum class OpKind : std::uint8_t {
  kConv = 0,
  kLinear = 1,
  kRelu = 2,
  kAdd = 3,
  kMaxPool = 4,
  kGlobalAvgPool = 5,
  kBatchNorm = 6,
  kFusedConvRelu = 7,
  kFusedConvBnRelu = 8,
  kQuantizeStub = 9,
  kDequantizeStub = 10,
  kFakeQuant = 11,
  kConcat = 12,
};

enum class NumericMode : std::uint8_t { kFloat32 = 0, kInt8 = 1, kFakeQuant = 2 };

const char* op_name(OpKind kind);
const char* mode_name(NumericMode mode);

/// Input id that refers to the graph input rather than a node.
inline constexpr int kGraphInput = -1;

struct BatchNormParams {
  FloatTensor gamma;
  FloatTensor beta;
  FloatTensor mean;  // running statistics
  FloatTensor var;
  float eps = 1e-5f;
  float momentum = 0.1f;

  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

/// Integer parameters of a converted conv or linear node.
struct QuantizedLayer {
  QuantTensor weight;
  std::vector<std::int32_t> bias;
  RequantSpec requant;
  /// Derived from `weight` for the conv GEMM; not serialized.
  PackedConvWeights packed;

  friend bool operator==(const QuantizedLayer& a, const QuantizedLayer& b) {
    return a.weight == b.weight && a.bias == b.bias && a.requant == b.requant;
  }
};

struct Node {
  int id = 0;
  OpKind kind = OpKind::kRelu;
  std::vector<int> inputs;

  // float parameters (conv, linear and fused nodes)
  FloatTensor weight;
  FloatTensor bias;
  ConvSpec conv;
  PoolSpec pool;
  std::optional<BatchNormParams> bn;

  /// Index into LayerGraph::observers (fake-quant nodes).
  std::optional<int> observer;
  /// Output grid of the node in int8 mode.
  std::optional<QuantParams> out_params;
  std::optional<QuantizedLayer> quantized;

  bool has_conv() const noexcept {
    return kind == OpKind::kConv || kind == OpKind::kFusedConvRelu || kind == OpKind::kFusedConvBnRelu;
  }
  bool has_weights() const noexcept { return has_conv() || kind == OpKind::kLinear; }

  friend bool operator==(const Node&, const Node&) = default;
};

/// Channels, height and width of one input image.
struct InputSpec {
  Index channels = 3;
  Index height = 32;
  Index width = 32;

  Shape batch_shape(Index batch) const { return Shape{batch, channels, height, width}; }
  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

/// Nodes in topological order; the last node is the single output.
struct LayerGraph {
  NumericMode mode = NumericMode::kFloat32;
  InputSpec input;
  std::vector<Node> nodes;
  std::vector<MinMaxObserver> observers;

  bool empty() const noexcept { return nodes.empty(); }
  /// Parameters of the quantize stub; throws GraphError outside int8 mode.
  const QuantParams& input_params() const;
  std::size_t parameter_count() const;

  friend bool operator==(const LayerGraph&, const LayerGraph&) = default;
};

/// Throws GraphError on broken structure or mode-inconsistent parameters.
void validate(const LayerGraph& g);

/// Consumer lists per node; consumers of the graph input are not included.
std::vector<std::vector<int>> consumers(const LayerGraph& g);

/// Output shape of every node for a given batch size.
std::vector<Shape> infer_shapes(const LayerGraph& g, Index batch = 1);

/// Inference forward pass. Returns float logits in every mode.
///
/// fp32 graphs run BN with running statistics; fake-quant graphs apply the
/// observers' current parameters without updating them.
FloatTensor forward(const LayerGraph& g, const FloatTensor& x);

/// Values recorded by a training forward pass for the backward pass.
struct Trace {
  FloatTensor input;
  std::vector<FloatTensor> outputs;
  /// Conv output before BN / ReLU for fused nodes, before ReLU otherwise.
  std::vector<FloatTensor> pre_activation;
  /// BN output before ReLU (fused-conv-bn-relu only).
  std::vector<FloatTensor> normalized;
  std::vector<BatchStats<float>> batch_stats;
  /// Weights after fake quantization (fake-quant mode).
  std::vector<FloatTensor> effective_weight;
  /// Grid applied by each fake-quant node.
  std::vector<QuantParams> fq_params;
  /// Observer states after this pass; committed by the trainer.
  std::vector<MinMaxObserver> observers;
};

/// Forward pass over fp32 or fake-quant graphs with `training` controlling
/// BN (batch vs running statistics) and observer updates. Nothing in `g`
/// changes; running-stat and observer updates are left in the trace.
FloatTensor forward_float(const LayerGraph& g, const FloatTensor& x, bool training, Trace* trace);

/// Applies the running-stat and observer updates recorded in `trace`.
void commit_training_state(LayerGraph& g, const Trace& trace);

/// Per-channel symmetric fake quantization of a weight tensor.
FloatTensor fake_quantize_weight(const FloatTensor& w);

// ---- passes -------------------------------------------------------------

/// w' = w * g / sqrt(v + eps) per output channel, b' = beta + (b - mean) * g / sqrt(v + eps).
void fold_batchnorm(FloatTensor& w, FloatTensor& b, const BatchNormParams& bn);

/// Folds every BN that is the sole consumer of a conv into the conv;
/// fused-conv-bn-relu nodes become fused-conv-relu.
LayerGraph fold_batchnorm(const LayerGraph& g);

/// Merges conv -> relu and conv -> bn -> relu chains into fused nodes.
LayerGraph fuse(const LayerGraph& g);

/// Adds observer-backed fake-quant nodes on the graph input and after every
/// conv, linear, fused conv, add and concat. Requires a fused graph without BN.
LayerGraph insert_fake_quant(const LayerGraph& g);

/// fake-quant graph -> int8 graph using the observers' ranges.
LayerGraph convert(const LayerGraph& g);

/// Fills the derived packed weights of an int8 graph (after load).
void prepare_int8(LayerGraph& g);

/// Operation count for a batch of one image.
double count_ops(const LayerGraph& g);
/// Per-node operation counts for a batch of one image.
std::vector<double> node_ops(const LayerGraph& g);

/// Largest (inputs + output) activation size of any node for one image.
std::size_t memory_footprint(const LayerGraph& g);
/// Per-node activation bytes used by memory_footprint (0 for stubs).
std::vector<std::size_t> node_footprints(const LayerGraph& g);

// ---- toy architectures ----------------------------------------------------

enum class Arch { kTinyResNet, kTinyInception };

Arch parse_arch(const std::string& name);
const char* arch_name(Arch arch);

/// Randomly initialised fp32 model (He fan-in scaling) for 9 classes.
LayerGraph make_model(Arch arch, std::uint64_t seed, InputSpec input = {}, Index classes = 9);

}  // namespace qwid
