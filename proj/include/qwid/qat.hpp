// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "qwid/data.hpp"
#include "qwid/graph.hpp"

namespace qwid {

struct QatConfig {
  double lr = 1e-4;
  int epochs = 30;
  Index batch = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  /// Throws ArgumentError.
  void validate() const;
};

enum class ParamRole : std::uint8_t { kWeight, kBias, kGamma, kBeta };

/// One trainable tensor of the graph plus its gradient and Adam moments.
struct ParamSlot {
  int node = 0;
  ParamRole role = ParamRole::kWeight;
  FloatTensor grad;
  FloatTensor m;
  FloatTensor v;
};

/// Optimizer state. The parameters themselves live in the graph nodes.
struct TrainState {
  std::vector<ParamSlot> params;
  std::uint64_t step = 0;
  int epoch = 0;
  std::uint64_t seed = 0;

  static TrainState for_graph(const LayerGraph& g, std::uint64_t seed = 0);
  void zero_grad();
  ParamSlot* find(int node, ParamRole role);
};

FloatTensor& parameter(LayerGraph& g, const ParamSlot& slot);
const FloatTensor& parameter(const LayerGraph& g, const ParamSlot& slot);

struct Loss {
  double value = 0;
  FloatTensor grad;  // d value / d logits
};

/// -log softmax(logits)[label] and its gradient softmax - onehot.
Loss cross_entropy(const FloatTensor& logits, int label);
/// Mean over a (B, classes) batch; the gradient is scaled by 1 / B.
Loss cross_entropy(const FloatTensor& logits, const std::vector<int>& labels);

/// Clipped straight-through estimator: g_y where x quantizes strictly
/// inside (qmin, qmax), else 0.
FloatTensor fake_quant_backward(const FloatTensor& gy, const FloatTensor& x, const QuantParams& p);

/// Reverse pass over a recorded training forward. Parameter gradients are
/// added to `state`. Weight fake quantization passes gradients straight
/// through to the float weights.
void backward(const LayerGraph& g, const Trace& trace, const FloatTensor& dlogits, TrainState& state);

/// Gradient with respect to the graph input for the same pass (used by
/// gradient checks).
FloatTensor backward_input(const LayerGraph& g, const Trace& trace, const FloatTensor& dlogits, TrainState& state);

void adam_step(TrainState& state, LayerGraph& g, const QatConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0;
  double val_acc = 0;
  double loss = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  LayerGraph graph;
  TrainState state;
  std::vector<EpochRecord> history;
};

/// Minibatch training of an fp32 or fake-quant graph. Observers and BN
/// running statistics update every step; the sample order is reshuffled
/// each epoch from `cfg.seed`.
TrainResult train(LayerGraph g, const Dataset& train_set, const Dataset& val_set, const QatConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Full QAT preparation of a trained fp32 graph: fold BN, fuse, insert fake-quant.
LayerGraph prepare_qat(const LayerGraph& fp32);

}  // namespace qwid
