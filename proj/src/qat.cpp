// SPDX-License-Identifier: Apache-2.0
#include "qwid/qat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qwid/evaluation.hpp"
#include "qwid/random.hpp"

namespace qwid {

void QatConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ArgumentError("learning rate must be finite and non-negative");
  if (epochs < 1) throw ArgumentError("epochs must be at least 1");
  if (batch < 1) throw ArgumentError("batch size must be at least 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ArgumentError("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ArgumentError("Adam epsilon must be positive");
}

// ---------------------------------------------------------------------------
// Parameters and optimizer state
// ---------------------------------------------------------------------------

FloatTensor& parameter(LayerGraph& g, const ParamSlot& slot) {
  Node& n = g.nodes.at(static_cast<std::size_t>(slot.node));
  switch (slot.role) {
    case ParamRole::kWeight: return n.weight;
    case ParamRole::kBias: return n.bias;
    case ParamRole::kGamma: return n.bn.value().gamma;
    case ParamRole::kBeta: return n.bn.value().beta;
  }
  throw GraphError("parameter: bad role");
}

const FloatTensor& parameter(const LayerGraph& g, const ParamSlot& slot) {
  return parameter(const_cast<LayerGraph&>(g), slot);
}

TrainState TrainState::for_graph(const LayerGraph& g, std::uint64_t seed) {
  if (g.mode == NumericMode::kInt8) throw GraphError("training requires an fp32 or fake-quant graph");
  TrainState st;
  st.seed = seed;
  auto add = [&](const Node& n, ParamRole role, const FloatTensor& p) {
    st.params.push_back({n.id, role, FloatTensor(p.shape()), FloatTensor(p.shape()), FloatTensor(p.shape())});
  };
  for (const auto& n : g.nodes) {
    if (n.has_weights()) {
      add(n, ParamRole::kWeight, n.weight);
      add(n, ParamRole::kBias, n.bias);
    }
    if (n.bn) {
      add(n, ParamRole::kGamma, n.bn->gamma);
      add(n, ParamRole::kBeta, n.bn->beta);
    }
  }
  return st;
}

void TrainState::zero_grad() {
  for (auto& p : params) p.grad.array().setZero();
}

ParamSlot* TrainState::find(int node, ParamRole role) {
  for (auto& p : params) {
    if (p.node == node && p.role == role) return &p;
  }
  return nullptr;
}

void adam_step(TrainState& state, LayerGraph& g, const QatConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const float lr = static_cast<float>(cfg.lr), eps = static_cast<float>(cfg.eps);
  for (auto& slot : state.params) {
    auto& theta = parameter(g, slot).array();
    const auto& grad = slot.grad.array();
    slot.m.array() = b1 * slot.m.array() + (1 - b1) * grad;
    slot.v.array() = b2 * slot.v.array() + (1 - b2) * grad.square();
    theta -= lr * (slot.m.array() * c1) / ((slot.v.array() * c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

/// Loss and gradient for one row of logits; the gradient is scaled by `k`.
double softmax_xent_row(const float* logits, Index classes, int label, float k, float* grad) {
  if (label < 0 || label >= classes) {
    throw ArgumentError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (Index c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
  double sum = 0;
  for (Index c = 0; c < classes; ++c) sum += std::exp(logits[c] - mx);
  for (Index c = 0; c < classes; ++c) {
    const double p = std::exp(logits[c] - mx) / sum;
    grad[c] = static_cast<float>(k * (p - (c == label ? 1.0 : 0.0)));
  }
  return std::log(sum) - (logits[label] - mx);
}

}  // namespace

Loss cross_entropy(const FloatTensor& logits, int label) {
  Loss out{0, FloatTensor(logits.shape())};
  out.value = softmax_xent_row(logits.data(), logits.size(), label, 1.0f, out.grad.data());
  return out;
}

Loss cross_entropy(const FloatTensor& logits, const std::vector<int>& labels) {
  if (logits.shape().rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("cross_entropy: logits " + logits.shape().to_string() + " vs " + std::to_string(labels.size()) + " labels");
  }
  const Index batch = logits.dim(0), classes = logits.dim(1);
  Loss out{0, FloatTensor(logits.shape())};
  const float k = 1.0f / static_cast<float>(batch);
  for (Index n = 0; n < batch; ++n) {
    out.value += softmax_xent_row(logits.data() + n * classes, classes, labels[static_cast<std::size_t>(n)], k,
                                  out.grad.data() + n * classes);
  }
  out.value /= static_cast<double>(batch);
  return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

FloatTensor fake_quant_backward(const FloatTensor& gy, const FloatTensor& x, const QuantParams& p) {
  if (gy.shape() != x.shape()) throw ShapeError("fake_quant_backward: gradient and input shapes differ");
  FloatTensor gx(x.shape());
  for (Index i = 0; i < x.size(); ++i) gx[i] = in_unsaturated_region(x[i], p) ? gy[i] : 0.0f;
  return gx;
}

namespace {

void accumulate(FloatTensor& into, FloatTensor g) {
  if (into.empty()) {
    into = std::move(g);
  } else {
    into.array() += g.array();
  }
}

void add_param_grad(TrainState& st, int node, ParamRole role, const FloatTensor& g) {
  ParamSlot* slot = st.find(node, role);
  if (!slot) throw GraphError("backward: node " + std::to_string(node) + " has no optimizer slot");
  slot->grad.array() += g.array();
}

FloatTensor run_backward(const LayerGraph& g, const Trace& t, const FloatTensor& dlogits, TrainState& st) {
  const std::size_t count = g.nodes.size();
  if (t.outputs.size() != count || t.input.empty()) throw GraphError("backward: no recorded activations for this graph");
  if (dlogits.shape() != t.outputs.back().shape()) throw ShapeError("backward: loss gradient shape mismatch");
  const bool fq = g.mode == NumericMode::kFakeQuant;
  std::vector<FloatTensor> grads(count);
  grads.back() = dlogits;
  FloatTensor dinput;
  auto value = [&](int id) -> const FloatTensor& { return id == kGraphInput ? t.input : t.outputs[static_cast<std::size_t>(id)]; };
  auto send = [&](int id, FloatTensor gr) { accumulate(id == kGraphInput ? dinput : grads[static_cast<std::size_t>(id)], std::move(gr)); };

  for (std::size_t i = count; i-- > 0;) {
    const Node& n = g.nodes[i];
    if (grads[i].empty()) continue;
    const FloatTensor dy = std::move(grads[i]);
    const int in0 = n.inputs.front();
    const FloatTensor& x = value(in0);
    switch (n.kind) {
      case OpKind::kConv:
      case OpKind::kFusedConvRelu:
      case OpKind::kFusedConvBnRelu: {
        FloatTensor dz;
        if (n.kind == OpKind::kConv) {
          dz = dy;
        } else if (n.kind == OpKind::kFusedConvRelu) {
          dz = relu_backward(t.pre_activation[i], dy);
        } else {
          if (t.batch_stats[i].count == 0) throw GraphError("backward: BN statistics were not recorded (eval-mode forward)");
          auto bg = batchnorm_train_backward(t.pre_activation[i], n.bn->gamma, t.batch_stats[i],
                                             relu_backward(t.normalized[i], dy));
          add_param_grad(st, n.id, ParamRole::kGamma, bg.dgamma);
          add_param_grad(st, n.id, ParamRole::kBeta, bg.dbeta);
          dz = std::move(bg.dx);
        }
        const FloatTensor& w = fq ? t.effective_weight[i] : n.weight;
        auto cg = conv2d_backward(x, w, dz, n.conv);
        add_param_grad(st, n.id, ParamRole::kWeight, cg.dw);
        add_param_grad(st, n.id, ParamRole::kBias, cg.db);
        send(in0, std::move(cg.dx));
        break;
      }
      case OpKind::kLinear: {
        auto lg = linear_backward(x, fq ? t.effective_weight[i] : n.weight, dy);
        add_param_grad(st, n.id, ParamRole::kWeight, lg.dw);
        add_param_grad(st, n.id, ParamRole::kBias, lg.db);
        send(in0, std::move(lg.dx));
        break;
      }
      case OpKind::kRelu: send(in0, relu_backward(x, dy)); break;
      case OpKind::kAdd:
        send(in0, dy);
        send(n.inputs[1], dy);
        break;
      case OpKind::kConcat: {
        auto [da, db] = concat_channels_backward(x.shape(), value(n.inputs[1]).shape(), dy);
        send(in0, std::move(da));
        send(n.inputs[1], std::move(db));
        break;
      }
      case OpKind::kMaxPool: send(in0, maxpool2d_backward(x, dy, n.pool)); break;
      case OpKind::kGlobalAvgPool: send(in0, global_avgpool_backward(x.shape(), dy)); break;
      case OpKind::kBatchNorm: {
        if (t.batch_stats[i].count == 0) throw GraphError("backward: BN statistics were not recorded (eval-mode forward)");
        auto bg = batchnorm_train_backward(x, n.bn->gamma, t.batch_stats[i], dy);
        add_param_grad(st, n.id, ParamRole::kGamma, bg.dgamma);
        add_param_grad(st, n.id, ParamRole::kBeta, bg.dbeta);
        send(in0, std::move(bg.dx));
        break;
      }
      case OpKind::kFakeQuant: send(in0, fake_quant_backward(dy, x, t.fq_params[i])); break;
      default: throw GraphError(std::string("backward: unsupported node kind ") + op_name(n.kind));
    }
  }
  return dinput;
}

}  // namespace

void backward(const LayerGraph& g, const Trace& trace, const FloatTensor& dlogits, TrainState& state) {
  run_backward(g, trace, dlogits, state);
}

FloatTensor backward_input(const LayerGraph& g, const Trace& trace, const FloatTensor& dlogits, TrainState& state) {
  FloatTensor dx = run_backward(g, trace, dlogits, state);
  return dx.empty() ? FloatTensor(trace.input.shape()) : dx;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(LayerGraph g, const Dataset& train_set, const Dataset& val_set, const QatConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  validate(g);
  train_set.validate();
  val_set.validate();
  if (train_set.empty()) throw DatasetError("train: training split is empty");
  if (val_set.empty()) throw DatasetError("train: validation split is empty");

  TrainResult result;
  result.state = TrainState::for_graph(g, cfg.seed);
  TrainState& st = result.state;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b0 + batch)));
      std::vector<int> labels;
      for (auto k : idx) labels.push_back(train_set.labels[k]);
      Trace trace;
      const FloatTensor logits = forward_float(g, make_batch(train_set, idx), true, &trace);
      const Loss loss = cross_entropy(logits, labels);
      if (!std::isfinite(loss.value)) throw Error("train: loss became non-finite at epoch " + std::to_string(epoch));
      loss_sum += loss.value * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        correct += argmax_row(logits, static_cast<Index>(r)) == labels[r] ? 1 : 0;
      }
      st.zero_grad();
      backward(g, trace, loss.grad, st);
      adam_step(st, g, cfg);
      commit_training_state(g, trace);
    }
    st.epoch = epoch;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    rec.val_acc = accuracy(g, val_set);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.graph = std::move(g);
  return result;
}

LayerGraph prepare_qat(const LayerGraph& fp32) { return insert_fake_quant(fuse(fold_batchnorm(fp32))); }

}  // namespace qwid
