// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "graphs.hpp"
#include "layer_gradchecks.hpp"
#include "oracle.hpp"
#include "qwid/evaluation.hpp"
#include "qwid/qat.hpp"
#include "ste_check.hpp"

using namespace qwid;
using testgraph::Builder;

TEST(CrossEntropy, UniformLogits) {
  const Loss l = cross_entropy(FloatTensor(Shape{1, 9}), 3);
  EXPECT_NEAR(l.value, std::log(9.0), 1e-6);
  double sum = 0;
  for (Index i = 0; i < 9; ++i) sum += l.grad[i];
  EXPECT_NEAR(sum, 0, 1e-7);
  EXPECT_NEAR(l.grad[3], 1.0 / 9 - 1, 1e-6);
}

TEST(CrossEntropy, LargeMarginGoesToZero) {
  FloatTensor logits(Shape{1, 9});
  logits[2] = 80.0f;
  EXPECT_LT(cross_entropy(logits, 2).value, 1e-12);
  logits[2] = -80.0f;
  EXPECT_TRUE(std::isfinite(cross_entropy(logits, 2).value));
}

TEST(CrossEntropy, BatchGradientRowsSumToZero) {
  Rng rng(70);
  const FloatTensor logits = oracle::random_tensor(rng, Shape{5, 9}, -4, 4);
  const Loss l = cross_entropy(logits, std::vector<int>{0, 8, 3, 3, 1});
  for (Index r = 0; r < 5; ++r) {
    double s = 0;
    for (Index c = 0; c < 9; ++c) s += l.grad[r * 9 + c];
    EXPECT_NEAR(s, 0, 1e-7);
  }
  EXPECT_THROW(cross_entropy(logits, std::vector<int>{0, 9, 0, 0, 0}), ArgumentError);
  EXPECT_THROW(cross_entropy(logits, std::vector<int>{0}), ShapeError);
}

TEST(CrossEntropy, MatchesDoubleFiniteDifferences) {
  Rng rng(71);
  for (int t = 0; t < 5; ++t) EXPECT_LE(gradcheck::check_cross_entropy(rng), 1e-4);
}

TEST(FakeQuantBackward, StraightThroughCases) {
  const QuantParams p{0.1, 0};
  const FloatTensor x(Shape{3}, {0.5f, 1000.0f, -12.75f});
  const FloatTensor g = fake_quant_backward(FloatTensor(Shape{3}, {2.0f, 2.0f, 2.0f}), x, p);
  EXPECT_EQ(g[0], 2.0f);
  EXPECT_EQ(g[1], 0.0f);
  EXPECT_EQ(g[2], 0.0f);
}

TEST(FakeQuantBackward, MatchesAverageSlope) {
  const auto r = stecheck::run(72, 1000);
  EXPECT_LE(r.worst_interior, 0.10);
  EXPECT_EQ(r.worst_saturated, 0.0);
}

namespace {

/// Residual graph touching every trainable kind plus pooling and concat.
LayerGraph small_net(std::uint64_t seed) {
  Builder b(InputSpec{3, 8, 8}, seed);
  const int c0 = b.conv(kGraphInput, 3, 4, 3, 1, 1);
  const int n0 = b.bn(c0, 4);
  const int r0 = b.relu(n0);
  const int c1 = b.conv(r0, 4, 4, 3, 1, 1);
  const int r1 = b.relu(c1);
  const int a = b.add(r1, r0);
  const int m = b.maxpool(a);
  const int c2 = b.conv(m, 4, 2, 1);
  const int cat = b.concat(m, c2);
  const int p = b.gavgpool(cat);
  b.linear(p, 6, 9);
  return b.build();
}

double slot_loss(const LayerGraph& g, const FloatTensor& x, const std::vector<int>& labels) {
  return cross_entropy(forward_float(g, x, true, nullptr), labels).value;
}

}  // namespace

TEST(Backward, GraphGradientsMatchFiniteDifferences) {
  for (const bool fused : {false, true}) {
    LayerGraph g = small_net(73);
    if (fused) g = fuse(g);
    Rng rng(74);
    const FloatTensor x = oracle::random_tensor(rng, Shape{4, 3, 8, 8}, -1, 1);
    const std::vector<int> labels{1, 4, 8, 0};
    Trace trace;
    const Loss l = cross_entropy(forward_float(g, x, true, &trace), labels);
    TrainState state = TrainState::for_graph(g);
    state.zero_grad();
    backward(g, trace, l.grad, state);

    for (const auto& slot : state.params) {
      FloatTensor& theta = parameter(g, slot);
      double num = 0, den = 0;
      for (Index i = 0; i < theta.size(); ++i) {
        const float keep = theta[i];
        theta[i] = keep + 1e-3f;
        const double up = slot_loss(g, x, labels);
        theta[i] = keep - 1e-3f;
        const double down = slot_loss(g, x, labels);
        theta[i] = keep;
        const double fd = (up - down) / (static_cast<double>(keep + 1e-3f) - static_cast<double>(keep - 1e-3f));
        num += (fd - slot.grad[i]) * (fd - slot.grad[i]);
        den += fd * fd;
      }
      // Float losses near 2 carry ~1e-4 of rounding into each difference
      // quotient; that noise sets the absolute floor.
      const double noise = 2e-4 * std::sqrt(static_cast<double>(theta.size()));
      EXPECT_LE(std::sqrt(num), 2e-2 * std::sqrt(den) + noise) << "node " << slot.node << " fused " << fused;
    }
  }
}

TEST(Backward, InputGradient) {
  const LayerGraph g = small_net(75);
  Rng rng(76);
  FloatTensor x = oracle::random_tensor(rng, Shape{2, 3, 8, 8}, -1, 1);
  const std::vector<int> labels{2, 5};
  Trace trace;
  const Loss l = cross_entropy(forward_float(g, x, true, &trace), labels);
  TrainState state = TrainState::for_graph(g);
  const FloatTensor dx = backward_input(g, trace, l.grad, state);
  double num = 0, den = 0;
  for (Index i = 0; i < x.size(); i += 7) {
    const float keep = x[i];
    x[i] = keep + 1e-3f;
    const double up = slot_loss(g, x, labels);
    x[i] = keep - 1e-3f;
    const double down = slot_loss(g, x, labels);
    x[i] = keep;
    const double fd = (up - down) / 2e-3;
    num += (fd - dx[i]) * (fd - dx[i]);
    den += fd * fd;
  }
  EXPECT_LE(std::sqrt(num), 2e-2 * std::sqrt(den) + 1e-5);
}

TEST(Backward, ReluAndAddRouting) {
  EXPECT_EQ(relu_backward(FloatTensor(Shape{2}, {-1, 1}), FloatTensor(Shape{2}, {5, 5})), FloatTensor(Shape{2}, {0, 5}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  LayerGraph g = small_net(77);
  TrainState state = TrainState::for_graph(g);
  const LayerGraph before = g;
  for (auto& slot : state.params) slot.grad.array().setConstant(1.0f);
  QatConfig cfg;
  adam_step(state, g, cfg);
  for (const auto& slot : state.params) {
    const FloatTensor& a = parameter(before, slot);
    const FloatTensor& b = parameter(g, slot);
    for (Index i = 0; i < a.size(); ++i) EXPECT_NEAR(static_cast<double>(b[i]) - a[i], -1e-4, 2e-7);
  }
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  LayerGraph g = small_net(78);
  TrainState state = TrainState::for_graph(g);
  const LayerGraph before = g;
  state.zero_grad();
  adam_step(state, g, QatConfig{});
  EXPECT_EQ(g, before);
}

namespace {

DataSplit tiny_splits(std::uint64_t seed) { return split(generate_synthetic(seed, 6, 16), seed); }

void expect_same_parameters(const LayerGraph& a, const LayerGraph& b) {
  const TrainState st = TrainState::for_graph(a);
  for (const auto& slot : st.params) EXPECT_EQ(parameter(a, slot), parameter(b, slot));
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParameters) {
  const DataSplit s = tiny_splits(79);
  const LayerGraph g = make_model(Arch::kTinyResNet, 79, InputSpec{3, 16, 16});
  QatConfig cfg;
  cfg.lr = 0;
  cfg.epochs = 1;
  const TrainResult r = train(g, s.train, s.val, cfg);
  expect_same_parameters(g, r.graph);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.history[0].loss));
}

TEST(Train, Deterministic) {
  const DataSplit s = tiny_splits(80);
  const LayerGraph g = make_model(Arch::kTinyInception, 80, InputSpec{3, 16, 16});
  QatConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.seed = 80;
  const TrainResult a = train(g, s.train, s.val, cfg);
  const TrainResult b = train(g, s.train, s.val, cfg);
  EXPECT_EQ(a.graph, b.graph);
  EXPECT_EQ(a.history, b.history);
  EXPECT_NE(a.graph, g);
}

TEST(Train, QatUpdatesObserversAndConverts) {
  const DataSplit s = tiny_splits(81);
  const LayerGraph g = prepare_qat(make_model(Arch::kTinyResNet, 81, InputSpec{3, 16, 16}));
  QatConfig cfg;
  cfg.epochs = 1;
  const TrainResult r = train(g, s.train, s.val, cfg);
  for (const auto& o : r.graph.observers) EXPECT_GT(o.count(), 0u);
  const LayerGraph q = convert(r.graph);
  EXPECT_EQ(predict(q, s.test).shape(), (Shape{static_cast<Index>(s.test.size()), 9}));
}

TEST(Train, RejectsBadConfig) {
  const DataSplit s = tiny_splits(82);
  const LayerGraph g = make_model(Arch::kTinyResNet, 82, InputSpec{3, 16, 16});
  QatConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train(g, s.train, s.val, cfg), ArgumentError);
  cfg = QatConfig{};
  cfg.lr = -1;
  EXPECT_THROW(train(g, s.train, s.val, cfg), ArgumentError);
  EXPECT_THROW(train(g, Dataset{}, s.val, QatConfig{}), DatasetError);
}
