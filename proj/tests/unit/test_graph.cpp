// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "graphs.hpp"
#include "oracle.hpp"
#include "qwid/graph.hpp"

using namespace qwid;
using testgraph::Builder;

TEST(Graph, ValidateRejectsBrokenStructure) {
  Builder b(InputSpec{1, 4, 4});
  const int c = b.conv(kGraphInput, 1, 2, 3, 1, 1);
  b.relu(c);
  EXPECT_NO_THROW(b.build());

  LayerGraph g = b.graph();
  g.nodes[1].inputs = {5};
  EXPECT_THROW(validate(g), GraphError);

  g = b.graph();
  g.nodes[0].inputs = {0};
  EXPECT_THROW(validate(g), GraphError);

  g = b.graph();
  g.nodes[0].weight = FloatTensor{};
  EXPECT_THROW(validate(g), GraphError);

  g = b.graph();
  g.nodes[1].inputs = {0, 0};
  EXPECT_THROW(validate(g), GraphError);

  g = b.graph();
  g.nodes[0].weight = FloatTensor(Shape{2, 3, 3, 3});
  EXPECT_THROW(infer_shapes(g), ShapeError);
}

TEST(Graph, InferShapes) {
  Builder b(InputSpec{3, 8, 8});
  const int c = b.conv(kGraphInput, 3, 4, 3, 2, 1);
  const int p = b.maxpool(c);
  const int a = b.gavgpool(p);
  b.linear(a, 4, 9);
  const auto shapes = infer_shapes(b.build(), 5);
  EXPECT_EQ(shapes[0], (Shape{5, 4, 4, 4}));
  EXPECT_EQ(shapes[1], (Shape{5, 4, 2, 2}));
  EXPECT_EQ(shapes[2], (Shape{5, 4, 1, 1}));
  EXPECT_EQ(shapes[3], (Shape{5, 9}));
}

TEST(Graph, Consumers) {
  Builder b(InputSpec{1, 4, 4});
  const int c = b.conv(kGraphInput, 1, 1, 1);
  const int r = b.relu(c);
  b.add(c, r);
  const auto cons = consumers(b.build());
  EXPECT_EQ(cons[0], (std::vector<int>{1, 2}));
  EXPECT_EQ(cons[1], (std::vector<int>{2}));
  EXPECT_TRUE(cons[2].empty());
}

TEST(Graph, IdentityConvReluLeavesPositiveInput) {
  Builder b(InputSpec{2, 3, 3});
  const int c = b.conv(kGraphInput, 2, 2, 1);
  b.node(c).weight = FloatTensor(Shape{2, 2, 1, 1}, {1, 0, 0, 1});
  b.node(c).bias = FloatTensor(Shape{2});
  b.relu(c);
  Rng rng(50);
  const FloatTensor x = oracle::random_tensor(rng, Shape{1, 2, 3, 3}, 0.1, 2);
  EXPECT_EQ(forward(b.build(), x), x);
}

TEST(Graph, ZeroResidualBranchIsIdentity) {
  Builder b(InputSpec{2, 4, 4});
  const int c = b.conv(kGraphInput, 2, 2, 3, 1, 1);
  b.node(c).weight = FloatTensor(Shape{2, 2, 3, 3});
  b.node(c).bias = FloatTensor(Shape{2});
  const int r = b.relu(c);
  // The skip operand is the graph input, reached through an identity 1x1 conv.
  const int skip = b.conv(kGraphInput, 2, 2, 1);
  b.node(skip).weight = FloatTensor(Shape{2, 2, 1, 1}, {1, 0, 0, 1});
  b.node(skip).bias = FloatTensor(Shape{2});
  b.add(skip, r);
  Rng rng(51);
  const FloatTensor x = oracle::random_tensor(rng, Shape{3, 2, 4, 4}, -2, 2);
  EXPECT_EQ(forward(b.build(), x), x);
}

TEST(Graph, ForwardMatchesOracleComposition) {
  Builder b(InputSpec{3, 6, 6});
  const int c = b.conv(kGraphInput, 3, 4, 3, 1, 1);
  const int r = b.relu(c);
  const int a = b.gavgpool(r);
  b.linear(a, 4, 5);
  const LayerGraph g = b.build();
  Rng rng(52);
  const FloatTensor x = oracle::random_tensor(rng, Shape{2, 3, 6, 6}, -1, 1);

  std::vector<double> w0, b0, w3, b3;
  for (Index i = 0; i < g.nodes[0].weight.size(); ++i) w0.push_back(g.nodes[0].weight[i]);
  for (Index i = 0; i < g.nodes[0].bias.size(); ++i) b0.push_back(g.nodes[0].bias[i]);
  for (Index i = 0; i < g.nodes[3].weight.size(); ++i) w3.push_back(g.nodes[3].weight[i]);
  for (Index i = 0; i < g.nodes[3].bias.size(); ++i) b3.push_back(g.nodes[3].bias[i]);
  auto y = oracle::conv2d(oracle::from_tensor(x), oracle::from_tensor(g.nodes[0].weight), b0, 1, 1);
  for (double& v : y.v) v = std::max(v, 0.0);
  const auto pooled = oracle::avgpool(y);
  const auto want = oracle::linear(pooled.v, 2, w3, 5, b3);

  const FloatTensor got = forward(g, x);
  ASSERT_EQ(got.shape(), (Shape{2, 5}));
  for (Index i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[static_cast<std::size_t>(i)], 1e-5);
}

TEST(Graph, ForwardRejectsWrongInput) {
  Builder b(InputSpec{1, 4, 4});
  b.conv(kGraphInput, 1, 1, 1);
  EXPECT_THROW(forward(b.build(), FloatTensor(Shape{1, 2, 4, 4})), ShapeError);
}

TEST(CountOps, ConvExampleAndEmpty) {
  Builder b(InputSpec{1, 10, 10});
  b.conv(kGraphInput, 1, 1, 3);
  EXPECT_EQ(count_ops(b.build()), 1152.0);
  EXPECT_EQ(count_ops(LayerGraph{}), 0.0);
}

TEST(CountOps, FusedReluAddsOutputElements) {
  Builder b(InputSpec{1, 10, 10});
  const int c = b.conv(kGraphInput, 1, 1, 3);
  b.relu(c);
  const LayerGraph g = b.build();
  EXPECT_EQ(count_ops(g), 1152.0 + 64.0);
  EXPECT_EQ(count_ops(fuse(g)), 1152.0 + 64.0);
}

TEST(Footprint, ConvExampleAndInt8Quarter) {
  Builder b(InputSpec{3, 32, 32});
  b.conv(kGraphInput, 3, 16, 3, 1, 1);
  const LayerGraph fp = b.build();
  EXPECT_EQ(memory_footprint(fp), 77824u);

  LayerGraph fq = insert_fake_quant(fp);
  Rng rng(53);
  testgraph::calibrate(fq, rng);
  const LayerGraph q = convert(fq);
  EXPECT_EQ(memory_footprint(q) * 4, memory_footprint(fp));
  EXPECT_EQ(memory_footprint(q), 77824u / 4);
}

TEST(Models, BuildAndRun) {
  for (Arch arch : {Arch::kTinyResNet, Arch::kTinyInception}) {
    const LayerGraph g = make_model(arch, 7);
    EXPECT_NO_THROW(validate(g));
    EXPECT_EQ(make_model(arch, 7), g);
    EXPECT_NE(make_model(arch, 8), g);
    Rng rng(54);
    const FloatTensor y = forward(g, oracle::random_tensor(rng, g.input.batch_shape(2), 0, 1));
    EXPECT_EQ(y.shape(), (Shape{2, 9}));
    EXPECT_GT(g.parameter_count(), 0u);
    EXPECT_EQ(parse_arch(arch_name(arch)), arch);
  }
  EXPECT_THROW(parse_arch("vgg"), ArgumentError);
}

TEST(Names, OpAndMode) {
  EXPECT_STREQ(mode_name(NumericMode::kInt8), "int8");
  EXPECT_NE(std::string(op_name(OpKind::kFusedConvBnRelu)), std::string(op_name(OpKind::kFusedConvRelu)));
}
