// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "qwid/graph.hpp"
#include "qwid/random.hpp"

namespace qwid {

Arch parse_arch(const std::string& name) {
  if (name == "tinyresnet") return Arch::kTinyResNet;
  if (name == "tinyinception") return Arch::kTinyInception;
  throw ArgumentError("unknown architecture '" + name + "' (expected tinyresnet or tinyinception)");
}

const char* arch_name(Arch arch) { return arch == Arch::kTinyResNet ? "tinyresnet" : "tinyinception"; }

namespace {

class Builder {
 public:
  Builder(std::uint64_t seed, InputSpec input) : rng_(seed) { g_.input = input; }

  int conv(int in, Index c_in, Index c_out, Index k, Index stride, Index pad) {
    Node& n = add(OpKind::kConv, {in});
    n.weight = he(Shape{c_out, c_in, k, k}, c_in * k * k);
    n.bias = FloatTensor(Shape{c_out});
    n.conv = {stride, pad};
    return n.id;
  }

  int bn(int in, Index c) {
    Node& n = add(OpKind::kBatchNorm, {in});
    n.bn = BatchNormParams{FloatTensor::constant(Shape{c}, 1.0f), FloatTensor(Shape{c}), FloatTensor(Shape{c}),
                           FloatTensor::constant(Shape{c}, 1.0f)};
    return n.id;
  }

  int relu(int in) { return add(OpKind::kRelu, {in}).id; }
  int add(int a, int b) { return add(OpKind::kAdd, {a, b}).id; }
  int concat(int a, int b) { return add(OpKind::kConcat, {a, b}).id; }
  int gavgpool(int in) { return add(OpKind::kGlobalAvgPool, {in}).id; }

  int maxpool(int in) {
    Node& n = add(OpKind::kMaxPool, {in});
    n.pool = {2, 2};
    return n.id;
  }

  int linear(int in, Index c_in, Index c_out) {
    Node& n = add(OpKind::kLinear, {in});
    n.weight = he(Shape{c_out, c_in}, c_in);
    n.bias = FloatTensor(Shape{c_out});
    return n.id;
  }

  int conv_bn_relu(int in, Index c_in, Index c_out, Index k, Index stride = 1) {
    return relu(bn(conv(in, c_in, c_out, k, stride, k / 2), c_out));
  }

  LayerGraph finish() {
    validate(g_);
    return std::move(g_);
  }

 private:
  Node& add(OpKind kind, std::vector<int> inputs) {
    Node& n = g_.nodes.emplace_back();
    n.id = static_cast<int>(g_.nodes.size()) - 1;
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
  }

  FloatTensor he(Shape shape, Index fan_in) {
    FloatTensor w(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.span()) v = static_cast<float>(std * rng_.normal());
    return w;
  }

  Rng rng_;
  LayerGraph g_;
};

// stem: conv3x3(16)-bn-relu, maxpool          -> 16 x 16 x 16
// block1: [conv-bn-relu, conv-bn] + identity  -> 16 x 16 x 16
// block2: [conv s2-bn-relu, conv-bn] + 1x1 s2 projection-bn -> 32 x 8 x 8
// head: global average pool, linear
LayerGraph tiny_resnet(Builder b, Index in_c, Index classes) {
  const int stem = b.maxpool(b.conv_bn_relu(kGraphInput, in_c, 16, 3));

  const int r1 = b.conv_bn_relu(stem, 16, 16, 3);
  const int r2 = b.bn(b.conv(r1, 16, 16, 3, 1, 1), 16);
  const int block1 = b.relu(b.add(r2, stem));

  const int s1 = b.conv_bn_relu(block1, 16, 32, 3, 2);
  const int s2 = b.bn(b.conv(s1, 32, 32, 3, 1, 1), 32);
  const int proj = b.bn(b.conv(block1, 16, 32, 1, 2, 0), 32);
  const int block2 = b.relu(b.add(s2, proj));

  b.linear(b.gavgpool(block2), 32, classes);
  return b.finish();
}

// stem, then an inception-style block: 1x1 branch || 1x1 -> 3x3 branch,
// concatenated on channels, pooled and classified.
LayerGraph tiny_inception(Builder b, Index in_c, Index classes) {
  const int stem = b.maxpool(b.conv_bn_relu(kGraphInput, in_c, 16, 3));
  const int left = b.conv_bn_relu(stem, 16, 16, 1);
  const int right = b.conv_bn_relu(b.conv_bn_relu(stem, 16, 16, 1), 16, 16, 3);
  const int joined = b.maxpool(b.concat(left, right));
  b.linear(b.gavgpool(joined), 32, classes);
  return b.finish();
}

}  // namespace

LayerGraph make_model(Arch arch, std::uint64_t seed, InputSpec input, Index classes) {
  Builder b(seed, input);
  return arch == Arch::kTinyResNet ? tiny_resnet(std::move(b), input.channels, classes)
                                   : tiny_inception(std::move(b), input.channels, classes);
}

}  // namespace qwid
