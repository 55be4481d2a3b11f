// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"
#include "qwid/tensor.hpp"

using namespace qwid;

TEST(Shape, Basics) {
  const Shape s{2, 3, 4, 5};
  EXPECT_EQ(s.rank(), 4);
  EXPECT_EQ(s.numel(), 120);
  EXPECT_EQ(s[2], 4);
  EXPECT_THROW(Shape({2, 0}), ShapeError);
  EXPECT_THROW(s[4], std::out_of_range);
}

TEST(Tensor, RowMajorNchw) {
  FloatTensor t(Shape{2, 3, 4, 5});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  EXPECT_EQ(t(1, 2, 3, 4), 119.0f);
  EXPECT_EQ(t(0, 1, 0, 0), 20.0f);
  EXPECT_EQ(t(0, 0, 1, 0), 5.0f);
  EXPECT_THROW(FloatTensor(Shape{2, 2}, {1.0f, 2.0f}), ShapeError);
}

namespace {

FloatTensor two_slice_weight() {
  // Slice 0 spans [-1, 1], slice 1 spans [-0.01, 0.01].
  FloatTensor w(Shape{2, 1, 2, 2}, {-1.0f, 0.3f, 1.0f, -0.2f, -0.01f, 0.004f, 0.01f, -0.007f});
  return w;
}

double frobenius_error(const FloatTensor& a, const FloatTensor& b) {
  double s = 0;
  for (Index i = 0; i < a.size(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(QuantizeTensor, PerChannelScales) {
  const auto q = quantize_tensor(two_slice_weight(), QuantScheme::kPerChannelSymmetric);
  ASSERT_FALSE(q.per_tensor());
  ASSERT_EQ(q.channel_count(), 2);
  EXPECT_NEAR(q.channel_params(0).scale, 1.0 / 127.0, 1e-12);
  EXPECT_NEAR(q.channel_params(1).scale, 0.01 / 127.0, 1e-9);
  EXPECT_EQ(q.channel_params(0).zero_point, 0);
  EXPECT_EQ(q.channel_params(1).zero_point, 0);
}

TEST(QuantizeTensor, PerChannelSlicesReconstructWithinHalfScale) {
  const FloatTensor w = two_slice_weight();
  const auto q = quantize_tensor(w, QuantScheme::kPerChannelSymmetric);
  const FloatTensor r = dequantize_tensor(q);
  for (Index c = 0; c < 2; ++c) {
    for (Index i = 0; i < 4; ++i) {
      EXPECT_LE(std::abs(static_cast<double>(w[c * 4 + i]) - r[c * 4 + i]), q.channel_params(c).scale / 2 + 1e-7);
    }
  }
}

TEST(QuantizeTensor, PerChannelBeatsPerTensorOnTwoSliceExample) {
  const FloatTensor w = two_slice_weight();
  const double pc = frobenius_error(w, dequantize_tensor(quantize_tensor(w, QuantScheme::kPerChannelSymmetric)));
  const double pt = frobenius_error(w, dequantize_tensor(quantize_tensor(w, QuantScheme::kPerTensorSymmetric)));
  EXPECT_LE(pc, pt);
}

TEST(QuantizeTensor, PerChannelNeverWorseOnRandomWeights) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const Index oc = 1 + static_cast<Index>(rng.below(6));
    FloatTensor w(Shape{oc, 3, 3, 3});
    for (Index c = 0; c < oc; ++c) {
      const double a = std::exp(rng.uniform(-5, 1));
      for (Index i = 0; i < 27; ++i) w[c * 27 + i] = static_cast<float>(rng.uniform(-a, a));
    }
    const double pc = frobenius_error(w, dequantize_tensor(quantize_tensor(w, QuantScheme::kPerChannelSymmetric)));
    const double pt = frobenius_error(w, dequantize_tensor(quantize_tensor(w, QuantScheme::kPerTensorSymmetric)));
    EXPECT_LE(pc, pt + 1e-9);
  }
}

TEST(QuantizeTensor, AllZerosGiveZeroPoint) {
  const auto q = quantize_tensor(FloatTensor(Shape{2, 3}), QuantScheme::kPerTensorAffine);
  for (Index i = 0; i < q.size(); ++i) EXPECT_EQ(q.values()[i], q.params().zero_point);
  const auto r = dequantize_tensor(q);
  for (Index i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], 0.0f);
}

TEST(QuantizeTensor, LatticeRoundTripIsExact) {
  const QuantParams p{0.25, 3};
  FloatTensor t(Shape{8});
  for (Index i = 0; i < 8; ++i) t[i] = static_cast<float>(p.scale * (static_cast<double>(i * 11 - 40) - p.zero_point));
  EXPECT_EQ(dequantize_tensor(quantize_tensor(t, p)), t);
}

TEST(QuantizeTensor, ErrorBoundedByHalfScale) {
  Rng rng(4);
  const FloatTensor t = oracle::random_tensor(rng, Shape{4, 5, 6}, -3.0, 7.0);
  const auto q = quantize_tensor(t, QuantScheme::kPerTensorAffine);
  const auto r = dequantize_tensor(q);
  for (Index i = 0; i < t.size(); ++i) {
    EXPECT_LE(std::abs(static_cast<double>(t[i]) - r[i]), q.params().scale / 2 + 1e-6);
  }
}

TEST(QuantizeTensor, Errors) {
  EXPECT_THROW(quantize_tensor(FloatTensor{}, QuantScheme::kPerTensorAffine), ShapeError);
  EXPECT_THROW(quantize_tensor(FloatTensor(Shape{4}), QuantScheme::kPerChannelSymmetric), ContractError);
}

TEST(QuantTensor, Invariants) {
  Int8Tensor v(Shape{2, 2});
  PerChannel pc;
  pc.params = {QuantParams{0.1, 0}};
  EXPECT_THROW(QuantTensor(v, pc), ShapeError);
  pc.axis = 1;
  pc.params = {QuantParams{0.1, 0}, QuantParams{0.1, 0}};
  EXPECT_THROW(QuantTensor(v, pc), ContractError);
  const QuantTensor ok(v, PerChannel{0, {QuantParams{0.1, 0}, QuantParams{0.2, 0}}});
  EXPECT_THROW(ok.params(), ContractError);
  EXPECT_EQ(ok.channel_params(1).scale, 0.2);
}
