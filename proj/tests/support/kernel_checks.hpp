// SPDX-License-Identifier: Apache-2.0
#pragma once
// Random instances of every integer kernel against the float oracle. Each
// entry is the worst |dequantized - float| / s_out seen for that kernel.
// Every kernel is compared with the float op on its dequantized operands:
// an output grid can be much finer than the rounding already present in
// the inputs, and no kernel can recover detail its input never held.
// Conv and linear also report the error against the original float
// operands, which adds that input rounding back in.

#include <map>
#include <string>

#include "oracle.hpp"
#include "qwid/observer.hpp"
#include "qwid/qkernels.hpp"

namespace kernelcheck {

using namespace qwid;

inline QuantParams calibrated(const oracle::Volume& y) {
  double lo = 0, hi = 0;
  for (double v : y.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return compute_qparams({lo, hi});
}

inline QuantParams calibrated(const FloatTensor& t) { return compute_qparams(tensor_range(t)); }

/// Output grid covering both references, so neither sits outside it.
inline QuantParams calibrated(const oracle::Volume& a, const oracle::Volume& b) {
  oracle::Volume both = a;
  both.v.insert(both.v.end(), b.v.begin(), b.v.end());
  return calibrated(both);
}

/// Worst error over the output, in units of the output scale.
inline double worst_ratio(const QuantTensor& got, const oracle::Volume& want) {
  const FloatTensor r = dequantize_tensor(got);
  const double s = got.params().scale;
  double worst = 0;
  for (Index i = 0; i < r.size(); ++i) worst = std::max(worst, std::abs(r[i] - want.v[static_cast<std::size_t>(i)]) / s);
  return worst;
}

inline std::vector<double> as_vector(const FloatTensor& t) {
  std::vector<double> v;
  for (Index i = 0; i < t.size(); ++i) v.push_back(t[i]);
  return v;
}

/// Error against the dequantized operands and against the float operands.
struct Ratios {
  double kernel = 0;
  double end_to_end = 0;
};

inline oracle::Volume relu_of(oracle::Volume v, bool relu) {
  if (relu) {
    for (double& e : v.v) e = std::max(e, 0.0);
  }
  return v;
}

/// Bias as the kernel sees it: int32 values on the s_x * s_w grid.
inline std::vector<double> dequantized_bias(const std::vector<std::int32_t>& q, const QuantParams& in,
                                            const QuantTensor& w) {
  std::vector<double> b;
  for (std::size_t c = 0; c < q.size(); ++c) {
    b.push_back(static_cast<double>(q[c]) * in.scale * w.channel_params(static_cast<Index>(c)).scale);
  }
  return b;
}

inline Ratios conv_instance(Rng& rng, bool relu) {
  const Index cin = 1 + static_cast<Index>(rng.below(4)), cout = 1 + static_cast<Index>(rng.below(8));
  const Index k = rng.below(2) ? 3 : 1;
  const ConvSpec spec{1 + static_cast<Index>(rng.below(2)), k == 3 ? static_cast<Index>(rng.below(2)) : 0};
  const Index h = 4 + static_cast<Index>(rng.below(6)), w = 4 + static_cast<Index>(rng.below(6));
  const FloatTensor x = oracle::random_tensor(rng, Shape{2, cin, h, w}, rng.uniform(-2, 0), rng.uniform(0.5, 2));
  const FloatTensor wt = oracle::random_tensor(rng, Shape{cout, cin, k, k}, -1, 1);
  const FloatTensor b = oracle::random_tensor(rng, Shape{cout}, -0.5, 0.5);
  const oracle::Volume want =
      relu_of(oracle::conv2d(oracle::from_tensor(x), oracle::from_tensor(wt), as_vector(b), spec.stride, spec.padding), relu);
  const QuantParams in = calibrated(x);
  const QuantTensor xq = quantize_tensor(x, in);
  const QuantTensor wq = quantize_tensor(wt, QuantScheme::kPerChannelSymmetric);
  const auto bias = quantize_bias(b, in, wq);
  const oracle::Volume seen =
      relu_of(oracle::conv2d(oracle::from_tensor(dequantize_tensor(xq)), oracle::from_tensor(dequantize_tensor(wq)),
                             dequantized_bias(bias, in, wq), spec.stride, spec.padding),
              relu);
  const QuantParams out = calibrated(want, seen);
  const QuantTensor got = qconv2d(xq, wq, bias, spec, make_requant(in, wq, out), relu);
  return {worst_ratio(got, seen), worst_ratio(got, want)};
}

inline Ratios linear_instance(Rng& rng) {
  const Index batch = 1 + static_cast<Index>(rng.below(4));
  const Index in_f = 4 + static_cast<Index>(rng.below(20)), out_f = 1 + static_cast<Index>(rng.below(12));
  const FloatTensor x = oracle::random_tensor(rng, Shape{batch, in_f}, -1, 1);
  const FloatTensor wt = oracle::random_tensor(rng, Shape{out_f, in_f}, -1, 1);
  const FloatTensor b = oracle::random_tensor(rng, Shape{out_f}, -0.5, 0.5);
  oracle::Volume want(batch, out_f, 1, 1);
  want.v = oracle::linear(as_vector(x), batch, as_vector(wt), out_f, as_vector(b));
  const QuantParams in = calibrated(x);
  const QuantTensor xq = quantize_tensor(x, in);
  const QuantTensor wq = quantize_tensor(wt, QuantScheme::kPerChannelSymmetric);
  const auto bias = quantize_bias(b, in, wq);
  oracle::Volume seen(batch, out_f, 1, 1);
  seen.v = oracle::linear(as_vector(dequantize_tensor(xq)), batch, as_vector(dequantize_tensor(wq)), out_f,
                          dequantized_bias(bias, in, wq));
  const QuantParams out = calibrated(want, seen);
  const QuantTensor got = qlinear(xq, wq, bias, make_requant(in, wq, out));
  return {worst_ratio(got, seen), worst_ratio(got, want)};
}

inline double relu_instance(Rng& rng) {
  const FloatTensor x = oracle::random_tensor(rng, Shape{2, 3, 5, 5}, rng.uniform(-4, -0.1), rng.uniform(0.1, 4));
  const QuantParams in = calibrated(x);
  const QuantTensor xq = quantize_tensor(x, in);
  oracle::Volume want = oracle::from_tensor(dequantize_tensor(xq));
  for (double& v : want.v) v = std::max(v, 0.0);
  QuantParams out = calibrated(want);
  // Also exercise the matched-params path every other instance.
  if (rng.below(2)) out = in;
  return worst_ratio(qrelu(xq, out), want);
}

inline double add_instance(Rng& rng) {
  const Shape s{2, 3, 4, 4};
  const FloatTensor a = oracle::random_tensor(rng, s, rng.uniform(-3, 0), rng.uniform(0.1, 3));
  const FloatTensor b = oracle::random_tensor(rng, s, rng.uniform(-3, 0), rng.uniform(0.1, 3));
  const QuantTensor aq = quantize_tensor(a, calibrated(a));
  const QuantTensor bq = quantize_tensor(b, calibrated(b));
  oracle::Volume want = oracle::from_tensor(dequantize_tensor(aq));
  const FloatTensor br = dequantize_tensor(bq);
  for (Index i = 0; i < br.size(); ++i) want.v[static_cast<std::size_t>(i)] += br[i];
  return worst_ratio(qadd(aq, bq, calibrated(want)), want);
}

inline double maxpool_instance(Rng& rng) {
  const FloatTensor x = oracle::random_tensor(rng, Shape{2, 3, 6 + static_cast<Index>(rng.below(4)), 7}, -2, 3);
  const PoolSpec spec = rng.below(2) ? PoolSpec{2, 2} : PoolSpec{3, 1};
  const QuantTensor xq = quantize_tensor(x, calibrated(x));
  return worst_ratio(maxpool2d(xq, spec), oracle::maxpool(oracle::from_tensor(dequantize_tensor(xq)), spec.window, spec.stride));
}

inline double avgpool_instance(Rng& rng) {
  const FloatTensor x = oracle::random_tensor(rng, Shape{2, 4, 5, 3 + static_cast<Index>(rng.below(5))}, -1, 2);
  const QuantTensor xq = quantize_tensor(x, calibrated(x));
  const oracle::Volume want = oracle::avgpool(oracle::from_tensor(dequantize_tensor(xq)));
  return worst_ratio(global_avgpool(xq, calibrated(want)), want);
}

/// Worst kernel ratio per kernel. When `float_operands` is given it
/// receives the conv and linear ratios against the original float inputs.
inline std::map<std::string, double> all_kernels(std::uint64_t seed, int instances = 100,
                                                 std::map<std::string, double>* float_operands = nullptr) {
  Rng rng(seed);
  std::map<std::string, double> out, loose;
  auto keep = [&](const std::string& name, double e) { out[name] = std::max(out[name], e); };
  auto keep2 = [&](const std::string& name, Ratios r) {
    keep(name, r.kernel);
    loose[name] = std::max(loose[name], r.end_to_end);
  };
  for (int i = 0; i < instances; ++i) {
    keep2("qconv2d", conv_instance(rng, false));
    keep2("qconv2d_relu", conv_instance(rng, true));
    keep2("qlinear", linear_instance(rng));
    keep("qrelu", relu_instance(rng));
    keep("qadd", add_instance(rng));
    keep("maxpool", maxpool_instance(rng));
    keep("gavgpool", avgpool_instance(rng));
  }
  if (float_operands) *float_operands = loose;
  return out;
}

}  // namespace kernelcheck
