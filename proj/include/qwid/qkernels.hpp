// SPDX-License-Identifier: Apache-2.0
#pragma once

// Integer-only kernels over int8 activations and weights.
//
// Accumulation is exact in 32-bit integers. For the largest supported
// filter (7x7 over 512 input channels) the worst-case magnitude is
// 255 * 127 * 7 * 7 * 512 ~= 8.1e8 < 2^31, so no accumulator can overflow.
// Results are requantized with a real multiplier applied in double
// precision and rounded half-to-even.

#include <cstdint>
#include <span>
#include <vector>

#include "qwid/kernels.hpp"
#include "qwid/quant.hpp"
#include "qwid/tensor.hpp"

namespace qwid {

/// Rescaling from a conv/linear accumulator to the output int8 grid.
struct RequantSpec {
  /// s_x * s_w[c] / s_y, one per output channel (or a single shared value).
  std::vector<double> multipliers;
  std::int32_t input_zero_point = 0;
  QuantParams output;

  double multiplier(Index channel) const {
    return multipliers.size() == 1 ? multipliers.front() : multipliers[static_cast<std::size_t>(channel)];
  }
  friend bool operator==(const RequantSpec&, const RequantSpec&) = default;
};

RequantSpec make_requant(const QuantParams& input, const QuantTensor& weight, const QuantParams& output);

/// Bias quantized at scale s_x * s_w[c] with zero point 0.
std::vector<std::int32_t> quantize_bias(const FloatTensor& bias, const QuantParams& input, const QuantTensor& weight);

/// Conv weights rearranged for the integer GEMM: one 32-bit word per
/// (output channel, group of 4 patch elements), zero-padded, plus per-channel
/// weight sums. Built once per layer and reused across calls.
struct PackedConvWeights {
  Index out_c = 0;
  Index patch = 0;
  Index groups = 0;
  std::vector<std::int32_t> words;
  std::vector<std::int32_t> sums;
};

PackedConvWeights pack_conv_weights(const QuantTensor& w);

/// acc = sum (x_q - z_x) * w_q + bias, y_q = clip(round(M * acc) + z_y).
///
/// Weights must be symmetric (zero point 0). Padding uses z_x so that it
/// represents real zero exactly. With `relu` set, the lower clamp bound is
/// raised to z_y, which is a ReLU folded into the output clip.
QuantTensor qconv2d(const QuantTensor& x, const QuantTensor& w, std::span<const std::int32_t> bias, const ConvSpec& spec,
                    const RequantSpec& rq, bool relu = false);

/// Same as above with weights packed ahead of time; `w` is still consulted
/// for shapes and contract checks.
QuantTensor qconv2d(const QuantTensor& x, const QuantTensor& w, const PackedConvWeights& packed,
                    std::span<const std::int32_t> bias, const ConvSpec& spec, const RequantSpec& rq, bool relu = false);

/// Fully connected layer; x is flattened to (batch, c_in).
QuantTensor qlinear(const QuantTensor& x, const QuantTensor& w, std::span<const std::int32_t> bias, const RequantSpec& rq,
                    bool relu = false);

/// y_q = z_y if x_q < z_x, else clip(round(z_y + (s_x / s_y) (x_q - z_x))).
QuantTensor qrelu(const QuantTensor& x, const QuantParams& out);

/// y_q = clip(round(z_y + (s_a / s_y)(a_q - z_a) + (s_b / s_y)(b_q - z_b))).
QuantTensor qadd(const QuantTensor& a, const QuantTensor& b, const QuantParams& out);

/// Channel concatenation, each operand requantized to `out`.
QuantTensor qconcat(const QuantTensor& a, const QuantTensor& b, const QuantParams& out);

/// Re-expresses `x` on the grid of `out`.
QuantTensor requantize(const QuantTensor& x, const QuantParams& out);

/// Window maximum on the integer values; the input params carry through.
QuantTensor maxpool2d(const QuantTensor& x, const PoolSpec& spec);

/// Integer sum of (x_q - z_x) per plane scaled by s_x / (H * W * s_y).
QuantTensor global_avgpool(const QuantTensor& x, const QuantParams& out);

}  // namespace qwid
