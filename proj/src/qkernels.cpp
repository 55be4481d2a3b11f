// SPDX-License-Identifier: Apache-2.0
#include "qwid/qkernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#if defined(__AVX512F__) && defined(__AVX512BW__) && defined(__AVX512VNNI__)
#include <immintrin.h>
#define QWID_HAVE_VNNI 1
#endif

namespace qwid {

namespace {

/// Half-to-even rounding via the 1.5 * 2^52 shift; exact for |v| < 2^51 and
/// friendly to auto-vectorization. Callers clamp first.
inline double round_even_bounded(double v) {
  constexpr double kShift = 6755399441055744.0;
  return (v + kShift) - kShift;
}

/// Requantizes an accumulator; the clamp keeps the shift trick in range.
inline std::int8_t requant_value(double m, std::int32_t acc, std::int32_t zero_point, std::int32_t lo, std::int32_t hi) {
  const double v = std::clamp(m * acc, -1e15, 1e15);
  return static_cast<std::int8_t>(std::clamp(round_even_bounded(v) + zero_point, static_cast<double>(lo), static_cast<double>(hi)));
}

/// out[p] = requant_value(m, a[p] + off, ...) for p < n.
void requant_row(const std::int32_t* a, std::int32_t off, double m, std::int32_t zero_point, std::int32_t lo,
                 std::int32_t hi, std::int8_t* out, Index n) {
  Index p = 0;
#if defined(QWID_HAVE_VNNI)
  const __m512i voff = _mm512_set1_epi32(off);
  const __m512d vm = _mm512_set1_pd(m);
  const __m512d vmin = _mm512_set1_pd(-1e15), vmax = _mm512_set1_pd(1e15);
  const __m512d vz = _mm512_set1_pd(zero_point);
  const __m512d vlo = _mm512_set1_pd(lo), vhi = _mm512_set1_pd(hi);
  auto half = [&](__m256i acc) {
    __m512d v = _mm512_mul_pd(vm, _mm512_cvtepi32_pd(acc));
    v = _mm512_min_pd(_mm512_max_pd(v, vmin), vmax);
    v = _mm512_add_pd(_mm512_roundscale_pd(v, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC), vz);
    return _mm512_cvttpd_epi32(_mm512_min_pd(_mm512_max_pd(v, vlo), vhi));
  };
  for (; p + 16 <= n; p += 16) {
    const __m512i acc = _mm512_add_epi32(_mm512_loadu_si512(a + p), voff);
    const __m256i q0 = half(_mm512_castsi512_si256(acc));
    const __m256i q1 = half(_mm512_extracti64x4_epi64(acc, 1));
    const __m512i q = _mm512_inserti64x4(_mm512_castsi256_si512(q0), q1, 1);
    _mm_storeu_si128(reinterpret_cast<__m128i*>(out + p), _mm512_cvtepi32_epi8(q));
  }
#endif
  for (; p < n; ++p) out[p] = requant_value(m, a[p] + off, zero_point, lo, hi);
}

inline std::int8_t saturate(double q, std::int32_t lo, std::int32_t hi) {
  return static_cast<std::int8_t>(std::clamp(q, static_cast<double>(lo), static_cast<double>(hi)));
}

Int8Tensor apply_lut(const Int8Tensor& x, const std::array<std::int8_t, 256>& lut) {
  Int8Tensor y(x.shape());
  const std::int8_t* src = x.data();
  std::int8_t* dst = y.data();
  for (Index i = 0; i < x.size(); ++i) dst[i] = lut[static_cast<std::uint8_t>(src[i])];
  return y;
}

inline std::int32_t dot_i8(const std::int8_t* a, const std::int8_t* b, Index n) {
  std::int32_t acc = 0;
  for (Index k = 0; k < n; ++k) acc += static_cast<std::int32_t>(a[k]) * static_cast<std::int32_t>(b[k]);
  return acc;
}

void check_weight(const QuantTensor& w, const RequantSpec& rq, std::span<const std::int32_t> bias) {
  const Index out_c = w.shape()[0];
  for (Index c = 0; c < w.channel_count(); ++c) {
    if (w.channel_params(c).zero_point != 0) throw ContractError("quantized layer: weights must be symmetric");
  }
  if (rq.multipliers.empty()) throw ContractError("quantized layer: missing requantization multipliers");
  if (rq.multipliers.size() != 1 && static_cast<Index>(rq.multipliers.size()) != out_c) {
    throw ContractError("quantized layer: multiplier count must be 1 or c_out");
  }
  for (double m : rq.multipliers) {
    if (!(m > 0.0)) throw ContractError("quantized layer: multipliers must be positive");
  }
  rq.output.validate();
  if (!bias.empty() && static_cast<Index>(bias.size()) != out_c) throw ShapeError("quantized layer: bias length must equal c_out");
}

/// Sum of each output channel's weights, used to fold z_x out of the inner loop.
std::vector<std::int32_t> row_sums(const Int8Tensor& w, Index rows) {
  const Index cols = w.size() / rows;
  std::vector<std::int32_t> sums(static_cast<std::size_t>(rows), 0);
  for (Index r = 0; r < rows; ++r) {
    for (Index k = 0; k < cols; ++k) sums[static_cast<std::size_t>(r)] += w[r * cols + k];
  }
  return sums;
}

// Packed GEMM for convolution.
//
// Activations are offset to unsigned (u = x_q + 128) and unfolded into tiles
// of 16 output positions. Within a tile, each group of 4 consecutive patch
// elements of one position occupies 4 adjacent bytes, so a 64-byte row holds
// 16 positions x 4 patch elements. Weights are packed as one 32-bit word per
// (channel, group of 4). The patch length is zero-padded to a multiple of 4
// in the weights, so padded lanes contribute nothing.
//
// Since sum u * w = sum (x_q - z_x) * w + (128 + z_x) * sum w, the true
// accumulator is recovered exactly by subtracting (128 + z_x) * sum w.
constexpr Index kTile = 16;

using PackedWeights = PackedConvWeights;

/// Unfolds one sample into the tiled unsigned layout described above.
///
/// `padded` is scratch for a (C, H + 2p, W + 2p) unsigned copy of the input
/// whose border holds the offset zero point, so the unfolding itself needs
/// no bounds checks.
void pack_activations(const std::int8_t* x, const detail::ConvGeometry& g, const ConvSpec& spec, std::uint8_t pad,
                      Index groups, std::uint8_t* padded, std::uint8_t* packed) {
  const Index hp = g.in_h + 2 * spec.padding;
  const Index wp = g.in_w + 2 * spec.padding;
  std::fill_n(padded, g.in_c * hp * wp, pad);
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index h = 0; h < g.in_h; ++h) {
      const std::int8_t* src = x + (c * g.in_h + h) * g.in_w;
      std::uint8_t* dst = padded + (c * hp + h + spec.padding) * wp + spec.padding;
      for (Index w = 0; w < g.in_w; ++w) dst[w] = static_cast<std::uint8_t>(src[w]) ^ 0x80u;
    }
  }

  const Index positions = g.positions();
  const Index tiles = (positions + kTile - 1) / kTile;
  auto* words = reinterpret_cast<std::uint32_t*>(packed);
  // Lanes past the last position are computed but never read back.
  std::fill_n(words + (tiles - 1) * groups * kTile, groups * kTile, std::uint32_t{0});
  const Index patch = g.patch();
  for (Index grp = 0; grp < groups; ++grp) {
    // Patch elements past the end meet zero weights; any readable byte works.
    Index off[4];
    for (Index b = 0; b < 4; ++b) {
      const Index k = grp * 4 + b;
      if (k >= patch) {
        off[b] = 0;
        continue;
      }
      const Index c = k / (g.k_h * g.k_w), kh = (k / g.k_w) % g.k_h, kw = k % g.k_w;
      off[b] = (c * hp + kh) * wp + kw;
    }
    for (Index oh = 0; oh < g.out_h; ++oh) {
      const Index row = oh * spec.stride * wp;
      const std::uint8_t* __restrict s0 = padded + off[0] + row;
      const std::uint8_t* __restrict s1 = padded + off[1] + row;
      const std::uint8_t* __restrict s2 = padded + off[2] + row;
      const std::uint8_t* __restrict s3 = padded + off[3] + row;
      Index ow = 0;
      while (ow < g.out_w) {
        const Index p = oh * g.out_w + ow;
        const Index lane = p % kTile;
        const Index n = std::min(g.out_w - ow, kTile - lane);
        std::uint32_t* __restrict dst = words + ((p / kTile) * groups + grp) * kTile + lane;
        if (spec.stride == 1 && n == kTile) {
          for (Index i = 0; i < kTile; ++i) {
            dst[i] = std::uint32_t{s0[ow + i]} | (std::uint32_t{s1[ow + i]} << 8) | (std::uint32_t{s2[ow + i]} << 16) |
                     (std::uint32_t{s3[ow + i]} << 24);
          }
        } else if (spec.stride == 1) {
          for (Index i = 0; i < n; ++i) {
            dst[i] = std::uint32_t{s0[ow + i]} | (std::uint32_t{s1[ow + i]} << 8) | (std::uint32_t{s2[ow + i]} << 16) |
                     (std::uint32_t{s3[ow + i]} << 24);
          }
        } else {
          for (Index i = 0; i < n; ++i) {
            const Index j = (ow + i) * spec.stride;
            dst[i] = std::uint32_t{s0[j]} | (std::uint32_t{s1[j]} << 8) | (std::uint32_t{s2[j]} << 16) |
                     (std::uint32_t{s3[j]} << 24);
          }
        }
        ow += n;
      }
    }
  }
}

/// acc[co * stride + p] = sum over the patch of u[p] * w[co] for all tiles.
void packed_gemm(const std::uint8_t* packed, Index tiles, const PackedWeights& pw, Index out_c, std::int32_t* acc,
                 Index stride) {
#if defined(QWID_HAVE_VNNI)
  constexpr Index kBlock = 8;
  for (Index t = 0; t < tiles; ++t) {
    const std::uint8_t* a = packed + t * pw.groups * 4 * kTile;
    for (Index co0 = 0; co0 < out_c; co0 += kBlock) {
      const Index nb = std::min(kBlock, out_c - co0);
      if (nb == kBlock) {
        const std::int32_t* w = pw.words.data() + co0 * pw.groups;
        const Index gs = pw.groups;
        __m512i s0 = _mm512_setzero_si512(), s1 = s0, s2 = s0, s3 = s0, s4 = s0, s5 = s0, s6 = s0, s7 = s0;
        for (Index k = 0; k < gs; ++k) {
          const __m512i av = _mm512_loadu_si512(a + k * 4 * kTile);
          s0 = _mm512_dpbusd_epi32(s0, av, _mm512_set1_epi32(w[k]));
          s1 = _mm512_dpbusd_epi32(s1, av, _mm512_set1_epi32(w[gs + k]));
          s2 = _mm512_dpbusd_epi32(s2, av, _mm512_set1_epi32(w[2 * gs + k]));
          s3 = _mm512_dpbusd_epi32(s3, av, _mm512_set1_epi32(w[3 * gs + k]));
          s4 = _mm512_dpbusd_epi32(s4, av, _mm512_set1_epi32(w[4 * gs + k]));
          s5 = _mm512_dpbusd_epi32(s5, av, _mm512_set1_epi32(w[5 * gs + k]));
          s6 = _mm512_dpbusd_epi32(s6, av, _mm512_set1_epi32(w[6 * gs + k]));
          s7 = _mm512_dpbusd_epi32(s7, av, _mm512_set1_epi32(w[7 * gs + k]));
        }
        std::int32_t* dst = acc + co0 * stride + t * kTile;
        _mm512_storeu_si512(dst, s0);
        _mm512_storeu_si512(dst + stride, s1);
        _mm512_storeu_si512(dst + 2 * stride, s2);
        _mm512_storeu_si512(dst + 3 * stride, s3);
        _mm512_storeu_si512(dst + 4 * stride, s4);
        _mm512_storeu_si512(dst + 5 * stride, s5);
        _mm512_storeu_si512(dst + 6 * stride, s6);
        _mm512_storeu_si512(dst + 7 * stride, s7);
        continue;
      }
      __m512i sum[kBlock];
      for (Index j = 0; j < kBlock; ++j) sum[j] = _mm512_setzero_si512();
      for (Index k = 0; k < pw.groups; ++k) {
        const __m512i av = _mm512_loadu_si512(a + k * 4 * kTile);
        for (Index j = 0; j < nb; ++j) {
          sum[j] = _mm512_dpbusd_epi32(sum[j], av, _mm512_set1_epi32(pw.words[(co0 + j) * pw.groups + k]));
        }
      }
      for (Index j = 0; j < nb; ++j) _mm512_storeu_si512(acc + (co0 + j) * stride + t * kTile, sum[j]);
    }
  }
#else
  for (Index t = 0; t < tiles; ++t) {
    const std::uint8_t* a = packed + t * pw.groups * 4 * kTile;
    for (Index co = 0; co < out_c; ++co) {
      std::int32_t lanes[kTile] = {};
      const auto* w = reinterpret_cast<const std::int8_t*>(pw.words.data() + co * pw.groups);
      for (Index k = 0; k < pw.groups; ++k) {
        for (Index lane = 0; lane < kTile; ++lane) {
          for (Index b = 0; b < 4; ++b) {
            lanes[lane] += static_cast<std::int32_t>(a[(k * kTile + lane) * 4 + b]) * w[k * 4 + b];
          }
        }
      }
      std::copy_n(lanes, kTile, acc + co * stride + t * kTile);
    }
  }
#endif
}

const QuantParams& per_tensor_input(const QuantTensor& x, const char* what) {
  if (!x.per_tensor()) throw ContractError(std::string(what) + ": activations must be per-tensor quantized");
  return x.params();
}

}  // namespace

RequantSpec make_requant(const QuantParams& input, const QuantTensor& weight, const QuantParams& output) {
  RequantSpec rq;
  rq.input_zero_point = input.zero_point;
  rq.output = output;
  for (Index c = 0; c < weight.channel_count(); ++c) {
    rq.multipliers.push_back(input.scale * weight.channel_params(c).scale / output.scale);
  }
  return rq;
}

std::vector<std::int32_t> quantize_bias(const FloatTensor& bias, const QuantParams& input, const QuantTensor& weight) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(bias.size()));
  for (Index c = 0; c < bias.size(); ++c) {
    const double s = input.scale * weight.channel_params(weight.per_tensor() ? 0 : c).scale;
    out[static_cast<std::size_t>(c)] = static_cast<std::int32_t>(round_half_even(static_cast<double>(bias[c]) / s));
  }
  return out;
}

PackedConvWeights pack_conv_weights(const QuantTensor& w) {
  if (w.shape().rank() != 4) throw ShapeError("pack_conv_weights: weight must be rank 4");
  const Index out_c = w.shape()[0];
  const Index patch = w.size() / out_c;
  PackedConvWeights pw;
  pw.out_c = out_c;
  pw.patch = patch;
  pw.groups = (patch + 3) / 4;
  pw.words.assign(static_cast<std::size_t>(out_c * pw.groups), 0);
  pw.sums = row_sums(w.values(), out_c);
  for (Index co = 0; co < out_c; ++co) {
    auto* bytes = reinterpret_cast<std::int8_t*>(pw.words.data() + co * pw.groups);
    std::copy_n(w.values().data() + co * patch, patch, bytes);
  }
  return pw;
}

QuantTensor qconv2d(const QuantTensor& x, const QuantTensor& w, std::span<const std::int32_t> bias, const ConvSpec& spec,
                    const RequantSpec& rq, bool relu) {
  if (w.shape().rank() != 4) throw ShapeError("qconv2d: weight must be rank 4");
  return qconv2d(x, w, pack_conv_weights(w), bias, spec, rq, relu);
}

QuantTensor qconv2d(const QuantTensor& x, const QuantTensor& w, const PackedConvWeights& pw,
                    std::span<const std::int32_t> bias, const ConvSpec& spec, const RequantSpec& rq, bool relu) {
  const QuantParams& xp = per_tensor_input(x, "qconv2d");
  check_weight(w, rq, bias);
  if (rq.input_zero_point != xp.zero_point) throw ContractError("qconv2d: requant input zero point disagrees with input");
  const auto g = detail::conv_geometry(x.shape(), w.shape(), spec);
  const Index positions = g.positions();
  const Index tiles = (positions + kTile - 1) / kTile;
  const std::int32_t zx = xp.zero_point;
  const QuantParams& yp = rq.output;
  const std::int32_t lo = relu ? std::max(yp.qmin, yp.zero_point) : yp.qmin;

  if (pw.out_c != g.out_c || pw.patch != g.patch()) throw ContractError("qconv2d: packed weights do not match weight shape");
  std::vector<std::int32_t> offset(static_cast<std::size_t>(g.out_c));
  for (Index co = 0; co < g.out_c; ++co) {
    const auto c = static_cast<std::size_t>(co);
    offset[c] = (bias.empty() ? 0 : bias[c]) - (128 + zx) * pw.sums[c];
  }
  std::vector<std::uint8_t> padded(
      static_cast<std::size_t>(g.in_c * (g.in_h + 2 * spec.padding) * (g.in_w + 2 * spec.padding)));
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(tiles * pw.groups * 4 * kTile));
  std::vector<std::int32_t> acc(static_cast<std::size_t>(g.out_c * tiles * kTile));
  Int8Tensor y(Shape{g.batch, g.out_c, g.out_h, g.out_w});
  for (Index n = 0; n < g.batch; ++n) {
    pack_activations(x.values().data() + n * g.in_c * g.in_h * g.in_w, g, spec, static_cast<std::uint8_t>(zx + 128),
                     pw.groups, padded.data(), packed.data());
    packed_gemm(packed.data(), tiles, pw, g.out_c, acc.data(), tiles * kTile);
    for (Index co = 0; co < g.out_c; ++co) {
      const double m = rq.multiplier(co);
      requant_row(acc.data() + co * tiles * kTile, offset[static_cast<std::size_t>(co)], m, yp.zero_point, lo, yp.qmax,
                  y.data() + (n * g.out_c + co) * positions, positions);
    }
  }
  return QuantTensor(std::move(y), PerTensor{yp});
}

QuantTensor qlinear(const QuantTensor& x, const QuantTensor& w, std::span<const std::int32_t> bias, const RequantSpec& rq,
                    bool relu) {
  const QuantParams& xp = per_tensor_input(x, "qlinear");
  if (w.shape().rank() != 2) throw ShapeError("qlinear: weight must be (c_out, c_in)");
  check_weight(w, rq, bias);
  if (rq.input_zero_point != xp.zero_point) throw ContractError("qlinear: requant input zero point disagrees with input");
  const Index batch = x.shape()[0];
  const Index in = x.size() / batch;
  const Index out_c = w.shape()[0];
  if (in != w.shape()[1]) throw ShapeError("qlinear: feature count mismatch");
  const std::int32_t zx = xp.zero_point;
  const QuantParams& yp = rq.output;
  const std::int32_t lo = relu ? std::max(yp.qmin, yp.zero_point) : yp.qmin;
  const auto wsum = row_sums(w.values(), out_c);

  Int8Tensor y(Shape{batch, out_c});
  for (Index n = 0; n < batch; ++n) {
    const std::int8_t* xr = x.values().data() + n * in;
    for (Index co = 0; co < out_c; ++co) {
      const std::int32_t acc = dot_i8(xr, w.values().data() + co * in, in) - zx * wsum[static_cast<std::size_t>(co)] +
                               (bias.empty() ? 0 : bias[static_cast<std::size_t>(co)]);
      y[n * out_c + co] = saturate(round_half_even(rq.multiplier(co) * acc) + yp.zero_point, lo, yp.qmax);
    }
  }
  return QuantTensor(std::move(y), PerTensor{yp});
}

QuantTensor qrelu(const QuantTensor& x, const QuantParams& out) {
  const QuantParams& xp = per_tensor_input(x, "qrelu");
  out.validate();
  const double ratio = xp.scale / out.scale;
  std::array<std::int8_t, 256> lut{};
  for (std::int32_t q = -128; q < 128; ++q) {
    lut[static_cast<std::uint8_t>(q)] =
        q < xp.zero_point ? static_cast<std::int8_t>(out.zero_point)
                          : saturate(round_half_even(out.zero_point + ratio * (q - xp.zero_point)), out.qmin, out.qmax);
  }
  return QuantTensor(apply_lut(x.values(), lut), PerTensor{out});
}

QuantTensor qadd(const QuantTensor& a, const QuantTensor& b, const QuantParams& out) {
  if (a.shape() != b.shape()) throw ShapeError("qadd: " + a.shape().to_string() + " vs " + b.shape().to_string());
  const QuantParams& ap = per_tensor_input(a, "qadd");
  const QuantParams& bp = per_tensor_input(b, "qadd");
  out.validate();
  const double ra = ap.scale / out.scale;
  const double rb = bp.scale / out.scale;
  Int8Tensor y(a.shape());
  const std::int8_t* pa = a.values().data();
  const std::int8_t* pb = b.values().data();
  std::array<double, 256> ta{}, tb{};
  for (std::int32_t q = -128; q < 128; ++q) {
    ta[static_cast<std::uint8_t>(q)] = ra * (q - ap.zero_point);
    tb[static_cast<std::uint8_t>(q)] = rb * (q - bp.zero_point);
  }
  const double zp = out.zero_point;
  std::int8_t* py = y.data();
  for (Index i = 0; i < y.size(); ++i) {
    const double v = zp + ta[static_cast<std::uint8_t>(pa[i])] + tb[static_cast<std::uint8_t>(pb[i])];
    py[i] = saturate(round_half_even(v), out.qmin, out.qmax);
  }
  return QuantTensor(std::move(y), PerTensor{out});
}

QuantTensor requantize(const QuantTensor& x, const QuantParams& out) {
  const QuantParams& xp = per_tensor_input(x, "requantize");
  if (xp == out) return x;
  const double ratio = xp.scale / out.scale;
  std::array<std::int8_t, 256> lut{};
  for (std::int32_t q = -128; q < 128; ++q) {
    lut[static_cast<std::uint8_t>(q)] =
        saturate(round_half_even(out.zero_point + ratio * (q - xp.zero_point)), out.qmin, out.qmax);
  }
  return QuantTensor(apply_lut(x.values(), lut), PerTensor{out});
}

QuantTensor qconcat(const QuantTensor& a, const QuantTensor& b, const QuantParams& out) {
  const QuantTensor ra = requantize(a, out);
  const QuantTensor rb = requantize(b, out);
  return QuantTensor(concat_channels(ra.values(), rb.values()), PerTensor{out});
}

QuantTensor maxpool2d(const QuantTensor& x, const PoolSpec& spec) {
  const QuantParams& xp = per_tensor_input(x, "maxpool2d");
  if (x.shape().rank() != 4) throw ShapeError("maxpool: expected rank 4");
  const Index planes = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const Index oh = pool_out_dim(h, spec), ow = pool_out_dim(w, spec);
  Int8Tensor y(Shape{x.shape()[0], x.shape()[1], oh, ow});
  for (Index p = 0; p < planes; ++p) {
    const std::int8_t* in = x.values().data() + p * h * w;
    std::int8_t* out = y.data() + p * oh * ow;
    if (spec.window == 2 && spec.stride == 2) {
      for (Index i = 0; i < oh; ++i) {
        const std::int8_t* r0 = in + 2 * i * w;
        const std::int8_t* r1 = r0 + w;
        for (Index j = 0; j < ow; ++j) {
          out[i * ow + j] = std::max(std::max(r0[2 * j], r0[2 * j + 1]), std::max(r1[2 * j], r1[2 * j + 1]));
        }
      }
      continue;
    }
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        std::int8_t best = in[(i * spec.stride) * w + j * spec.stride];
        for (Index di = 0; di < spec.window; ++di) {
          for (Index dj = 0; dj < spec.window; ++dj) best = std::max(best, in[(i * spec.stride + di) * w + j * spec.stride + dj]);
        }
        out[i * ow + j] = best;
      }
    }
  }
  return QuantTensor(std::move(y), PerTensor{xp});
}

QuantTensor global_avgpool(const QuantTensor& x, const QuantParams& out) {
  const QuantParams& xp = per_tensor_input(x, "global_avgpool");
  if (x.shape().rank() != 4) throw ShapeError("global_avgpool: expected rank 4");
  out.validate();
  const Index planes = x.shape()[0] * x.shape()[1];
  const Index hw = x.shape()[2] * x.shape()[3];
  const double m = xp.scale / (static_cast<double>(hw) * out.scale);
  Int8Tensor y(Shape{x.shape()[0], x.shape()[1], 1, 1});
  for (Index p = 0; p < planes; ++p) {
    const std::int8_t* in = x.values().data() + p * hw;
    std::int32_t acc = 0;
    for (Index i = 0; i < hw; ++i) acc += in[i] - xp.zero_point;
    y[p] = saturate(round_half_even(m * acc) + out.zero_point, out.qmin, out.qmax);
  }
  return QuantTensor(std::move(y), PerTensor{out});
}

}  // namespace qwid
