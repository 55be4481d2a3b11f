// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "qwid/error.hpp"

namespace qwid {

inline constexpr std::int32_t kInt8Min = -128;
inline constexpr std::int32_t kInt8Max = 127;

/// Affine map between reals and the integer grid [qmin, qmax]:
///   q = clip(round(x / scale + zero_point), qmin, qmax)
///   x = scale * (q - zero_point)
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  std::int32_t qmin = kInt8Min;
  std::int32_t qmax = kInt8Max;

  /// Throws ContractError when any invariant is broken.
  void validate() const;
  bool symmetric() const noexcept { return zero_point == 0; }
  std::string to_string() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Closed real interval [lo, hi] observed for a tensor.
struct RealRange {
  double lo = 0.0;
  double hi = 0.0;

  friend bool operator==(const RealRange&, const RealRange&) = default;
};

/// Round to nearest, ties to even. Relies on the default FE_TONEAREST mode.
inline double round_half_even(double x) noexcept { return std::nearbyint(x); }

template <typename T>
T clip(T x, T lo, T hi) {
  if (lo > hi) throw ArgumentError("clip: lower bound exceeds upper bound");
  return x < lo ? lo : (x > hi ? hi : x);
}

/// Derives scale and zero point for `range`.
///
/// The range is first widened to [-m, m] when `symmetric` is set (the zero
/// point is then 0 and scale = m / qmax), and otherwise nudged so that it
/// contains 0. Asymmetric parameters use scale = (hi - lo) / (qmax - qmin)
/// and zero_point = clip(round(qmin - lo / scale), qmin, qmax), which makes
/// dequantize invert quantize at both range endpoints. A degenerate range
/// lo == hi == c maps to scale = max(|c|, 1) / qmax centred on zero.
QuantParams compute_qparams(RealRange range, std::int32_t qmin = kInt8Min,
                            std::int32_t qmax = kInt8Max, bool symmetric = false);

/// Quantizes one value. Throws InputError for non-finite input.
inline std::int32_t quantize(double x, const QuantParams& p) {
  if (!std::isfinite(x)) throw InputError("quantize: non-finite input");
  const double q = round_half_even(x / p.scale + p.zero_point);
  if (q < p.qmin) return p.qmin;
  if (q > p.qmax) return p.qmax;
  return static_cast<std::int32_t>(q);
}

inline double dequantize(std::int32_t q, const QuantParams& p) noexcept {
  return p.scale * static_cast<double>(q - p.zero_point);
}

inline double fake_quantize(double x, const QuantParams& p) { return dequantize(quantize(x, p), p); }

/// True when `x` quantizes strictly inside (qmin, qmax), i.e. the gradient
/// region of the clipped straight-through estimator.
inline bool in_unsaturated_region(double x, const QuantParams& p) {
  const double q = round_half_even(x / p.scale + p.zero_point);
  return q > p.qmin && q < p.qmax;
}

}  // namespace qwid
