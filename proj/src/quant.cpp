// SPDX-License-Identifier: Apache-2.0
#include "qwid/quant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qwid {

void QuantParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractError("QuantParams: scale must be positive and finite");
  if (qmin >= qmax) throw ContractError("QuantParams: qmin must be below qmax");
  if (zero_point < qmin || zero_point > qmax) throw ContractError("QuantParams: zero point outside [qmin, qmax]");
}

std::string QuantParams::to_string() const {
  std::ostringstream os;
  os << "scale=" << scale << " zero_point=" << zero_point << " range=[" << qmin << "," << qmax << "]";
  return os.str();
}

QuantParams compute_qparams(RealRange range, std::int32_t qmin, std::int32_t qmax, bool symmetric) {
  if (qmin >= qmax) throw ArgumentError("compute_qparams: qmin must be below qmax");
  if (!std::isfinite(range.lo) || !std::isfinite(range.hi)) throw RangeError("compute_qparams: non-finite range");
  if (range.lo > range.hi) throw RangeError("compute_qparams: lo > hi");

  QuantParams p;
  p.qmin = qmin;
  p.qmax = qmax;
  // Largest magnitude reachable on both sides of zero.
  const double half_levels = static_cast<double>(qmin < 0 ? std::min(qmax, -qmin) : qmax);

  if (range.lo == range.hi) {
    p.scale = std::max(std::abs(range.lo), 1.0) / static_cast<double>(qmax);
    p.zero_point = std::clamp<std::int32_t>(0, qmin, qmax);
    return p;
  }

  if (symmetric) {
    const double m = std::max(std::abs(range.lo), std::abs(range.hi));
    p.scale = m / half_levels;
    p.zero_point = std::clamp<std::int32_t>(0, qmin, qmax);
    return p;
  }

  const double lo = std::min(range.lo, 0.0);
  const double hi = std::max(range.hi, 0.0);
  p.scale = (hi - lo) / static_cast<double>(qmax - qmin);
  const double z = round_half_even(static_cast<double>(qmin) - lo / p.scale);
  p.zero_point = static_cast<std::int32_t>(std::clamp(z, static_cast<double>(qmin), static_cast<double>(qmax)));
  return p;
}

}  // namespace qwid
