// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qwid/quant.hpp"
#include "qwid/tensor.hpp"

namespace qwid {

/// Running global min/max over every tensor observed so far.
///
/// Per-channel observers track one (lo, hi) pair per slice along axis 0.
/// The envelope only grows and does not depend on observation order.
class MinMaxObserver {
 public:
  static MinMaxObserver per_tensor() { return MinMaxObserver(std::nullopt); }
  static MinMaxObserver per_channel(Index axis = 0) { return MinMaxObserver(axis); }

  /// Widens the tracked range(s) to include `t`.
  void observe(const FloatTensor& t);

  /// One QuantParams (per-tensor) or one per tracked slice.
  std::vector<QuantParams> finalize(std::int32_t qmin = kInt8Min, std::int32_t qmax = kInt8Max,
                                    bool symmetric = false) const;
  /// Single-range convenience; throws ContractError on per-channel observers.
  QuantParams finalize_one(std::int32_t qmin = kInt8Min, std::int32_t qmax = kInt8Max, bool symmetric = false) const;

  std::uint64_t count() const noexcept { return count_; }
  bool is_per_channel() const noexcept { return axis_.has_value(); }
  std::optional<Index> axis() const noexcept { return axis_; }
  /// Tracked ranges; empty until the first observation.
  const std::vector<RealRange>& ranges() const noexcept { return ranges_; }
  RealRange range() const;

  /// Restores a previously serialized state.
  static MinMaxObserver restore(std::optional<Index> axis, std::uint64_t count, std::vector<RealRange> ranges);

  friend bool operator==(const MinMaxObserver&, const MinMaxObserver&) = default;

 private:
  explicit MinMaxObserver(std::optional<Index> axis) : axis_(axis) {}

  std::optional<Index> axis_;
  std::uint64_t count_ = 0;
  std::vector<RealRange> ranges_;
};

}  // namespace qwid
