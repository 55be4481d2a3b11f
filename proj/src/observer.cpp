// SPDX-License-Identifier: Apache-2.0
#include "qwid/observer.hpp"

#include <algorithm>

namespace qwid {

void MinMaxObserver::observe(const FloatTensor& t) {
  if (t.empty()) throw ShapeError("observe: empty tensor");
  std::vector<RealRange> seen;
  if (axis_) {
    if (*axis_ != 0 || t.shape().rank() < 1) throw ShapeError("observe: per-channel observers track axis 0");
    const Index channels = t.dim(0);
    if (!ranges_.empty() && static_cast<Index>(ranges_.size()) != channels) {
      throw ShapeError("observe: channel count changed from " + std::to_string(ranges_.size()) + " to " +
                       std::to_string(channels));
    }
    const auto rows = t.matrix(channels);
    for (Index c = 0; c < channels; ++c) seen.push_back({rows.row(c).minCoeff(), rows.row(c).maxCoeff()});
  } else {
    seen.push_back(tensor_range(t));
  }

  if (ranges_.empty()) {
    ranges_ = std::move(seen);
  } else {
    for (std::size_t i = 0; i < ranges_.size(); ++i) {
      ranges_[i].lo = std::min(ranges_[i].lo, seen[i].lo);
      ranges_[i].hi = std::max(ranges_[i].hi, seen[i].hi);
    }
  }
  ++count_;
}

std::vector<QuantParams> MinMaxObserver::finalize(std::int32_t qmin, std::int32_t qmax, bool symmetric) const {
  if (count_ == 0) throw EmptyObserverError("finalize: observer has seen no data");
  std::vector<QuantParams> out;
  out.reserve(ranges_.size());
  for (const auto& r : ranges_) out.push_back(compute_qparams(r, qmin, qmax, symmetric));
  return out;
}

QuantParams MinMaxObserver::finalize_one(std::int32_t qmin, std::int32_t qmax, bool symmetric) const {
  if (axis_) throw ContractError("finalize_one: per-channel observer");
  return finalize(qmin, qmax, symmetric).front();
}

RealRange MinMaxObserver::range() const {
  if (count_ == 0) throw EmptyObserverError("range: observer has seen no data");
  if (axis_) throw ContractError("range: per-channel observer");
  return ranges_.front();
}

MinMaxObserver MinMaxObserver::restore(std::optional<Index> axis, std::uint64_t count, std::vector<RealRange> ranges) {
  if ((count == 0) != ranges.empty()) throw FormatError("observer: count and ranges disagree");
  for (const auto& r : ranges) {
    if (r.lo > r.hi) throw FormatError("observer: stored range has lo > hi");
  }
  MinMaxObserver obs(axis);
  obs.count_ = count;
  obs.ranges_ = std::move(ranges);
  return obs;
}

}  // namespace qwid
