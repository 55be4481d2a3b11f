// SPDX-License-Identifier: Apache-2.0
#include "qwid/tensor.hpp"

#include <sstream>

namespace qwid {

Shape::Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}

Shape::Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
  for (Index d : dims_) {
    if (d < 1) throw ShapeError("Shape: dimensions must be >= 1, got " + to_string());
  }
}

Index Shape::numel() const noexcept {
  if (dims_.empty()) return 0;
  Index n = 1;
  for (Index d : dims_) n *= d;
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? ", " : "") << dims_[i];
  os << ')';
  return os.str();
}

QuantTensor::QuantTensor(Int8Tensor values, QScheme scheme) : values_(std::move(values)), scheme_(std::move(scheme)) {
  if (const auto* pc = std::get_if<PerChannel>(&scheme_)) {
    if (pc->axis != 0 || values_.shape().rank() < 1) throw ContractError("QuantTensor: per-channel axis must be the c_out axis");
    if (static_cast<Index>(pc->params.size()) != values_.shape()[0]) {
      throw ShapeError("QuantTensor: per-channel params length does not match c_out");
    }
    for (const auto& p : pc->params) p.validate();
  } else {
    std::get<PerTensor>(scheme_).params.validate();
  }
}

const QuantParams& QuantTensor::params() const {
  if (const auto* pt = std::get_if<PerTensor>(&scheme_)) return pt->params;
  throw ContractError("QuantTensor: per-tensor params requested from a per-channel tensor");
}

const QuantParams& QuantTensor::channel_params(Index channel) const {
  if (const auto* pt = std::get_if<PerTensor>(&scheme_)) return pt->params;
  return std::get<PerChannel>(scheme_).params.at(static_cast<std::size_t>(channel));
}

Index QuantTensor::channel_count() const {
  if (per_tensor()) return 1;
  return static_cast<Index>(std::get<PerChannel>(scheme_).params.size());
}

RealRange tensor_range(const FloatTensor& t) {
  if (t.empty()) throw ShapeError("tensor_range: empty tensor");
  return {static_cast<double>(t.array().minCoeff()), static_cast<double>(t.array().maxCoeff())};
}

namespace {

void quantize_slice(const float* src, std::int8_t* dst, Index n, const QuantParams& p) {
  for (Index i = 0; i < n; ++i) dst[i] = static_cast<std::int8_t>(quantize(src[i], p));
}

}  // namespace

QuantTensor quantize_tensor(const FloatTensor& t, QuantScheme scheme) {
  if (t.empty()) throw ShapeError("quantize_tensor: empty tensor");
  switch (scheme) {
    case QuantScheme::kPerTensorAffine:
      return quantize_tensor(t, compute_qparams(tensor_range(t), kInt8Min, kInt8Max, false));
    case QuantScheme::kPerTensorSymmetric:
      return quantize_tensor(t, compute_qparams(tensor_range(t), kInt8Min, kInt8Max, true));
    case QuantScheme::kPerChannelSymmetric: {
      if (t.shape().rank() < 2) throw ContractError("quantize_tensor: per-channel quantization needs a weight tensor");
      const Index channels = t.dim(0);
      const auto rows = t.matrix(channels);
      PerChannel pc;
      pc.params.reserve(static_cast<std::size_t>(channels));
      for (Index c = 0; c < channels; ++c) {
        const RealRange r{rows.row(c).minCoeff(), rows.row(c).maxCoeff()};
        pc.params.push_back(compute_qparams(r, kInt8Min, kInt8Max, true));
      }
      return quantize_tensor(t, QScheme{std::move(pc)});
    }
  }
  throw ContractError("quantize_tensor: unknown scheme");
}

QuantTensor quantize_tensor(const FloatTensor& t, const QuantParams& params) {
  return quantize_tensor(t, QScheme{PerTensor{params}});
}

QuantTensor quantize_tensor(const FloatTensor& t, const QScheme& scheme) {
  if (t.empty()) throw ShapeError("quantize_tensor: empty tensor");
  Int8Tensor values(t.shape());
  if (const auto* pt = std::get_if<PerTensor>(&scheme)) {
    quantize_slice(t.data(), values.data(), t.size(), pt->params);
  } else {
    const auto& pc = std::get<PerChannel>(scheme);
    const Index channels = t.dim(0);
    if (static_cast<Index>(pc.params.size()) != channels) throw ShapeError("quantize_tensor: per-channel params mismatch");
    const Index inner = t.size() / channels;
    for (Index c = 0; c < channels; ++c) {
      quantize_slice(t.data() + c * inner, values.data() + c * inner, inner, pc.params[static_cast<std::size_t>(c)]);
    }
  }
  return QuantTensor(std::move(values), scheme);
}

FloatTensor dequantize_tensor(const QuantTensor& t) {
  FloatTensor out(t.shape());
  const Index channels = t.per_tensor() ? 1 : t.shape()[0];
  const Index inner = t.size() / channels;
  const std::int8_t* src = t.values().data();
  for (Index c = 0; c < channels; ++c) {
    const QuantParams& p = t.channel_params(c);
    for (Index i = c * inner; i < (c + 1) * inner; ++i) out[i] = static_cast<float>(dequantize(src[i], p));
  }
  return out;
}

}  // namespace qwid
