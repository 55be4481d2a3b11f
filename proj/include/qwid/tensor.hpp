// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qwid/error.hpp"
#include "qwid/quant.hpp"

namespace qwid {

using Index = Eigen::Index;

/// Dimensions of a dense row-major tensor.
///
/// Layout conventions used throughout the library:
///   activations     (batch, channels, height, width)
///   conv weights    (c_out, c_in, f_h, f_w)
///   linear weights  (c_out, c_in)
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims);
  explicit Shape(std::vector<Index> dims);

  Index rank() const noexcept { return static_cast<Index>(dims_.size()); }
  Index operator[](Index axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  const std::vector<Index>& dims() const noexcept { return dims_; }
  Index numel() const noexcept;
  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_.numel())) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) throw ShapeError("Tensor: data length does not match " + shape_.to_string());
  }
  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size()) throw ShapeError("Tensor: initializer length mismatch");
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.size() == 0; }
  Index dim(Index axis) const { return shape_[axis]; }

  Array& array() noexcept { return data_; }
  const Array& array() const noexcept { return data_; }
  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> span() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Element (n, c, h, w) of a rank-4 tensor.
  Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[offset4(n, c, h, w)]; }
  Scalar operator()(Index n, Index c, Index h, Index w) const { return data_[offset4(n, c, h, w)]; }

  /// Row-major matrix view with `rows` rows; the column count is implied.
  MatrixMap matrix(Index rows) { return MatrixMap(data_.data(), rows, data_.size() / rows); }
  ConstMatrixMap matrix(Index rows) const { return ConstMatrixMap(data_.data(), rows, data_.size() / rows); }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Index offset4(Index n, Index c, Index h, Index w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  Array data_;
};

using FloatTensor = Tensor<float>;
using AccumTensor = Tensor<std::int32_t>;
using Int8Tensor = Tensor<std::int8_t>;

struct PerTensor {
  QuantParams params;
  friend bool operator==(const PerTensor&, const PerTensor&) = default;
};

/// One QuantParams per slice along `axis` (always the c_out axis, 0).
struct PerChannel {
  Index axis = 0;
  std::vector<QuantParams> params;
  friend bool operator==(const PerChannel&, const PerChannel&) = default;
};

using QScheme = std::variant<PerTensor, PerChannel>;

/// How quantize_tensor derives parameters from the data.
enum class QuantScheme {
  kPerTensorAffine,     // activations
  kPerTensorSymmetric,
  kPerChannelSymmetric  // weights, one scale per output channel
};

/// int8 payload plus the parameters that govern each element.
class QuantTensor {
 public:
  QuantTensor() = default;
  QuantTensor(Int8Tensor values, QScheme scheme);

  const Shape& shape() const noexcept { return values_.shape(); }
  Index size() const noexcept { return values_.size(); }
  const Int8Tensor& values() const noexcept { return values_; }
  Int8Tensor& values() noexcept { return values_; }
  const QScheme& scheme() const noexcept { return scheme_; }

  bool per_tensor() const noexcept { return std::holds_alternative<PerTensor>(scheme_); }
  /// Per-tensor params; throws ContractError on per-channel tensors.
  const QuantParams& params() const;
  /// Params governing slice `channel` (the single params for per-tensor).
  const QuantParams& channel_params(Index channel) const;
  Index channel_count() const;

  friend bool operator==(const QuantTensor&, const QuantTensor&) = default;

 private:
  Int8Tensor values_;
  QScheme scheme_ = PerTensor{};
};

RealRange tensor_range(const FloatTensor& t);

QuantTensor quantize_tensor(const FloatTensor& t, QuantScheme scheme);
QuantTensor quantize_tensor(const FloatTensor& t, const QuantParams& params);
QuantTensor quantize_tensor(const FloatTensor& t, const QScheme& scheme);
FloatTensor dequantize_tensor(const QuantTensor& t);

}  // namespace qwid
