// SPDX-License-Identifier: Apache-2.0
#pragma once

// Real-valued reference kernels and their gradients.
//
// Every kernel is a free function templated on the scalar type so the same
// code runs the fp32 network and the double-precision gradient checks.
// Activations are (batch, channels, height, width), row-major.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "qwid/error.hpp"
#include "qwid/tensor.hpp"

namespace qwid {

/// Convolution hyperparameters; filter dims come from the weight shape.
struct ConvSpec {
  Index stride = 1;
  Index padding = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct PoolSpec {
  Index window = 2;
  Index stride = 2;
  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

/// floor((in + 2 * padding - filter) / stride) + 1, or ShapeError if < 1.
inline Index conv_out_dim(Index in, Index filter, const ConvSpec& spec) {
  if (spec.stride < 1 || spec.padding < 0) throw ShapeError("conv: stride must be >= 1 and padding >= 0");
  const Index span = in + 2 * spec.padding - filter;
  if (span < 0) throw ShapeError("conv: filter larger than padded input");
  return span / spec.stride + 1;
}

inline Index pool_out_dim(Index in, const PoolSpec& spec) {
  if (spec.window < 1 || spec.stride < 1) throw ShapeError("maxpool: window and stride must be >= 1");
  if (spec.window > in) throw ShapeError("maxpool: window larger than input");
  return (in - spec.window) / spec.stride + 1;
}

namespace detail {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_rank(const Shape& s, Index rank, const char* what) {
  if (s.rank() != rank) throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + s.to_string());
}

struct ConvGeometry {
  Index batch, in_c, in_h, in_w;
  Index out_c, k_h, k_w;
  Index out_h, out_w;
  Index patch() const { return in_c * k_h * k_w; }
  Index positions() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const ConvSpec& spec) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (x[1] != w[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(x[1]) + " channels, weight expects " + std::to_string(w[1]));
  }
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0};
  g.out_h = conv_out_dim(g.in_h, g.k_h, spec);
  g.out_w = conv_out_dim(g.in_w, g.k_w, spec);
  return g;
}

/// Unfolds one (C, H, W) sample into a (C*kh*kw) x (out_h*out_w) matrix.
template <typename S>
void im2col(const S* x, const ConvGeometry& g, const ConvSpec& spec, S pad, S* cols) {
  const Index positions = g.positions();
  for (Index c = 0; c < g.in_c; ++c) {
    const S* plane = x + c * g.in_h * g.in_w;
    for (Index kh = 0; kh < g.k_h; ++kh) {
      for (Index kw = 0; kw < g.k_w; ++kw) {
        S* row = cols + ((c * g.k_h + kh) * g.k_w + kw) * positions;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * spec.stride - spec.padding + kh;
          S* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(dst, dst + g.out_w, pad);
            continue;
          }
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * spec.stride - spec.padding + kw;
            dst[ow] = (iw < 0 || iw >= g.in_w) ? pad : plane[ih * g.in_w + iw];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds columns back into a (C, H, W) sample.
template <typename S>
void col2im(const S* cols, const ConvGeometry& g, const ConvSpec& spec, S* dx) {
  const Index positions = g.positions();
  for (Index c = 0; c < g.in_c; ++c) {
    S* plane = dx + c * g.in_h * g.in_w;
    for (Index kh = 0; kh < g.k_h; ++kh) {
      for (Index kw = 0; kw < g.k_w; ++kw) {
        const S* row = cols + ((c * g.k_h + kh) * g.k_w + kw) * positions;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * spec.stride - spec.padding + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * spec.stride - spec.padding + kw;
            if (iw >= 0 && iw < g.in_w) plane[ih * g.in_w + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

inline Index features_of(const Shape& s) { return s.numel() / s[0]; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Cross-correlation with zero padding plus a per-output-channel bias.
/// `b` may be empty.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, const ConvSpec& spec) {
  const auto g = detail::conv_geometry(x.shape(), w.shape(), spec);
  if (!b.empty() && b.size() != g.out_c) throw ShapeError("conv2d: bias length must equal c_out");
  Tensor<S> y(Shape{g.batch, g.out_c, g.out_h, g.out_w});
  detail::RowMatrix<S> cols(g.patch(), g.positions());
  const auto wm = w.matrix(g.out_c);
  for (Index n = 0; n < g.batch; ++n) {
    detail::im2col(x.data() + n * g.in_c * g.in_h * g.in_w, g, spec, S(0), cols.data());
    Eigen::Map<detail::RowMatrix<S>> yn(y.data() + n * g.out_c * g.positions(), g.out_c, g.positions());
    yn.noalias() = wm * cols;
    if (!b.empty()) yn.colwise() += b.array().matrix();
  }
  return y;
}

template <typename S>
struct ConvGrads {
  Tensor<S> dx;
  Tensor<S> dw;
  Tensor<S> db;
};

template <typename S>
ConvGrads<S> conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy, const ConvSpec& spec) {
  const auto g = detail::conv_geometry(x.shape(), w.shape(), spec);
  if (dy.shape() != Shape{g.batch, g.out_c, g.out_h, g.out_w}) throw ShapeError("conv2d_backward: dy shape mismatch");
  ConvGrads<S> grads{Tensor<S>(x.shape()), Tensor<S>(w.shape()), Tensor<S>(Shape{g.out_c})};
  detail::RowMatrix<S> cols(g.patch(), g.positions());
  detail::RowMatrix<S> dcols(g.patch(), g.positions());
  auto dw = grads.dw.matrix(g.out_c);
  const auto wm = w.matrix(g.out_c);
  const Index in_size = g.in_c * g.in_h * g.in_w;
  for (Index n = 0; n < g.batch; ++n) {
    detail::im2col(x.data() + n * in_size, g, spec, S(0), cols.data());
    Eigen::Map<const detail::RowMatrix<S>> dyn(dy.data() + n * g.out_c * g.positions(), g.out_c, g.positions());
    dw.noalias() += dyn * cols.transpose();
    grads.db.array() += dyn.rowwise().sum().array();
    dcols.noalias() = wm.transpose() * dyn;
    detail::col2im(dcols.data(), g, spec, grads.dx.data() + n * in_size);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// y = x * w^T + b with x flattened to (batch, c_in) and w shaped (c_out, c_in).
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::require_rank(w.shape(), 2, "linear weight");
  const Index batch = x.dim(0);
  const Index in = detail::features_of(x.shape());
  const Index out = w.dim(0);
  if (in != w.dim(1)) throw ShapeError("linear: input has " + std::to_string(in) + " features, weight expects " + std::to_string(w.dim(1)));
  if (!b.empty() && b.size() != out) throw ShapeError("linear: bias length must equal c_out");
  Tensor<S> y(Shape{batch, out});
  y.matrix(batch).noalias() = x.matrix(batch) * w.matrix(out).transpose();
  if (!b.empty()) y.matrix(batch).rowwise() += b.array().matrix().transpose();
  return y;
}

template <typename S>
ConvGrads<S> linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy) {
  const Index batch = x.dim(0);
  const Index out = w.dim(0);
  if (dy.shape() != Shape{batch, out}) throw ShapeError("linear_backward: dy shape mismatch");
  ConvGrads<S> grads{Tensor<S>(x.shape()), Tensor<S>(w.shape()), Tensor<S>(Shape{out})};
  grads.dw.matrix(out).noalias() = dy.matrix(batch).transpose() * x.matrix(batch);
  grads.db.array() = dy.matrix(batch).colwise().sum().transpose().array();
  grads.dx.matrix(batch).noalias() = dy.matrix(batch) * w.matrix(out);
  return grads;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), x.array().max(S(0)));
}

template <typename S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
  return Tensor<S>(x.shape(), (x.array() > S(0)).select(dy.array(), S(0)));
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + a.shape().to_string() + " vs " + b.shape().to_string());
  return Tensor<S>(a.shape(), a.array() + b.array());
}

/// Concatenates two activations along the channel axis.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a.shape(), 4, "concat");
  detail::require_rank(b.shape(), 4, "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) throw ShapeError("concat: batch/spatial mismatch");
  const Index batch = a.dim(0);
  const Index sa = a.size() / batch;
  const Index sb = b.size() / batch;
  Tensor<S> y(Shape{batch, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (Index n = 0; n < batch; ++n) {
    y.array().segment(n * (sa + sb), sa) = a.array().segment(n * sa, sa);
    y.array().segment(n * (sa + sb) + sa, sb) = b.array().segment(n * sb, sb);
  }
  return y;
}

/// Splits a channel-concatenated gradient back into its two operands.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> concat_channels_backward(const Shape& a, const Shape& b, const Tensor<S>& dy) {
  const Index batch = a[0];
  const Index sa = a.numel() / batch;
  const Index sb = b.numel() / batch;
  std::pair<Tensor<S>, Tensor<S>> out{Tensor<S>(a), Tensor<S>(b)};
  for (Index n = 0; n < batch; ++n) {
    out.first.array().segment(n * sa, sa) = dy.array().segment(n * (sa + sb), sa);
    out.second.array().segment(n * sb, sb) = dy.array().segment(n * (sa + sb) + sa, sb);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x, const PoolSpec& spec) {
  detail::require_rank(x.shape(), 4, "maxpool");
  const Index n_c = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = pool_out_dim(h, spec), ow = pool_out_dim(w, spec);
  Tensor<S> y(Shape{x.dim(0), x.dim(1), oh, ow});
  for (Index p = 0; p < n_c; ++p) {
    const S* in = x.data() + p * h * w;
    S* out = y.data() + p * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        S best = -std::numeric_limits<S>::infinity();
        for (Index di = 0; di < spec.window; ++di) {
          for (Index dj = 0; dj < spec.window; ++dj) {
            best = std::max(best, in[(i * spec.stride + di) * w + j * spec.stride + dj]);
          }
        }
        out[i * ow + j] = best;
      }
    }
  }
  return y;
}

/// Routes each output gradient to the first maximal element of its window.
template <typename S>
Tensor<S> maxpool2d_backward(const Tensor<S>& x, const Tensor<S>& dy, const PoolSpec& spec) {
  const Index n_c = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = pool_out_dim(h, spec), ow = pool_out_dim(w, spec);
  Tensor<S> dx(x.shape());
  for (Index p = 0; p < n_c; ++p) {
    const S* in = x.data() + p * h * w;
    const S* g = dy.data() + p * oh * ow;
    S* out = dx.data() + p * h * w;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index arg = (i * spec.stride) * w + j * spec.stride;
        for (Index di = 0; di < spec.window; ++di) {
          for (Index dj = 0; dj < spec.window; ++dj) {
            const Index k = (i * spec.stride + di) * w + j * spec.stride + dj;
            if (in[k] > in[arg]) arg = k;
          }
        }
        out[arg] += g[i * ow + j];
      }
    }
  }
  return dx;
}

template <typename S>
Tensor<S> global_avgpool(const Tensor<S>& x) {
  detail::require_rank(x.shape(), 4, "global_avgpool");
  const Index planes = x.dim(0) * x.dim(1);
  Tensor<S> y(Shape{x.dim(0), x.dim(1), 1, 1});
  y.array() = x.matrix(planes).rowwise().mean().array();
  return y;
}

template <typename S>
Tensor<S> global_avgpool_backward(const Shape& x_shape, const Tensor<S>& dy) {
  const Index planes = x_shape[0] * x_shape[1];
  const Index hw = x_shape[2] * x_shape[3];
  Tensor<S> dx(x_shape);
  dx.matrix(planes).colwise() = dy.array().matrix() / static_cast<S>(hw);
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

namespace detail {

inline void check_channel_params(const Shape& x, Index len, const char* what) {
  require_rank(x, 4, what);
  if (len != x[1]) throw ShapeError(std::string(what) + ": parameter length does not match channel count");
}

/// Calls fn(channel, segment) for every (n, c) plane of a rank-4 tensor.
template <typename S, typename Fn>
void for_each_plane(Tensor<S>& t, Fn&& fn) {
  const Index c = t.dim(1), hw = t.dim(2) * t.dim(3);
  for (Index n = 0; n < t.dim(0); ++n) {
    for (Index ch = 0; ch < c; ++ch) fn(ch, t.array().segment((n * c + ch) * hw, hw));
  }
}

}  // namespace detail

/// y = gamma * (x - mean) / sqrt(var + eps) + beta with stored statistics.
template <typename S>
Tensor<S> batchnorm_inference(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, const Tensor<S>& mean,
                              const Tensor<S>& var, S eps) {
  detail::check_channel_params(x.shape(), gamma.size(), "batchnorm");
  if (beta.size() != gamma.size() || mean.size() != gamma.size() || var.size() != gamma.size()) {
    throw ShapeError("batchnorm: parameter lengths differ");
  }
  Tensor<S> y = x;
  detail::for_each_plane(y, [&](Index c, auto plane) {
    const S denom = var[c] + eps;
    if (!(denom > S(0))) throw ArgumentError("batchnorm: var + eps must be positive");
    const S k = gamma[c] / std::sqrt(denom);
    plane = (plane - mean[c]) * k + beta[c];
  });
  return y;
}

/// Per-channel batch statistics saved by the training-mode forward.
template <typename S>
struct BatchStats {
  Eigen::Array<S, Eigen::Dynamic, 1> mean;
  Eigen::Array<S, Eigen::Dynamic, 1> var;  // biased
  Eigen::Array<S, Eigen::Dynamic, 1> inv_std;
  Index count = 0;  // elements per channel
};

template <typename S>
BatchStats<S> batch_statistics(const Tensor<S>& x, S eps) {
  detail::require_rank(x.shape(), 4, "batchnorm");
  const Index c = x.dim(1), hw = x.dim(2) * x.dim(3);
  BatchStats<S> st;
  st.count = x.dim(0) * hw;
  st.mean = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(c);
  st.var = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(c);
  for (Index n = 0; n < x.dim(0); ++n) {
    for (Index ch = 0; ch < c; ++ch) st.mean[ch] += x.array().segment((n * c + ch) * hw, hw).sum();
  }
  st.mean /= static_cast<S>(st.count);
  for (Index n = 0; n < x.dim(0); ++n) {
    for (Index ch = 0; ch < c; ++ch) st.var[ch] += (x.array().segment((n * c + ch) * hw, hw) - st.mean[ch]).square().sum();
  }
  st.var /= static_cast<S>(st.count);
  st.inv_std = (st.var + eps).rsqrt();
  return st;
}

/// Normalizes with batch statistics (training mode).
template <typename S>
Tensor<S> batchnorm_train(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, const BatchStats<S>& st) {
  detail::check_channel_params(x.shape(), gamma.size(), "batchnorm");
  Tensor<S> y = x;
  detail::for_each_plane(y, [&](Index c, auto plane) { plane = (plane - st.mean[c]) * (st.inv_std[c] * gamma[c]) + beta[c]; });
  return y;
}

template <typename S>
struct BatchNormGrads {
  Tensor<S> dx;
  Tensor<S> dgamma;
  Tensor<S> dbeta;
};

template <typename S>
BatchNormGrads<S> batchnorm_train_backward(const Tensor<S>& x, const Tensor<S>& gamma, const BatchStats<S>& st,
                                           const Tensor<S>& dy) {
  const Index c = x.dim(1), hw = x.dim(2) * x.dim(3), batch = x.dim(0);
  BatchNormGrads<S> g{Tensor<S>(x.shape()), Tensor<S>(Shape{c}), Tensor<S>(Shape{c})};
  for (Index n = 0; n < batch; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const auto xs = x.array().segment((n * c + ch) * hw, hw);
      const auto gs = dy.array().segment((n * c + ch) * hw, hw);
      g.dbeta[ch] += gs.sum();
      g.dgamma[ch] += (gs * (xs - st.mean[ch])).sum() * st.inv_std[ch];
    }
  }
  const S m = static_cast<S>(st.count);
  for (Index n = 0; n < batch; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const auto xs = x.array().segment((n * c + ch) * hw, hw);
      const auto gs = dy.array().segment((n * c + ch) * hw, hw);
      const S k = gamma[ch] * st.inv_std[ch] / m;
      g.dx.array().segment((n * c + ch) * hw, hw) =
          k * (m * gs - g.dbeta[ch] - (xs - st.mean[ch]) * st.inv_std[ch] * g.dgamma[ch]);
    }
  }
  return g;
}

}  // namespace qwid
