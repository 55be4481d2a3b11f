// SPDX-License-Identifier: Apache-2.0
#pragma once
// Finite-difference checks for every layer's backward kernel. Each entry
// reports the worst relative error over a few random instances.

#include <cmath>
#include <map>
#include <string>

#include "gradcheck.hpp"
#include "qwid/kernels.hpp"
#include "qwid/qat.hpp"

namespace gradcheck {

using qwid::ConvSpec;
using qwid::PoolSpec;
using qwid::Shape;

inline double check_conv(qwid::Rng& rng, const ConvSpec& spec, Index k) {
  DTensor x = random(rng, Shape{2, 3, 5, 6});
  DTensor w = random(rng, Shape{4, 3, k, k});
  DTensor b = random(rng, Shape{4});
  const DTensor y = qwid::conv2d(x, w, b, spec);
  const DTensor r = random(rng, y.shape());
  const auto g = qwid::conv2d_backward(x, w, r, spec);
  auto loss = [&] { return dot(r, qwid::conv2d(x, w, b, spec)); };
  return std::max({check(x, g.dx, loss), check(w, g.dw, loss), check(b, g.db, loss)});
}

inline double check_linear(qwid::Rng& rng) {
  DTensor x = random(rng, Shape{3, 7});
  DTensor w = random(rng, Shape{5, 7});
  DTensor b = random(rng, Shape{5});
  const DTensor r = random(rng, Shape{3, 5});
  const auto g = qwid::linear_backward(x, w, r);
  auto loss = [&] { return dot(r, qwid::linear(x, w, b)); };
  return std::max({check(x, g.dx, loss), check(w, g.dw, loss), check(b, g.db, loss)});
}

inline double check_relu(qwid::Rng& rng) {
  DTensor x = away_from_zero(rng, Shape{2, 3, 4, 4});
  const DTensor r = random(rng, x.shape());
  const DTensor dx = qwid::relu_backward(x, r);
  return check(x, dx, [&] { return dot(r, qwid::relu(x)); });
}

/// The add node hands the upstream gradient to both operands unchanged.
inline double check_add(qwid::Rng& rng) {
  DTensor a = random(rng, Shape{2, 3, 4, 4});
  DTensor b = random(rng, a.shape());
  const DTensor r = random(rng, a.shape());
  auto loss = [&] { return dot(r, qwid::add(a, b)); };
  return std::max(check(a, r, loss), check(b, r, loss));
}

inline double check_concat(qwid::Rng& rng) {
  DTensor a = random(rng, Shape{2, 3, 4, 4});
  DTensor b = random(rng, Shape{2, 2, 4, 4});
  const DTensor r = random(rng, Shape{2, 5, 4, 4});
  const auto [da, db] = qwid::concat_channels_backward(a.shape(), b.shape(), r);
  auto loss = [&] { return dot(r, qwid::concat_channels(a, b)); };
  return std::max(check(a, da, loss), check(b, db, loss));
}

inline double check_maxpool(qwid::Rng& rng, const PoolSpec& spec) {
  DTensor x = random(rng, Shape{2, 3, 6, 6});
  const DTensor r = random(rng, qwid::maxpool2d(x, spec).shape());
  const DTensor dx = qwid::maxpool2d_backward(x, r, spec);
  return check(x, dx, [&] { return dot(r, qwid::maxpool2d(x, spec)); });
}

inline double check_gavgpool(qwid::Rng& rng) {
  DTensor x = random(rng, Shape{2, 3, 4, 5});
  const DTensor r = random(rng, Shape{2, 3, 1, 1});
  const DTensor dx = qwid::global_avgpool_backward(x.shape(), r);
  return check(x, dx, [&] { return dot(r, qwid::global_avgpool(x)); });
}

inline double check_batchnorm(qwid::Rng& rng) {
  const double eps = 1e-5;
  DTensor x = random(rng, Shape{3, 4, 3, 3}, -2, 2);
  DTensor gamma = random(rng, Shape{4}, 0.5, 1.5);
  DTensor beta = random(rng, Shape{4});
  const DTensor r = random(rng, x.shape());
  auto forward = [&] { return qwid::batchnorm_train(x, gamma, beta, qwid::batch_statistics(x, eps)); };
  const auto g = qwid::batchnorm_train_backward(x, gamma, qwid::batch_statistics(x, eps), r);
  auto loss = [&] { return dot(r, forward()); };
  return std::max({check(x, g.dx, loss), check(gamma, g.dgamma, loss), check(beta, g.dbeta, loss)});
}

/// relu(conv(x)) through the chained backward kernels.
inline double check_conv_relu(qwid::Rng& rng) {
  const ConvSpec spec{1, 1};
  DTensor x = random(rng, Shape{2, 2, 5, 5});
  DTensor w = random(rng, Shape{3, 2, 3, 3});
  DTensor b = random(rng, Shape{3});
  auto pre = [&] { return qwid::conv2d(x, w, b, spec); };
  const DTensor z = pre();
  // A pre-activation too close to zero would make the kink visible to FD.
  for (Index i = 0; i < z.size(); ++i) {
    if (std::abs(z[i]) < 1e-4) return check_conv_relu(rng);
  }
  const DTensor r = random(rng, z.shape());
  const auto g = qwid::conv2d_backward(x, w, qwid::relu_backward(z, r), spec);
  auto loss = [&] { return dot(r, qwid::relu(pre())); };
  return std::max({check(x, g.dx, loss), check(w, g.dw, loss), check(b, g.db, loss)});
}

/// relu(bn(conv(x))) with batch statistics, as a training pass computes it.
inline double check_conv_bn_relu(qwid::Rng& rng) {
  const ConvSpec spec{1, 1};
  const double eps = 1e-5;
  DTensor x = random(rng, Shape{3, 2, 4, 4});
  DTensor w = random(rng, Shape{3, 2, 3, 3});
  DTensor b = random(rng, Shape{3});
  DTensor gamma = random(rng, Shape{3}, 0.5, 1.5);
  DTensor beta = random(rng, Shape{3});
  auto normalized = [&] {
    const DTensor c = qwid::conv2d(x, w, b, spec);
    return qwid::batchnorm_train(c, gamma, beta, qwid::batch_statistics(c, eps));
  };
  const DTensor n = normalized();
  for (Index i = 0; i < n.size(); ++i) {
    if (std::abs(n[i]) < 1e-4) return check_conv_bn_relu(rng);
  }
  const DTensor r = random(rng, n.shape());
  const DTensor c = qwid::conv2d(x, w, b, spec);
  const auto bn = qwid::batchnorm_train_backward(c, gamma, qwid::batch_statistics(c, eps), qwid::relu_backward(n, r));
  const auto g = qwid::conv2d_backward(x, w, bn.dx, spec);
  auto loss = [&] { return dot(r, qwid::relu(normalized())); };
  // Batch normalization cancels the conv bias, so its true gradient is zero
  // and a ratio would only compare rounding noise; require both sides ~0.
  double bias_err = 0;
  for (Index i = 0; i < b.size(); ++i) {
    const double keep = b[i];
    b[i] = keep + 1e-6;
    const double up = loss();
    b[i] = keep - 1e-6;
    const double down = loss();
    b[i] = keep;
    if (std::abs(g.db[i]) > 1e-12 || std::abs((up - down) / 2e-6) > 1e-8) bias_err = 1;
  }
  return std::max({check(x, g.dx, loss), check(w, g.dw, loss), bias_err, check(gamma, bn.dgamma, loss),
                   check(beta, bn.dbeta, loss)});
}

/// The library's float cross-entropy gradient against finite differences
/// of -log softmax evaluated here in double.
inline double check_cross_entropy(qwid::Rng& rng) {
  DTensor logits = random(rng, Shape{4, 9}, -3, 3);
  std::vector<int> labels;
  for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(9)));
  const qwid::Loss l = qwid::cross_entropy(logits.cast<float>(), labels);
  auto loss = [&] {
    double total = 0;
    for (Index n = 0; n < 4; ++n) {
      double m = -INFINITY;
      for (Index c = 0; c < 9; ++c) m = std::max(m, logits[n * 9 + c]);
      double s = 0;
      for (Index c = 0; c < 9; ++c) s += std::exp(logits[n * 9 + c] - m);
      total += -(logits[n * 9 + labels[static_cast<std::size_t>(n)]] - m - std::log(s));
    }
    return total / 4;
  };
  const DTensor analytic = l.grad.cast<double>();
  // The analytic side is float; a 1e-6 floor would measure float rounding.
  double worst = 0;
  for (Index i = 0; i < logits.size(); ++i) {
    const double keep = logits[i];
    logits[i] = keep + 1e-6;
    const double up = loss();
    logits[i] = keep - 1e-6;
    const double down = loss();
    logits[i] = keep;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / 2e-6, 1e-3));
  }
  return worst;
}

/// Worst relative error per layer type over `trials` random instances.
inline std::map<std::string, double> all_layers(std::uint64_t seed, int trials = 3) {
  qwid::Rng rng(seed);
  std::map<std::string, double> out;
  auto keep = [&](const std::string& name, double e) { out[name] = std::max(out[name], e); };
  for (int t = 0; t < trials; ++t) {
    keep("conv", check_conv(rng, ConvSpec{1, 0}, 3));
    keep("conv", check_conv(rng, ConvSpec{2, 1}, 3));
    keep("conv", check_conv(rng, ConvSpec{1, 0}, 1));
    keep("linear", check_linear(rng));
    keep("relu", check_relu(rng));
    keep("add", check_add(rng));
    keep("concat", check_concat(rng));
    keep("maxpool", check_maxpool(rng, PoolSpec{2, 2}));
    keep("maxpool", check_maxpool(rng, PoolSpec{3, 1}));
    keep("gavgpool", check_gavgpool(rng));
    keep("batchnorm", check_batchnorm(rng));
    keep("conv_relu", check_conv_relu(rng));
    keep("conv_bn_relu", check_conv_bn_relu(rng));
    keep("cross_entropy", check_cross_entropy(rng));
  }
  return out;
}

}  // namespace gradcheck
