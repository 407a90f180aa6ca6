// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor ops. Elementwise binaries require identical shapes,
// except that either operand may be a single-element tensor.
// Image-like tensors are C x H x W (no batch axis).

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maskapprox/tensor.hpp"

namespace maskapprox {

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// d|x|/dx is taken as 0 at x == 0.
Tensor abs(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over `axis`, which is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Structure.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open range [start, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end);
/// Transpose of a rank-2 tensor.
Tensor transpose(const Tensor& x);
/// Rows of `table` (V x D) selected by `ids`; result is ids.size() x D.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
/// Adds `bias` (length x.dim(axis)) broadcast along every other axis.
Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis);
/// Multiplies by `factors` (length x.dim(axis)) broadcast along every other axis.
Tensor scale_along(const Tensor& x, const Tensor& factors, std::size_t axis);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation. x: Ci x H x W, kernel: Co x Ci x kh x kw.
/// Output extent (H + 2 pad - kh) / stride + 1 must divide exactly.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad);
/// Adjoint of conv2d with respect to its input. x: Ci x H x W, kernel: Ci x Co x kh x kw.
/// Output extent (H - 1) stride - 2 pad + kh.
Tensor transpose_conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
                        std::size_t pad);
/// Non-overlapping average pooling with window and stride `factor`.
Tensor avg_pool2d(const Tensor& x, std::size_t factor);
/// Bilinear resampling with half-pixel centres (align_corners = false).
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

// Normalization and probabilities.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Normalizes the last axis, then applies per-feature gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// x: C x H x W split into `groups` channel groups; gamma, beta have length C.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Losses.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);
/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
/// Rows whose target equals `ignore_index` are excluded.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::size_t ignore_index);

}  // namespace maskapprox
