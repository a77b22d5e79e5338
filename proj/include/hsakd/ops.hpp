// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hsakd/tensor.hpp"

namespace hsakd {

// Elementwise; operands must have identical shapes and dtypes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);

/// Adds a per-channel bias along axis 1: x is [B, C, ...], bias is [C].
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// [M, K] x [K, N] -> [M, N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// NCHW convolution. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding);
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     std::size_t stride, std::size_t padding) {
  return conv2d(input, kernel, Tensor{}, stride, padding);
}

/// max(x, 0); the subgradient at 0 is 0.
Tensor relu(const Tensor& x);

/// [B, C, H, W] -> [B, C].
Tensor global_avg_pool(const Tensor& x);

/// Unpadded max pooling; ties route the gradient to the lowest flat index.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

Tensor reshape(const Tensor& x, Shape shape);

/// Numerically stable log-softmax along `axis`.
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// x is [B, K]; picks x[b, cols[b]] for every row -> [B].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> cols);

/// Selects whole rows (first axis) -> [rows.size(), ...].
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Full reductions to a rank-0 scalar.
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

/// sum(exp(t) * (t - s)) over all entries, where t and s are log-probability
/// tensors of identical shape. t is a constant: no gradient flows into it.
Tensor kl_div(const Tensor& teacher_log_probs, const Tensor& student_log_probs);

/// Attributes for the generic primitive entry point.
struct PrimitiveAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t kernel = 2;
  std::size_t axis = 1;
  double scalar = 1.0;
  Shape shape;
  std::vector<std::size_t> indices;
};

/// Dispatches to the typed primitive functions above.
Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs,
                       const PrimitiveAttrs& attrs = {});

}  // namespace hsakd
