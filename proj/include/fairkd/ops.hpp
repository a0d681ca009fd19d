// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "fairkd/tensor.hpp"

namespace fairkd {

// Differentiable primitives. Every op takes and returns Tensor handles and
// records a backward rule when any input requires a gradient. "Rows" always
// means slices along the last axis; leading axes are flattened.

/// a[..., k] * b[k, n] -> [..., n]. Shape mismatch names both shapes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a[..., k] * b[n, k]^T -> [..., n].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product over equal leading axes: a[..., m, k] * b[..., k, n].
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched a[..., m, k] * b[..., n, k]^T -> [..., m, n].
template <typename T>
Tensor<T> batched_matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x[..., n] + bias[n], broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Max-subtracted softmax over the last axis. Entries equal to -inf are
/// treated as masked out and receive probability 0; every row needs at least
/// one finite entry. NaN and +inf are rejected.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Per-row normalization to zero mean and unit (biased) variance, then
/// gain * xhat + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

/// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Row lookup: table[V, d] at `ids` -> index_shape + [d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, Shape index_shape);

/// Selects rows of x[N, D] (leading axes flattened) -> [R, D].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

/// [B, s, A*dk] -> [B, A, s, dk].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);

/// [B, A, s, dk] -> [B, s, A*dk].
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

/// Sets scores[b, a, q, k] to -inf wherever key k of sequence b is invalid.
/// `key_valid` is B*s flags.
template <typename T>
Tensor<T> mask_keys(const Tensor<T>& scores, std::span<const std::uint8_t> key_valid);

/// Mean over the selected rows of -log softmax(logits[row])[label].
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, std::span<const std::size_t> rows,
                             std::span<const std::int32_t> labels);

/// t^2 * mean over selected rows of -sum_v softmax(target/t)_v log softmax(logits/t)_v.
/// `target` is a constant: no gradient flows into it.
template <typename T>
Tensor<T> soft_cross_entropy_rows(const Tensor<T>& target, const Tensor<T>& logits,
                                  std::span<const std::size_t> rows, T temperature);

/// sum_{mask} (pred - target)^2 / count(mask). `target` is a constant.
/// An empty mask selects every element.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target,
                     std::span<const std::uint8_t> mask);

/// Mean over valid rows of KL(target_row || q_row); zero-probability target
/// entries contribute nothing. Rows of both inputs must sum to 1 within
/// 1e-4. `target` is a constant.
template <typename T>
Tensor<T> kl_rows(const Tensor<T>& target, const Tensor<T>& q,
                  std::span<const std::uint8_t> row_valid);

}  // namespace fairkd
