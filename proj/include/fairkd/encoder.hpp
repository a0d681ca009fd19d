// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairkd/tensor.hpp"

namespace fairkd {

/// Architecture hyperparameters of a BERT-style encoder.
struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 64;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 256;
  std::size_t vocab_size = 1000;
  std::size_t max_seq_len = 128;
  bool tie_lm_head = true;
  double layer_norm_eps = 1e-12;

  std::size_t head_dim() const { return hidden_size / num_heads; }

  /// Throws ConfigError when any extent is zero or hidden_size % num_heads != 0.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

/// Convenience for the common case ff_dim = 4 * hidden.
EncoderConfig make_config(std::size_t layers, std::size_t hidden, std::size_t heads,
                          std::size_t vocab, std::size_t max_seq_len, bool tie_lm_head = true);

template <typename T>
struct LayerWeights {
  Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Tensor<T> attn_ln_gain, attn_ln_bias;
  Tensor<T> ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  Tensor<T> ff_ln_gain, ff_ln_bias;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  /// Weight decay applies only to matrices, not to biases and norm gains.
  bool decay;
};

template <typename T>
struct EncoderWeights {
  EncoderConfig config;
  Tensor<T> token_embedding;     // [V, d]
  Tensor<T> position_embedding;  // [s, d]
  Tensor<T> emb_ln_gain, emb_ln_bias;
  std::vector<LayerWeights<T>> layers;
  Tensor<T> lm_head_w;  // [d, V]; undefined when tied to token_embedding
  Tensor<T> lm_head_b;  // [V]

  /// Canonical, stable ordering used by checkpoints and the optimizer.
  std::vector<NamedParameter<T>> parameters() const;

  /// Marks every parameter as frozen (no gradients) or trainable.
  void set_trainable(bool trainable) const;

  /// Deep copy with no shared storage.
  EncoderWeights clone() const;

  template <typename U>
  EncoderWeights<U> cast() const;
};

/// Truncated-normal(0, 0.02, +-2 stdev) matrices, zero biases, unit norm
/// gains; fully determined by `seed`.
template <typename T>
EncoderWeights<T> build_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Token batch. Row-major [batch, seq_len] ids and validity flags plus
/// masked-LM targets for each sequence.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> token_ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::vector<std::size_t>> mlm_positions;
  std::vector<std::vector<std::int32_t>> mlm_labels;

  std::size_t num_masked() const;
  /// Flat row index b * seq_len + position of every masked slot.
  std::vector<std::size_t> masked_rows() const;
  std::vector<std::int32_t> flat_labels() const;
  /// Number of valid (non-pad) positions.
  std::size_t num_tokens() const;
  /// Throws on inconsistent sizes or masked positions outside the valid region.
  void validate() const;
};

/// Every activation a distillation objective can consume.
template <typename T>
struct EncoderOutputs {
  Tensor<T> embedding_output;               // [B, s, d], after the embedding norm
  std::vector<Tensor<T>> hidden_states;     // L x [B, s, d]
  std::vector<Tensor<T>> attention_logits;  // L x [B, A, s, s], scaled, pad keys = -inf
  std::vector<Tensor<T>> attention_dists;   // L x [B, A, s, s]
  std::vector<Tensor<T>> values;            // L x [B, A, s, dk]
  Tensor<T> mlm_logits;                     // [B, s, V]; undefined if not requested

  const Tensor<T>& last_hidden() const;
};

struct ForwardOptions {
  bool compute_mlm_logits = true;
};

template <typename T>
EncoderOutputs<T> forward(const EncoderWeights<T>& weights, const Batch& batch,
                          const ForwardOptions& options = {});

/// Mean hard-label cross-entropy over the batch's masked positions.
template <typename T>
Tensor<T> mlm_loss(const EncoderOutputs<T>& outputs, const Batch& batch);

/// Exact parameter count implied by the weight shapes.
std::uint64_t count_parameters(const EncoderConfig& config);

extern template struct EncoderWeights<float>;
extern template struct EncoderWeights<double>;

}  // namespace fairkd
