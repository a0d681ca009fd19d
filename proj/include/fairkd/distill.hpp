// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairkd/encoder.hpp"
#include "fairkd/tensor.hpp"

namespace fairkd {

enum class Strategy { kScratch, kVanilla, kTinyBert, kMiniLM };

std::string_view strategy_name(Strategy s);
/// Accepts "scratch", "vanilla", "tinybert", "minilm" (case-insensitive).
Strategy parse_strategy(std::string_view name);
/// Layer-wise strategies consume attention maps and need equal head counts.
bool is_layerwise(Strategy s);

/// Trainable bridges from student width to teacher width (TinyBERT only).
template <typename T>
struct Projections {
  Tensor<T> embedding;  // W_e [d_student, d_teacher]
  Tensor<T> hidden;     // W_h [d_student, d_teacher]
};

/// Identity when the widths agree, truncated normal(0, 0.02) otherwise.
template <typename T>
Projections<T> make_projections(std::size_t d_student, std::size_t d_teacher, std::uint64_t seed);

template <typename T>
struct DistillSpec {
  Strategy strategy = Strategy::kScratch;
  double temperature = 1.0;
  double w_ce = 0.5;
  double w_pred = 0.5;
  Projections<T> projections;
  /// Shared head count A_h of teacher and student; 0 means "take it from the configs".
  std::size_t relation_heads = 0;
  /// Adds the student's MLM cross-entropy to the TinyBERT/MiniLM objectives.
  bool add_mlm_term = false;
  /// Evaluate the vanilla soft cross-entropy at every valid position instead
  /// of only the masked ones.
  bool soft_ce_all_positions = false;

  /// Rejects combinations the losses cannot serve (head-count mismatch,
  /// missing projections, bad temperature or weights).
  void validate(const EncoderConfig& student, const EncoderConfig& teacher) const;
};

/// Named scalar components of one objective evaluation.
template <typename T>
struct DistillTerms {
  Tensor<T> total;
  std::vector<std::pair<std::string, double>> components;
};

// Teacher-side inputs are always treated as constants.

template <typename T>
Tensor<T> vanilla_kd_loss(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits,
                          T temperature, std::span<const std::size_t> positions);

template <typename T>
Tensor<T> combined_vanilla_objective(const Tensor<T>& ce_loss, const Tensor<T>& pred_loss,
                                     double w_ce = 0.5, double w_pred = 0.5);

/// MSE(E_S W_e, E_T) over valid positions and every teacher channel.
template <typename T>
Tensor<T> tinybert_embedding_loss(const Tensor<T>& student_emb, const Tensor<T>& teacher_emb,
                                  const Tensor<T>& projection,
                                  std::span<const std::uint8_t> valid);

/// Mean over heads of the MSE between scaled pre-softmax scores, restricted
/// to (valid query, valid key) pairs.
template <typename T>
Tensor<T> tinybert_attention_loss(const Tensor<T>& student_scores, const Tensor<T>& teacher_scores,
                                  std::span<const std::uint8_t> valid);

template <typename T>
Tensor<T> tinybert_hidden_loss(const Tensor<T>& student_hidden, const Tensor<T>& teacher_hidden,
                               const Tensor<T>& projection, std::span<const std::uint8_t> valid);

/// Mean over (batch, head, valid query) of KL(teacher row || student row).
template <typename T>
Tensor<T> minilm_attention_kl(const Tensor<T>& teacher_dists, const Tensor<T>& student_dists,
                              std::span<const std::uint8_t> valid);

/// softmax(V V^T / sqrt(d_k)) per head on each side (pad keys masked), then
/// the mean KL over heads and valid query positions.
template <typename T>
Tensor<T> value_relation(const Tensor<T>& values, std::span<const std::uint8_t> valid);

template <typename T>
Tensor<T> minilm_value_relation_loss(const Tensor<T>& teacher_values,
                                     const Tensor<T>& student_values,
                                     std::span<const std::uint8_t> valid);

/// Strategy dispatch on the last layer:
///   vanilla  -> w_ce * L_CE + w_pred * L_pred
///   tinybert -> L_embd + L_att + L_hid
///   minilm   -> attention KL + L_VR
template <typename T>
DistillTerms<T> total_distill_objective(const DistillSpec<T>& spec,
                                        const EncoderOutputs<T>& teacher,
                                        const EncoderOutputs<T>& student, const Batch& batch);

}  // namespace fairkd
