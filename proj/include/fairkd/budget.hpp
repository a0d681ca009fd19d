// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairkd/distill.hpp"
#include "fairkd/encoder.hpp"

namespace fairkd {

enum class DataMode { kUnlimited, kLimited };

std::string_view data_mode_name(DataMode m);
DataMode parse_data_mode(std::string_view name);

/// Total training compute in FLOPs plus the data regime it is spent in.
struct BudgetSpec {
  std::uint64_t flop_budget = 0;
  DataMode data_mode = DataMode::kUnlimited;
  /// Valid tokens in one pass over the corpus; limited mode only.
  std::uint64_t corpus_token_count = 0;
  /// Charge the teacher's LM head to vanilla KD (layer-wise strategies never
  /// materialize teacher logits).
  bool count_teacher_lm_head = true;

  void validate() const;
};

/// The backward pass is costed at exactly twice the forward pass.
inline constexpr std::uint64_t kBackwardMultiplier = 2;

/// Forward FLOPs per token:
///   L * (8 d^2 + 4 d ff + 4 s d) + (include_lm_head ? 2 d V : 0)
/// The four attention projections cost 8 d^2, the feed-forward block 4 d ff
/// (16 d^2 at ff = 4d) and the score/context products 4 s d. Norms,
/// activations, softmax and embedding lookups are not charged.
std::uint64_t forward_flops_per_token(const EncoderConfig& config, std::size_t seq_len,
                                      bool include_lm_head);

/// Training cost per token:
///   scratch -> 3 * C_fwd(student)
///   KD      -> 3 * C_fwd(student) + C_fwd(teacher)
/// The student's LM head is always charged; the teacher's only for vanilla KD
/// when `count_teacher_lm_head`. Distillation-loss arithmetic is free.
std::uint64_t train_step_flops_per_token(Strategy strategy, const EncoderConfig& student,
                                         const std::optional<EncoderConfig>& teacher,
                                         std::size_t seq_len, bool count_teacher_lm_head = true);

/// floor(flop_budget / per_token_cost).
std::uint64_t tokens_under_budget(const BudgetSpec& budget, std::uint64_t per_token_cost);

/// token_allowance / corpus_tokens.
double epochs_required(std::uint64_t token_allowance, std::uint64_t corpus_tokens);

/// One row of the per-strategy cost table.
struct CostRow {
  Strategy strategy;
  std::uint64_t student_forward;
  std::uint64_t teacher_forward;  // 0 for scratch
  std::uint64_t per_token;
  std::uint64_t token_allowance;
  double epochs;  // limited mode only, else 0
};

/// Per-strategy costs and allowances under one budget.
struct CostModel {
  BudgetSpec budget;
  std::size_t seq_len = 0;
  std::vector<CostRow> rows;

  const CostRow& row(Strategy s) const;
  /// Allowance(scratch) / allowance(s).
  double allowance_ratio(Strategy s) const;
};

CostModel build_cost_model(const BudgetSpec& budget, const EncoderConfig& student,
                           const std::optional<EncoderConfig>& teacher, std::size_t seq_len,
                           const std::vector<Strategy>& strategies);

/// Student L=6 / teacher L=12 at d=768, A=12, V=30522, s=128 with the teacher
/// head counted: the analytic scratch/KD allowance ratio.
double reference_allowance_ratio();

/// Measured throughput ratio of the reference runs, 4.6B / 2.6B tokens.
inline constexpr double kMeasuredThroughputRatio = 4.6 / 2.6;

}  // namespace fairkd
