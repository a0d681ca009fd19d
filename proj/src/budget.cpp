// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/budget.hpp"

#include <algorithm>
#include <cctype>

namespace fairkd {

std::string_view data_mode_name(DataMode m) {
  return m == DataMode::kUnlimited ? "unlimited" : "limited";
}

DataMode parse_data_mode(std::string_view name) {
  if (name == "unlimited") return DataMode::kUnlimited;
  if (name == "limited") return DataMode::kLimited;
  throw ConfigError("unknown data mode '" + std::string(name) + "' (expected unlimited|limited)");
}

void BudgetSpec::validate() const {
  if (flop_budget == 0) throw ConfigError("budget: flop_budget must be positive");
  if (data_mode == DataMode::kLimited && corpus_token_count == 0) {
    throw ConfigError("budget: limited data mode needs a positive corpus token count");
  }
}

std::uint64_t forward_flops_per_token(const EncoderConfig& c, std::size_t seq_len,
                                      bool include_lm_head) {
  const std::uint64_t d = c.hidden_size, ff = c.ff_dim, s = seq_len;
  const std::uint64_t per_layer = 8 * d * d + 4 * d * ff + 4 * s * d;
  return c.num_layers * per_layer + (include_lm_head ? 2 * d * c.vocab_size : 0);
}

std::uint64_t train_step_flops_per_token(Strategy strategy, const EncoderConfig& student,
                                         const std::optional<EncoderConfig>& teacher,
                                         std::size_t seq_len, bool count_teacher_lm_head) {
  const std::uint64_t student_cost =
      (1 + kBackwardMultiplier) * forward_flops_per_token(student, seq_len, true);
  if (strategy == Strategy::kScratch) return student_cost;
  if (!teacher) {
    throw ConfigError("cost model: strategy '" + std::string(strategy_name(strategy)) +
                      "' needs a teacher config");
  }
  const bool teacher_head = strategy == Strategy::kVanilla && count_teacher_lm_head;
  return student_cost + forward_flops_per_token(*teacher, seq_len, teacher_head);
}

std::uint64_t tokens_under_budget(const BudgetSpec& budget, std::uint64_t per_token_cost) {
  if (per_token_cost == 0) throw ValueError("tokens_under_budget: per-token cost must be positive");
  return budget.flop_budget / per_token_cost;
}

double epochs_required(std::uint64_t token_allowance, std::uint64_t corpus_tokens) {
  if (corpus_tokens == 0) throw ValueError("epochs_required: corpus is empty");
  return static_cast<double>(token_allowance) / static_cast<double>(corpus_tokens);
}

const CostRow& CostModel::row(Strategy s) const {
  auto it = std::find_if(rows.begin(), rows.end(), [s](const CostRow& r) { return r.strategy == s; });
  if (it == rows.end()) {
    throw ValueError("cost model has no row for '" + std::string(strategy_name(s)) + "'");
  }
  return *it;
}

double CostModel::allowance_ratio(Strategy s) const {
  return static_cast<double>(row(Strategy::kScratch).token_allowance) /
         static_cast<double>(row(s).token_allowance);
}

CostModel build_cost_model(const BudgetSpec& budget, const EncoderConfig& student,
                           const std::optional<EncoderConfig>& teacher, std::size_t seq_len,
                           const std::vector<Strategy>& strategies) {
  budget.validate();
  CostModel model;
  model.budget = budget;
  model.seq_len = seq_len;
  for (Strategy s : strategies) {
    CostRow r{};
    r.strategy = s;
    r.student_forward = forward_flops_per_token(student, seq_len, true);
    if (s != Strategy::kScratch) {
      if (!teacher) throw ConfigError("cost model: KD strategies need a teacher config");
      r.teacher_forward = forward_flops_per_token(
          *teacher, seq_len, s == Strategy::kVanilla && budget.count_teacher_lm_head);
    }
    r.per_token = train_step_flops_per_token(s, student, teacher, seq_len, budget.count_teacher_lm_head);
    r.token_allowance = tokens_under_budget(budget, r.per_token);
    r.epochs = budget.data_mode == DataMode::kLimited
                   ? epochs_required(r.token_allowance, budget.corpus_token_count)
                   : 0.0;
    model.rows.push_back(r);
  }
  return model;
}

double reference_allowance_ratio() {
  const EncoderConfig student = make_config(6, 768, 12, 30522, 512);
  const EncoderConfig teacher = make_config(12, 768, 12, 30522, 512);
  const auto scratch = train_step_flops_per_token(Strategy::kScratch, student, std::nullopt, 128);
  const auto kd = train_step_flops_per_token(Strategy::kVanilla, student, teacher, 128, true);
  return static_cast<double>(kd) / static_cast<double>(scratch);
}

}  // namespace fairkd
