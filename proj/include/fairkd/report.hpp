// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fairkd {

enum class ReportFormat { kTsv, kMarkdown };

ReportFormat parse_report_format(std::string_view name);

/// One pretraining strategy's results. Task metrics are accuracies in [0, 1].
struct ReportRow {
  std::string strategy;
  std::uint64_t tokens = 0;
  std::vector<double> task_metrics;
};

/// A row after rounding: per-task percentages to one decimal, the average of
/// those printed values, and its difference from the scratch row's average.
struct RenderedRow {
  std::string strategy;
  std::uint64_t tokens = 0;
  std::vector<double> task_percent;
  double avg = 0.0;
  /// Absent (printed "--") for the scratch baseline itself.
  bool has_delta = false;
  double delta = 0.0;
};

/// Half away from zero, to one decimal.
double round1(double x);

/// Requires exactly one row named "scratch" and a metric for every task.
std::vector<RenderedRow> render_rows(const std::vector<std::string>& tasks,
                                     const std::vector<ReportRow>& rows);

/// Fixed-width one-decimal formatting with an explicit sign ("+1.5", "-0.4").
std::string signed1(double x);
/// 4600000000 -> "4.6B", 312000 -> "312.0K".
std::string human_tokens(std::uint64_t tokens);

/// Table with columns Strategy, Tokens, one per task, Avg and Delta, followed
/// by the note lines.
std::string emit_report(const std::vector<std::string>& tasks, const std::vector<ReportRow>& rows,
                        ReportFormat format, const std::vector<std::string>& notes = {});

}  // namespace fairkd
