// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fairkd/budget.hpp"
#include "fairkd/config.hpp"
#include "fairkd/data.hpp"
#include "fairkd/report.hpp"

namespace fairkd {

struct RunSummary {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  std::size_t pretraining_runs = 0;
  std::size_t grid_searches = 0;
  std::size_t finetune_runs = 0;
  std::uint64_t training_steps = 0;

  void merge(const RunSummary& other);
};

/// Corpus, vocabulary and sequence pools derived from a config.
struct PreparedData {
  Vocab vocab;
  std::vector<Sequence> train;    // packed training pool
  std::vector<Sequence> heldout;  // evaluation sequences, never trained on
  std::vector<Sequence> limited;  // the repeated pool of the limited regime
  std::uint64_t limited_tokens = 0;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Stream feeding a student under `config`'s data regime.
TokenStream make_student_stream(const ExperimentConfig& config, const PreparedData& data,
                                std::uint64_t allowance);
/// Stream feeding the teacher (always fresh data when the corpus is synthetic).
TokenStream make_teacher_stream(const ExperimentConfig& config, const PreparedData& data,
                                std::uint64_t allowance);

/// Cost model of every configured strategy (scratch always included).
CostModel experiment_cost_model(const ExperimentConfig& config, std::size_t vocab_size,
                                std::uint64_t limited_tokens);
/// Human-readable cost table plus the reference-shaped allowance ratio.
std::string render_budget(const CostModel& model, ReportFormat format);

/// Runs the pipeline stages under an output directory.
///
/// Stages: data (vocab.txt), teacher (teacher.fkd, teacher.log.tsv), one
/// student:<strategy> per strategy (student_<strategy>.fkd/.log.tsv), one
/// probe:<strategy> per strategy (probe_<strategy>.tsv) and report
/// (report.tsv, report.md). Completed stages are recorded in manifest.tsv with
/// a fingerprint of every setting they depend on; a re-run skips stages whose
/// fingerprint and files are intact and redoes everything downstream of a
/// change.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::filesystem::path out_dir);
  ~Experiment();

  /// Progress lines; defaults to stderr plus run.log in the output directory.
  void set_progress(std::function<void(const std::string&)> sink);

  RunSummary pretrain_teacher();
  RunSummary pretrain_student(Strategy strategy);
  RunSummary finetune(Strategy strategy);
  RunSummary run();

  /// Re-renders the comparison table from the logs on disk.
  std::string render_report(ReportFormat format) const;

  const ExperimentConfig& config() const { return config_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

 private:
  struct State;
  std::unique_ptr<State> state_;
  ExperimentConfig config_;
  std::filesystem::path out_dir_;
};

/// Report rows and notes reconstructed from an output directory.
std::string render_report_from_dir(const std::filesystem::path& out_dir, ReportFormat format);

}  // namespace fairkd
