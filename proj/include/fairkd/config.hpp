// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairkd/budget.hpp"
#include "fairkd/distill.hpp"
#include "fairkd/encoder.hpp"
#include "fairkd/probe.hpp"

namespace fairkd {

struct ModelSection {
  std::size_t layers = 2;
  std::size_t hidden = 128;
  std::size_t heads = 4;
  /// 0 means 4 * hidden.
  std::size_t ff_dim = 0;
  bool tie_lm_head = true;
};

struct DataSection {
  DataMode mode = DataMode::kUnlimited;
  /// Plain-text corpus; empty selects the synthetic Markov corpus.
  std::string corpus_path;
  std::size_t corpus_tokens = 2'000'000;
  std::size_t lexicon_size = 500;
  int markov_order = 2;
  std::size_t max_vocab = 30'000;
  std::size_t min_freq = 1;
  std::size_t seq_len = 64;
  /// Size of the repeated corpus in the limited regime (valid tokens, before packing).
  std::size_t limited_tokens = 100'000;
  std::size_t heldout_sequences = 128;
};

struct TeacherSection {
  ModelSection model{4, 128, 4, 0, true};
  /// Pretraining length of the teacher in tokens.
  std::uint64_t tokens = 400'000;
  double peak_lr = 1e-3;
};

struct PretrainSection {
  std::size_t batch_size = 64;
  double mask_prob = 0.15;
  double warmup = 0.06;
  double weight_decay = 0.01;
  double peak_lr_scratch = 1e-3;
  double peak_lr_distill = 5e-4;
  std::size_t grad_accumulation = 1;
  std::size_t log_every = 10;
  double temperature = 1.0;
  double w_ce = 0.5;
  double w_pred = 0.5;
  bool add_mlm_term = false;
};

struct FinetuneSection {
  std::vector<ProbeKind> tasks = default_probes();
  std::size_t train_size = 256;
  std::size_t dev_size = 128;
  std::size_t seq_len = 24;
  std::size_t epochs = 5;
  std::vector<std::size_t> batch_sizes = {16, 32};
  std::vector<double> learning_rates = {1e-5, 3e-5, 5e-5, 8e-5};
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::vector<Strategy> strategies = {Strategy::kScratch, Strategy::kVanilla, Strategy::kTinyBert,
                                      Strategy::kMiniLM};
  DataSection data;
  TeacherSection teacher;
  ModelSection student{2, 128, 4, 0, true};
  std::uint64_t flop_budget = 0;
  bool count_teacher_lm_head = true;
  PretrainSection pretrain;
  FinetuneSection finetune;

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Model configs once the vocabulary size is known.
  EncoderConfig teacher_config(std::size_t vocab_size) const;
  EncoderConfig student_config(std::size_t vocab_size) const;
};

/// INI sections [experiment], [data], [teacher], [student], [budget],
/// [pretrain], [finetune]. Unknown sections or keys are rejected.
ExperimentConfig parse_config(const std::string& ini_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Sets one "section.key" to `value` with the same parsing as the INI reader,
/// then re-validates.
void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value);
/// Canonical INI rendering; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);

}  // namespace fairkd
