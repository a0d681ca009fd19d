// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fairkd/budget.hpp"
#include "fairkd/data.hpp"
#include "fairkd/distill.hpp"
#include "fairkd/encoder.hpp"

namespace fairkd {

/// Linear warmup to `peak_lr` over the first `warmup` fraction of training,
/// then linear decay to zero at fraction 1. Fractions outside [0, 1] are
/// clamped with a warning on stderr.
double lr_at(double step_fraction, double peak_lr, double warmup = 0.06);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::uint64_t rejected = 0;
  std::vector<std::vector<double>> m, v;
};

template <typename T>
OptimizerState make_optimizer_state(const std::vector<NamedParameter<T>>& params,
                                    const AdamWConfig& config = {});

/// One AdamW update: the bias-corrected Adam step plus decoupled weight decay
/// on decayed parameters, p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
/// Frozen parameters are skipped. A step whose gradients contain NaN or inf is
/// rejected: nothing changes, the incident is logged and false is returned.
template <typename T>
bool adamw_step(const std::vector<NamedParameter<T>>& params, OptimizerState& state, double lr);

/// One logged optimizer step. Loss components absent for the strategy are NaN.
struct TrainRecord {
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = std::numeric_limits<double>::quiet_NaN();
  double mlm = std::numeric_limits<double>::quiet_NaN();
  double pred = std::numeric_limits<double>::quiet_NaN();
  double embd = std::numeric_limits<double>::quiet_NaN();
  double att = std::numeric_limits<double>::quiet_NaN();
  double hid = std::numeric_limits<double>::quiet_NaN();
  double att_kl = std::numeric_limits<double>::quiet_NaN();
  double vr = std::numeric_limits<double>::quiet_NaN();
};

struct EvalMetrics {
  double mlm = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::string strategy;
  std::uint64_t token_allowance = 0;
  std::uint64_t flops_per_token = 0;
  std::uint64_t tokens_trained = 0;
  std::uint64_t steps = 0;
  std::uint64_t rejected_steps = 0;
  std::size_t epochs = 0;
  EvalMetrics initial_eval, final_eval;
  std::vector<TrainRecord> records;

  /// Tab-separated: '#'-prefixed summary lines, a header row, one row per record.
  std::string to_tsv() const;
  static TrainLog from_tsv(const std::string& text);
};

struct PretrainOptions {
  std::size_t seq_len = 128;
  double mask_prob = 0.15;
  /// 0 picks 1e-3 for scratch and 5e-4 for the distillation strategies.
  double peak_lr = 0.0;
  double warmup = 0.06;
  AdamWConfig adamw;
  std::size_t grad_accumulation = 1;
  std::size_t log_every = 10;
  std::uint64_t seed = 0;
  /// Held-out sequences scored before and after training; may be empty.
  std::vector<Sequence> eval_sequences;
  std::function<void(const TrainRecord&)> on_log;
};

struct PretrainResult {
  EncoderWeights<float> student;
  Projections<float> projections;
  TrainLog log;
};

double default_peak_lr(Strategy strategy);

/// Trains a fresh student on `stream` until its token allowance is spent.
///
/// The allowance of the stream must equal the budget divided by the
/// strategy's per-token cost. `teacher` is required for every strategy but
/// scratch; it is frozen and only run forward.
PretrainResult pretrain(const EncoderConfig& student_config, DistillSpec<float> spec,
                        const EncoderWeights<float>* teacher, const Vocab& vocab,
                        const BudgetSpec& budget, TokenStream& stream,
                        const PretrainOptions& options);

/// Masked-LM loss and strategy objective on fixed held-out sequences, masked
/// deterministically from `seed`.
EvalMetrics evaluate_pretraining(const EncoderWeights<float>& student,
                                 const DistillSpec<float>& spec,
                                 const EncoderWeights<float>* teacher, const Vocab& vocab,
                                 const std::vector<Sequence>& sequences, double mask_prob,
                                 std::uint64_t seed, std::size_t batch_size = 64);

}  // namespace fairkd
