// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fairkd/data.hpp"
#include "fairkd/encoder.hpp"
#include "fairkd/train.hpp"

namespace fairkd {

/// Synthetic binary sequence-classification probes.
enum class ProbeKind {
  kContainsPattern,  // does the bigram (a, b) occur anywhere
  kCountParity,      // is the number of occurrences of token a even
  kMajoritySymbol,   // does token a occur more often than token b
  kFirstToken,       // is the first content token in the lower half of the vocabulary
};

std::string_view probe_name(ProbeKind kind);
ProbeKind parse_probe(std::string_view name);
/// The three probes reported in the comparison table.
std::vector<ProbeKind> default_probes();

struct ProbeTask {
  ProbeKind kind = ProbeKind::kContainsPattern;
  std::uint64_t seed = 0;
  std::size_t train_size = 512;
  std::size_t dev_size = 256;
  std::size_t seq_len = 32;
  std::size_t vocab_size = 0;
};

struct ProbeExample {
  Sequence ids;
  std::int32_t label = 0;
};

struct ProbeData {
  std::vector<ProbeExample> train, dev;
};

/// Balanced labels; no sequence appears in both splits. Each sequence is CLS,
/// seq_len - 2 content ids from [5, vocab_size), SEP.
ProbeData generate_probe(const ProbeTask& task);

struct FinetuneOptions {
  std::size_t epochs = 5;
  AdamWConfig adamw;
};

struct FinetuneResult {
  double dev_accuracy = 0.0;
  std::uint64_t steps = 0;
};

/// Fine-tunes a copy of `encoder` plus a linear classifier on the CLS state
/// with AdamW and a linearly decaying learning rate; returns dev accuracy.
FinetuneResult finetune_probe(const EncoderWeights<float>& encoder, const ProbeData& data,
                              std::size_t batch_size, double lr, std::uint64_t seed,
                              const FinetuneOptions& options = {});

struct GridPoint {
  std::size_t batch_size = 0;
  double lr = 0.0;
  double dev_accuracy = 0.0;
};

struct GridResult {
  GridPoint best;
  std::vector<GridPoint> points;
};

struct GridOptions {
  std::vector<std::size_t> batch_sizes = {16, 32};
  std::vector<double> learning_rates = {1e-5, 3e-5, 5e-5, 8e-5};
  FinetuneOptions finetune;
  std::uint64_t seed = 0;
};

/// Runs every (batch size, lr) point and keeps the best dev accuracy. Ties go
/// to the lower learning rate, then the smaller batch.
GridResult grid_search(const EncoderWeights<float>& encoder, const ProbeTask& task,
                       const GridOptions& options = {});

}  // namespace fairkd
