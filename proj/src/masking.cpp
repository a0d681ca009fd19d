// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "fairkd/data.hpp"
#include "fairkd/error.hpp"
#include "rng.hpp"

namespace fairkd {
namespace {

void fill_ids(const std::vector<Sequence>& sequences, Batch& batch) {
  if (sequences.empty()) throw ValueError("batch: no sequences");
  batch.batch_size = sequences.size();
  batch.seq_len = sequences.front().size();
  if (batch.seq_len == 0) throw ValueError("batch: empty sequence");
  batch.token_ids.reserve(batch.batch_size * batch.seq_len);
  batch.attention_mask.reserve(batch.batch_size * batch.seq_len);
  for (const auto& seq : sequences) {
    if (seq.size() != batch.seq_len) {
      throw ShapeError("batch: sequences have different lengths (" + std::to_string(seq.size()) +
                       " vs " + std::to_string(batch.seq_len) + ")");
    }
    for (auto t : seq) {
      batch.token_ids.push_back(t);
      batch.attention_mask.push_back(t != Vocab::kPad ? 1 : 0);
    }
  }
  batch.mlm_positions.assign(batch.batch_size, {});
  batch.mlm_labels.assign(batch.batch_size, {});
}

}  // namespace

Batch make_batch(const std::vector<Sequence>& sequences) {
  Batch batch;
  fill_ids(sequences, batch);
  return batch;
}

Batch mask_batch(const std::vector<Sequence>& sequences, const Vocab& vocab, double mask_prob,
                 std::uint64_t seed, std::uint64_t step) {
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) {
    throw ValueError("mask_batch: mask_prob must lie in (0, 1]");
  }
  const auto vsize = static_cast<std::int64_t>(vocab.size());
  if (vsize <= Vocab::kNumSpecial) throw ValueError("mask_batch: vocabulary has no ordinary tokens");
  Batch batch;
  fill_ids(sequences, batch);

  std::mt19937_64 gen = detail::make_engine(seed, step, 0x6D61736Bu);
  auto uniform = [&gen] { return detail::uniform01(gen); };

  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    std::int32_t* row = batch.token_ids.data() + b * batch.seq_len;
    auto& positions = batch.mlm_positions[b];
    auto& labels = batch.mlm_labels[b];
    std::size_t first_eligible = batch.seq_len;
    auto corrupt = [&](std::size_t i) {
      positions.push_back(i);
      labels.push_back(row[i]);
      const double r = uniform();
      if (r < 0.8) {
        row[i] = Vocab::kMask;
      } else if (r < 0.9) {
        row[i] = static_cast<std::int32_t>(
            Vocab::kNumSpecial +
            static_cast<std::int64_t>(uniform() * static_cast<double>(vsize - Vocab::kNumSpecial)));
      }
    };
    for (std::size_t i = 0; i < batch.seq_len; ++i) {
      if (row[i] < 0 || row[i] >= vsize) {
        throw ValueError("mask_batch: token id " + std::to_string(row[i]) + " at sequence " +
                         std::to_string(b) + " position " + std::to_string(i) +
                         " is outside the vocabulary");
      }
      if (Vocab::is_special(row[i])) continue;
      if (first_eligible == batch.seq_len) first_eligible = i;
      if (uniform() < mask_prob) corrupt(i);
    }
    if (first_eligible == batch.seq_len) {
      throw ValueError("mask_batch: sequence " + std::to_string(b) + " has no maskable token");
    }
    if (positions.empty()) corrupt(first_eligible);
  }
  return batch;
}

}  // namespace fairkd
