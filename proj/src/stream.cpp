// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <random>

#include "fairkd/data.hpp"
#include "fairkd/error.hpp"
#include "rng.hpp"

namespace fairkd {
namespace {

void check_spec(const StreamSpec& spec) {
  if (spec.token_allowance == 0) throw ValueError("token stream: allowance must be positive");
  if (spec.batch_size == 0) throw ValueError("token stream: batch_size must be positive");
}

// Keeps the first `r` valid positions; a lone CLS is swapped for the first
// content token so the sequence stays maskable.
Sequence truncate_to(const Sequence& seq, std::size_t r) {
  Sequence out(seq.size(), Vocab::kPad);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < seq.size() && kept < r; ++i) {
    if (seq[i] == Vocab::kPad) continue;
    out[kept++] = seq[i];
  }
  if (r == 1 && Vocab::is_special(out[0])) {
    auto it = std::find_if(seq.begin(), seq.end(),
                           [](std::int32_t t) { return !Vocab::is_special(t); });
    if (it != seq.end()) out[0] = *it;
  }
  return out;
}

}  // namespace

TokenStream::TokenStream(StreamSpec spec, std::vector<Sequence> corpus)
    : spec_(spec), corpus_(std::move(corpus)) {
  check_spec(spec_);
  if (corpus_.empty()) throw ValueError("token stream: corpus has no sequences");
  for (const auto& s : corpus_) corpus_tokens_ += valid_tokens(s);
  if (corpus_tokens_ == 0) throw ValueError("token stream: corpus has no tokens");
  order_.resize(corpus_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  cursor_ = corpus_.size();
}

TokenStream::TokenStream(StreamSpec spec, std::function<Sequence()> generator)
    : spec_(spec), generator_(std::move(generator)) {
  check_spec(spec_);
  if (spec_.regime != DataMode::kUnlimited) {
    throw ConfigError("token stream: a generator source only serves the unlimited regime");
  }
  if (!generator_) throw ValueError("token stream: empty generator");
}

Sequence TokenStream::next_sequence() {
  if (generator_) {
    if (epoch_ == 0) epoch_ = 1;
    return generator_();
  }
  if (cursor_ == corpus_.size()) {
    if (spec_.regime == DataMode::kUnlimited && epoch_ > 0) {
      throw ValueError("token stream: unlimited regime exhausted the corpus after " +
                       std::to_string(emitted_) + " tokens; a larger corpus is needed");
    }
    ++epoch_;
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (spec_.regime == DataMode::kLimited) {
      std::mt19937_64 gen = detail::make_engine(spec_.seed, epoch_, 0x65706F63u);
      for (std::size_t i = order_.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(gen() % i);
        std::swap(order_[i - 1], order_[j]);
      }
    }
    cursor_ = 0;
  }
  return corpus_[order_[cursor_++]];
}

std::optional<std::vector<Sequence>> TokenStream::next_batch() {
  if (exhausted()) return std::nullopt;
  std::vector<Sequence> batch;
  batch.reserve(spec_.batch_size);
  while (batch.size() < spec_.batch_size && !exhausted()) {
    Sequence seq = next_sequence();
    const std::uint64_t n = valid_tokens(seq);
    if (n == 0) continue;
    const std::uint64_t remaining = spec_.token_allowance - emitted_;
    if (n > remaining) {
      seq = truncate_to(seq, static_cast<std::size_t>(remaining));
      emitted_ += remaining;
    } else {
      emitted_ += n;
    }
    batch.push_back(std::move(seq));
  }
  return batch;
}

}  // namespace fairkd
