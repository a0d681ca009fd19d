// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fairkd/budget.hpp"
#include "fairkd/encoder.hpp"

namespace fairkd {

/// Whitespace word vocabulary. Ids are dense from 0 and the five specials
/// occupy ids 0..4 in the order PAD, UNK, MASK, CLS, SEP.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kMask = 2;
  static constexpr std::int32_t kCls = 3;
  static constexpr std::int32_t kSep = 4;
  static constexpr std::int32_t kNumSpecial = 5;

  Vocab();
  /// Specials followed by `words` in id order. Duplicates are rejected.
  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  /// UNK for unknown words.
  std::int32_t id(std::string_view word) const;
  const std::string& token(std::int32_t id) const;
  static bool is_special(std::int32_t id) { return id >= 0 && id < kNumSpecial; }
  bool contains(std::string_view word) const;

  std::vector<std::int32_t> encode(std::string_view text) const;

  /// One non-special token per line; line n holds id n + 5.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

std::vector<std::string_view> whitespace_tokens(std::string_view text);

/// Most frequent whitespace tokens (frequency >= min_freq), at most
/// `max_size` of them, ties broken lexicographically.
Vocab build_vocab(std::string_view corpus, std::size_t max_size, std::size_t min_freq = 1);

/// Seed-determined Markov chain over a synthetic lexicon.
///
/// Word popularity follows a Zipf(1) law. In the first-order chain every word
/// has six successors drawn by popularity, weighted 0.40/0.25/0.15/0.10/0.06/
/// 0.04. In the second-order chain the pair (previous, current) selects two of
/// the current word's successors, weighted 0.7/0.3. Either chain restarts
/// from the popularity law with probability 0.02 per word.
class MarkovTextSource {
 public:
  /// `seed` fixes the lexicon and the chain; `stream` selects an independent
  /// sample path through the same chain.
  MarkovTextSource(std::uint64_t seed, std::size_t lexicon_size, int order,
                   std::uint64_t stream = 0);

  const std::vector<std::string>& lexicon() const { return lexicon_; }
  /// Index into lexicon() of the next word.
  std::size_t next_word();
  std::string_view next();

 private:
  std::size_t sample_popular();
  double uniform();

  std::uint64_t seed_;
  int order_;
  std::vector<std::string> lexicon_;
  std::vector<double> popularity_cdf_;
  std::vector<std::vector<std::size_t>> successors_;
  std::uint64_t rng_state_;
  std::size_t prev_ = 0, cur_ = 0;
  std::uint64_t emitted_ = 0;
};

/// `n_tokens` whitespace-separated words from a MarkovTextSource.
std::string synth_corpus(std::uint64_t seed, std::size_t n_tokens, std::size_t vocab_size, int order);

/// Every row has exactly seq_len ids, PAD-filled past the end.
using Sequence = std::vector<std::int32_t>;

/// CLS + (seq_len - 2) consecutive tokens + SEP per sequence; the final
/// remainder is terminated with SEP and padded.
std::vector<Sequence> pack_sequences(std::span<const std::int32_t> ids, std::size_t seq_len);
std::vector<Sequence> pack_sequences(std::string_view corpus, const Vocab& vocab, std::size_t seq_len);

/// Non-pad positions of one sequence.
std::size_t valid_tokens(const Sequence& seq);

/// BERT-style masking. Each non-special position is selected with
/// `mask_prob`; a selected position becomes MASK (80%), a uniformly random
/// non-special id (10%) or stays unchanged (10%). A sequence with no draw gets
/// its lowest eligible position selected. Fully determined by (seed, step).
Batch mask_batch(const std::vector<Sequence>& sequences, const Vocab& vocab, double mask_prob,
                 std::uint64_t seed, std::uint64_t step);

/// Batch with no masked-LM targets (for classification and evaluation).
Batch make_batch(const std::vector<Sequence>& sequences);

struct StreamSpec {
  DataMode regime = DataMode::kUnlimited;
  std::uint64_t token_allowance = 0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Budgeted sequence stream.
///
/// Emits exactly `token_allowance` valid tokens. When the allowance runs out
/// inside a sequence that sequence is cut to the remaining length (keeping its
/// leading CLS when at least two positions remain). The limited regime cycles
/// a fixed corpus in a per-epoch shuffled order; the unlimited regime walks a
/// corpus once, or draws from a generator without end.
class TokenStream {
 public:
  TokenStream(StreamSpec spec, std::vector<Sequence> corpus);
  TokenStream(StreamSpec spec, std::function<Sequence()> generator);

  /// Next batch of up to batch_size sequences, or nothing once the allowance
  /// is spent.
  std::optional<std::vector<Sequence>> next_batch();

  const StreamSpec& spec() const { return spec_; }
  std::uint64_t tokens_emitted() const { return emitted_; }
  std::size_t epoch_counter() const { return epoch_; }
  bool exhausted() const { return emitted_ >= spec_.token_allowance; }
  /// Valid tokens in one pass over the fixed corpus (0 for generators).
  std::uint64_t corpus_tokens() const { return corpus_tokens_; }

 private:
  Sequence next_sequence();

  StreamSpec spec_;
  std::vector<Sequence> corpus_;
  std::function<Sequence()> generator_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::uint64_t emitted_ = 0;
  std::uint64_t corpus_tokens_ = 0;
};

/// Packs words from a MarkovTextSource into sequences on demand.
std::function<Sequence()> markov_sequence_generator(std::shared_ptr<MarkovTextSource> source,
                                                    const Vocab& vocab, std::size_t seq_len);

}  // namespace fairkd
