// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_set>

#include "fairkd/data.hpp"
#include "fairkd/error.hpp"

namespace fairkd {
namespace {

constexpr std::size_t kSuccessors = 6;
constexpr std::array<double, kSuccessors> kSuccessorWeights = {0.40, 0.25, 0.15, 0.10, 0.06, 0.04};
constexpr double kRestartProb = 0.02;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = a ^ (b * 0xD6E8FEB86659FD93ULL) ^ (c * 0xA0761D6478BD642FULL);
  return splitmix64(s);
}

std::vector<std::string> make_lexicon(std::uint64_t seed, std::size_t n) {
  static constexpr std::string_view kOnset = "bdfgklmnprstvz";
  static constexpr std::string_view kVowel = "aeiou";
  std::uint64_t state = seed ^ 0x6C65786963616CULL;
  std::unordered_set<std::string> seen;
  std::vector<std::string> words;
  words.reserve(n);
  std::size_t syllables = 2;
  std::size_t failures = 0;
  while (words.size() < n) {
    std::string w;
    for (std::size_t k = 0; k < syllables; ++k) {
      w += kOnset[splitmix64(state) % kOnset.size()];
      w += kVowel[splitmix64(state) % kVowel.size()];
    }
    if (seen.insert(w).second) {
      words.push_back(std::move(w));
      failures = 0;
    } else if (++failures > 64) {
      ++syllables;
      failures = 0;
    }
  }
  return words;
}

}  // namespace

MarkovTextSource::MarkovTextSource(std::uint64_t seed, std::size_t lexicon_size, int order,
                                   std::uint64_t stream)
    : seed_(seed), order_(order), rng_state_(seed ^ 0x6D61726B6F76ULL) {
  if (lexicon_size < 10) throw ValueError("synthetic corpus: vocab_size must be at least 10");
  if (order != 1 && order != 2) throw ValueError("synthetic corpus: order must be 1 or 2");
  lexicon_ = make_lexicon(seed, lexicon_size);

  popularity_cdf_.resize(lexicon_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < lexicon_size; ++i) {
    acc += 1.0 / static_cast<double>(i + 1);
    popularity_cdf_[i] = acc;
  }
  for (auto& c : popularity_cdf_) c /= acc;

  successors_.resize(lexicon_size);
  for (std::size_t w = 0; w < lexicon_size; ++w) {
    auto& succ = successors_[w];
    while (succ.size() < kSuccessors) {
      std::size_t cand = sample_popular();
      if (std::find(succ.begin(), succ.end(), cand) == succ.end()) succ.push_back(cand);
    }
  }
  if (stream != 0) rng_state_ = mix(seed, stream, 0x73747265616DULL);
}

double MarkovTextSource::uniform() {
  return static_cast<double>(splitmix64(rng_state_) >> 11) * 0x1.0p-53;
}

std::size_t MarkovTextSource::sample_popular() {
  const double u = uniform();
  auto it = std::upper_bound(popularity_cdf_.begin(), popularity_cdf_.end(), u);
  return std::min<std::size_t>(it - popularity_cdf_.begin(), popularity_cdf_.size() - 1);
}

std::size_t MarkovTextSource::next_word() {
  std::size_t next;
  if (emitted_ == 0 || uniform() < kRestartProb) {
    next = sample_popular();
  } else if (order_ == 1) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < kSuccessors; ++k) {
      acc += kSuccessorWeights[k];
      if (u < acc) break;
    }
    next = successors_[cur_][k];
  } else {
    const std::uint64_t h = mix(seed_, prev_ + 1, cur_ + 1);
    const std::size_t first = h % kSuccessors;
    const std::size_t second = (first + 1 + (h >> 16) % (kSuccessors - 1)) % kSuccessors;
    next = successors_[cur_][uniform() < 0.7 ? first : second];
  }
  prev_ = emitted_ == 0 ? next : cur_;
  cur_ = next;
  ++emitted_;
  return next;
}

std::string_view MarkovTextSource::next() { return lexicon_[next_word()]; }

std::string synth_corpus(std::uint64_t seed, std::size_t n_tokens, std::size_t vocab_size, int order) {
  MarkovTextSource source(seed, vocab_size, order);
  std::string text;
  text.reserve(n_tokens * 7);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    text += source.next();
    text += (i + 1) % 32 == 0 ? '\n' : ' ';
  }
  return text;
}

std::vector<Sequence> pack_sequences(std::span<const std::int32_t> ids, std::size_t seq_len) {
  if (seq_len < 3) throw ValueError("pack_sequences: seq_len must be at least 3");
  const std::size_t body = seq_len - 2;
  std::vector<Sequence> out;
  out.reserve(ids.size() / body + 1);
  for (std::size_t start = 0; start < ids.size(); start += body) {
    const std::size_t n = std::min(body, ids.size() - start);
    Sequence seq(seq_len, Vocab::kPad);
    seq[0] = Vocab::kCls;
    std::copy_n(ids.begin() + static_cast<std::ptrdiff_t>(start), n, seq.begin() + 1);
    seq[n + 1] = Vocab::kSep;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<Sequence> pack_sequences(std::string_view corpus, const Vocab& vocab, std::size_t seq_len) {
  const auto ids = vocab.encode(corpus);
  return pack_sequences(std::span<const std::int32_t>(ids), seq_len);
}

std::size_t valid_tokens(const Sequence& seq) {
  return static_cast<std::size_t>(
      std::count_if(seq.begin(), seq.end(), [](std::int32_t t) { return t != Vocab::kPad; }));
}

std::function<Sequence()> markov_sequence_generator(std::shared_ptr<MarkovTextSource> source,
                                                    const Vocab& vocab, std::size_t seq_len) {
  if (seq_len < 3) throw ValueError("markov_sequence_generator: seq_len must be at least 3");
  std::vector<std::int32_t> word_ids;
  word_ids.reserve(source->lexicon().size());
  for (const auto& w : source->lexicon()) word_ids.push_back(vocab.id(w));
  return [source = std::move(source), word_ids = std::move(word_ids), seq_len]() {
    Sequence seq(seq_len, Vocab::kPad);
    seq[0] = Vocab::kCls;
    for (std::size_t i = 1; i + 1 < seq_len; ++i) seq[i] = word_ids[source->next_word()];
    seq[seq_len - 1] = Vocab::kSep;
    return seq;
  };
}

}  // namespace fairkd
