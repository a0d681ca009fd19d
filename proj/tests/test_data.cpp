// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "fairkd/data.hpp"
#include "test_util.hpp"

using namespace fairkd;

namespace {

// Plug-in estimate of H(next word | current word) in nats.
double conditional_entropy(const std::string& text) {
  const auto words = whitespace_tokens(text);
  std::map<std::string_view, std::map<std::string_view, double>> counts;
  for (std::size_t i = 0; i + 1 < words.size(); ++i) counts[words[i]][words[i + 1]] += 1;
  double total = static_cast<double>(words.size() - 1), h = 0;
  for (const auto& [w, next] : counts) {
    double n = 0;
    for (const auto& [_, c] : next) n += c;
    for (const auto& [_, c] : next) h -= (c / total) * std::log(c / n);
  }
  return h;
}

std::vector<Sequence> numbered_corpus(std::size_t n_seqs, std::size_t seq_len) {
  std::vector<std::int32_t> ids;
  for (std::size_t i = 0; i < n_seqs * (seq_len - 2); ++i) ids.push_back(5 + static_cast<std::int32_t>(i % 40));
  return pack_sequences(ids, seq_len);
}

}  // namespace

TEST_CASE("build_vocab: frequency order, min_freq, lexicographic ties") {
  auto v = build_vocab("a a b", 10);
  REQUIRE(v.size() == 7);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.token(Vocab::kSep) == "[SEP]");
  CHECK(v.id("a") == 5);
  CHECK(v.id("b") == 6);

  auto m = build_vocab("a a b", 10, 2);
  CHECK(m.size() == 6);
  CHECK(m.id("b") == Vocab::kUnk);

  auto t = build_vocab("b a b a", 10);
  CHECK(t.id("a") == 5);
  CHECK(t.id("b") == 6);

  auto capped = build_vocab("c c c b b a", 2);
  CHECK(capped.size() == 7);
  CHECK(capped.id("a") == Vocab::kUnk);

  CHECK_THROWS(build_vocab("   \n\t ", 10));
}

TEST_CASE("Vocab: specials, encode, save and load") {
  Vocab v({"x", "y", "z"});
  for (std::int32_t id = 0; id < Vocab::kNumSpecial; ++id) CHECK(Vocab::is_special(id));
  CHECK_FALSE(Vocab::is_special(5));
  CHECK(v.encode("y x  q\nz") == std::vector<std::int32_t>{6, 5, Vocab::kUnk, 7});
  CHECK_THROWS(Vocab({"x", "x"}));

  fairkd::testing::TempDir dir("vocab");
  v.save(dir.path() / "vocab.txt");
  std::ifstream in(dir.path() / "vocab.txt");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  CHECK(lines == std::vector<std::string>{"x", "y", "z"});
  auto back = Vocab::load(dir.path() / "vocab.txt");
  CHECK(back.size() == v.size());
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(v.size()); ++id) CHECK(back.token(id) == v.token(id));
}

TEST_CASE("synth_corpus: deterministic, exact length, order-2 structure") {
  const auto a = synth_corpus(5, 1000, 50, 2), b = synth_corpus(5, 1000, 50, 2);
  CHECK(a == b);
  CHECK(a != synth_corpus(6, 1000, 50, 2));
  CHECK(whitespace_tokens(a).size() == 1000);
  CHECK(whitespace_tokens(synth_corpus(1, 777, 20, 1)).size() == 777);

  const double h1 = conditional_entropy(synth_corpus(9, 200000, 50, 1));
  const double h2 = conditional_entropy(synth_corpus(9, 200000, 50, 2));
  MESSAGE("conditional entropy order 1: " << h1 << ", order 2: " << h2);
  CHECK(h2 < h1);

  CHECK_THROWS(synth_corpus(1, 10, 9, 1));
  CHECK_THROWS(synth_corpus(1, 10, 20, 3));
}

TEST_CASE("pack_sequences: layout and round trip") {
  std::vector<std::int32_t> ids(10);
  std::iota(ids.begin(), ids.end(), 5);

  auto seqs = pack_sequences(ids, 8);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0] == Sequence{3, 5, 6, 7, 8, 9, 10, 4});
  CHECK(seqs[1] == Sequence{3, 11, 12, 13, 14, 4, 0, 0});
  // Seven positions hold five tokens each: two full sequences.
  auto seven = pack_sequences(ids, 7);
  REQUIRE(seven.size() == 2);
  CHECK(valid_tokens(seven[1]) == 7);

  const std::string text = synth_corpus(3, 5000, 60, 2);
  const Vocab vocab = build_vocab(text, 1000);
  const auto packed = pack_sequences(text, vocab, 16);
  std::vector<std::int32_t> restored;
  for (const auto& s : packed) {
    CHECK(s.size() == 16);
    CHECK(s[0] == Vocab::kCls);
    CHECK(std::count(s.begin(), s.end(), Vocab::kSep) == 1);
    for (auto id : s)
      if (!Vocab::is_special(id)) restored.push_back(id);
  }
  CHECK(restored == vocab.encode(text));
}

TEST_CASE("mask_batch: limit case, determinism and forced selection") {
  Vocab vocab({"a", "b", "c", "d", "e", "f"});
  std::vector<Sequence> seqs = {{3, 5, 6, 7, 4, 0}, {3, 8, 9, 10, 6, 4}};

  auto all = mask_batch(seqs, vocab, 1.0, 1, 0);
  CHECK(all.mlm_positions[0] == std::vector<std::size_t>{1, 2, 3});
  CHECK(all.mlm_positions[1] == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(all.mlm_labels[1] == std::vector<std::int32_t>{8, 9, 10, 6});

  auto a = mask_batch(seqs, vocab, 0.3, 42, 7), b = mask_batch(seqs, vocab, 0.3, 42, 7);
  CHECK(a.token_ids == b.token_ids);
  CHECK(a.mlm_positions == b.mlm_positions);
  CHECK(a.mlm_labels == b.mlm_labels);

  auto rare = mask_batch(seqs, vocab, 1e-12, 3, 0);
  CHECK(rare.mlm_positions[0] == std::vector<std::size_t>{1});
  CHECK(rare.mlm_positions[1] == std::vector<std::size_t>{1});

  CHECK_THROWS(mask_batch({{3, 4, 0, 0}}, vocab, 0.15, 1, 0));
  CHECK_THROWS(mask_batch(seqs, vocab, 0.0, 1, 0));
  CHECK_THROWS(mask_batch({{3, 5, 99, 4}}, vocab, 0.15, 1, 0));
}

TEST_CASE("mask_batch: selection statistics") {
  const std::string text = synth_corpus(4, 130000, 200, 2);
  const Vocab vocab = build_vocab(text, 1000);
  auto seqs = pack_sequences(text, vocab, 64);
  std::size_t eligible = 0, selected = 0, to_mask = 0, kept = 0, random = 0;
  for (std::size_t start = 0; start < seqs.size(); start += 64) {
    std::vector<Sequence> chunk(seqs.begin() + start, seqs.begin() + std::min(seqs.size(), start + 64));
    const Batch b = mask_batch(chunk, vocab, 0.15, 11, start);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::set<std::size_t> chosen(b.mlm_positions[i].begin(), b.mlm_positions[i].end());
      for (std::size_t p = 0; p < 64; ++p) {
        const auto original = chunk[i][p];
        const auto now = b.token_ids[i * 64 + p];
        if (Vocab::is_special(original)) {
          CHECK(chosen.count(p) == 0);
          CHECK(now == original);
          continue;
        }
        ++eligible;
        if (!chosen.count(p)) {
          CHECK(now == original);
          continue;
        }
        ++selected;
        if (now == Vocab::kMask) ++to_mask;
        else if (now == original) ++kept;
        else ++random;
      }
      for (std::size_t k = 0; k < b.mlm_positions[i].size(); ++k) {
        CHECK(b.mlm_labels[i][k] == chunk[i][b.mlm_positions[i][k]]);
        CHECK(b.mlm_labels[i][k] != Vocab::kMask);
      }
    }
  }
  REQUIRE(eligible >= 100000);
  const double rate = static_cast<double>(selected) / static_cast<double>(eligible);
  const double fm = static_cast<double>(to_mask) / static_cast<double>(selected);
  const double fr = static_cast<double>(random) / static_cast<double>(selected);
  const double fk = static_cast<double>(kept) / static_cast<double>(selected);
  MESSAGE("rate " << rate << " mask " << fm << " random " << fr << " kept " << fk);
  CHECK(std::abs(rate - 0.15) <= 0.005);
  CHECK(std::abs(fm - 0.80) <= 0.01);
  // A random replacement can draw the original token; it then counts as kept.
  CHECK(std::abs(fr - 0.10) <= 0.01);
  CHECK(std::abs(fk - 0.10) <= 0.01);
}

TEST_CASE("TokenStream: limited regime cycles with per-epoch shuffles") {
  const auto corpus = numbered_corpus(100, 12);
  std::uint64_t corpus_tokens = 0;
  for (const auto& s : corpus) corpus_tokens += valid_tokens(s);

  StreamSpec spec;
  spec.regime = DataMode::kLimited;
  spec.token_allowance = 5 * corpus_tokens;
  spec.batch_size = 7;
  spec.seed = 3;
  TokenStream stream(spec, corpus);
  CHECK(stream.corpus_tokens() == corpus_tokens);
  std::vector<Sequence> emitted;
  while (auto batch = stream.next_batch()) {
    CHECK(batch->size() <= 7);
    emitted.insert(emitted.end(), batch->begin(), batch->end());
  }
  CHECK(stream.epoch_counter() == 5);
  CHECK(stream.tokens_emitted() == spec.token_allowance);
  REQUIRE(emitted.size() == 500);

  std::multiset<Sequence> reference(corpus.begin(), corpus.end());
  std::vector<std::vector<Sequence>> epochs;
  for (std::size_t e = 0; e < 5; ++e) {
    epochs.emplace_back(emitted.begin() + e * 100, emitted.begin() + (e + 1) * 100);
    CHECK(std::multiset<Sequence>(epochs[e].begin(), epochs[e].end()) == reference);
  }
  for (std::size_t e = 1; e < 5; ++e) CHECK(epochs[e] != epochs[e - 1]);
}

TEST_CASE("TokenStream: allowance met exactly with a truncated tail") {
  const auto corpus = numbered_corpus(20, 10);
  for (std::uint64_t allowance : {1ULL, 2ULL, 9ULL, 11ULL, 57ULL, 199ULL}) {
    CAPTURE(allowance);
    StreamSpec spec;
    spec.regime = DataMode::kLimited;
    spec.token_allowance = allowance;
    spec.batch_size = 4;
    TokenStream stream(spec, corpus);
    std::uint64_t counted = 0;
    Sequence last;
    while (auto batch = stream.next_batch()) {
      for (const auto& s : *batch) counted += valid_tokens(s);
      last = batch->back();
    }
    CHECK(counted == allowance);
    CHECK(stream.tokens_emitted() == allowance);
    CHECK(std::any_of(last.begin(), last.end(), [](auto t) { return !Vocab::is_special(t); }));
    CHECK_FALSE(stream.next_batch().has_value());
  }
}

TEST_CASE("TokenStream: determinism, unlimited corpus exhaustion, generators") {
  const auto corpus = numbered_corpus(30, 10);
  auto drain = [&](std::uint64_t seed) {
    StreamSpec spec;
    spec.regime = DataMode::kLimited;
    spec.token_allowance = 700;
    spec.batch_size = 8;
    spec.seed = seed;
    TokenStream stream(spec, corpus);
    std::vector<Sequence> out;
    while (auto b = stream.next_batch()) out.insert(out.end(), b->begin(), b->end());
    return out;
  };
  CHECK(drain(1) == drain(1));
  CHECK(drain(1) != drain(2));

  StreamSpec once;
  once.token_allowance = 1000;
  once.batch_size = 8;
  TokenStream walk(once, corpus);
  CHECK_THROWS_AS([&] { while (walk.next_batch()) {} }(), ValueError);

  StreamSpec gen_spec;
  gen_spec.token_allowance = 5000;
  gen_spec.batch_size = 16;
  auto source = std::make_shared<MarkovTextSource>(2, 50, 2, 1);
  const Vocab vocab(source->lexicon());
  TokenStream gen(gen_spec, markov_sequence_generator(source, vocab, 32));
  std::uint64_t n = 0;
  while (auto b = gen.next_batch()) {
    for (const auto& s : *b) {
      CHECK(s.size() == 32);
      n += valid_tokens(s);
    }
  }
  CHECK(n == 5000);
  CHECK(gen.epoch_counter() == 1);

  StreamSpec limited_gen = gen_spec;
  limited_gen.regime = DataMode::kLimited;
  CHECK_THROWS(TokenStream(limited_gen, markov_sequence_generator(source, vocab, 32)));
  CHECK_THROWS(TokenStream(gen_spec, std::vector<Sequence>{}));
}
