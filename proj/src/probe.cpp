// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>
#include <set>

#include "fairkd/error.hpp"
#include "fairkd/probe.hpp"
#include "rng.hpp"

namespace fairkd {
namespace {

class ProbeRng {
 public:
  ProbeRng(std::uint64_t seed, std::uint64_t stream)
      : gen_(detail::make_engine(seed, stream, 0x70726F62u)) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  std::int32_t token(std::int32_t lo, std::int32_t hi) {
    return lo + static_cast<std::int32_t>(below(static_cast<std::size_t>(hi - lo)));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace

std::string_view probe_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::kContainsPattern: return "contains-pattern";
    case ProbeKind::kCountParity: return "count-parity";
    case ProbeKind::kMajoritySymbol: return "majority-symbol";
    case ProbeKind::kFirstToken: return "first-token";
  }
  return "?";
}

ProbeKind parse_probe(std::string_view name) {
  for (ProbeKind k : {ProbeKind::kContainsPattern, ProbeKind::kCountParity,
                      ProbeKind::kMajoritySymbol, ProbeKind::kFirstToken}) {
    if (probe_name(k) == name) return k;
  }
  throw ConfigError("unknown probe task '" + std::string(name) + "'");
}

std::vector<ProbeKind> default_probes() {
  return {ProbeKind::kContainsPattern, ProbeKind::kCountParity, ProbeKind::kMajoritySymbol};
}

ProbeData generate_probe(const ProbeTask& task) {
  if (task.vocab_size < Vocab::kNumSpecial + 8) {
    throw ConfigError("probe: vocab_size must leave at least 8 ordinary tokens");
  }
  if (task.seq_len < 8) throw ConfigError("probe: seq_len must be at least 8");
  if (task.train_size < 2 || task.dev_size < 2) throw ConfigError("probe: splits need >= 2 examples");
  const auto lo = static_cast<std::int32_t>(Vocab::kNumSpecial);
  const auto hi = static_cast<std::int32_t>(task.vocab_size);
  const std::size_t body = task.seq_len - 2;
  ProbeRng rng(task.seed, static_cast<std::uint64_t>(task.kind));

  // Task symbols, distinct.
  const std::int32_t sym_a = rng.token(lo, hi);
  std::int32_t sym_b = rng.token(lo, hi);
  while (sym_b == sym_a) sym_b = rng.token(lo, hi);
  auto filler = [&] {
    std::int32_t t;
    do {
      t = rng.token(lo, hi);
    } while (t == sym_a || t == sym_b);
    return t;
  };
  auto place = [&](std::vector<std::int32_t>& c, std::int32_t sym, std::size_t count) {
    std::vector<std::size_t> free_slots;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c[i] != sym_a && c[i] != sym_b) free_slots.push_back(i);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + rng.below(free_slots.size() - k);
      std::swap(free_slots[k], free_slots[j]);
      c[free_slots[k]] = sym;
    }
  };

  auto make = [&](std::int32_t label) {
    std::vector<std::int32_t> c(body);
    for (auto& t : c) t = filler();
    switch (task.kind) {
      case ProbeKind::kContainsPattern:
        if (label == 1) {
          const std::size_t i = rng.below(body - 1);
          c[i] = sym_a;
          c[i + 1] = sym_b;
        }
        // Scatter lone copies of both symbols so the pair order matters.
        place(c, sym_a, rng.below(2));
        place(c, sym_b, rng.below(2));
        for (std::size_t i = 0; label == 0 && i + 1 < body; ++i) {
          if (c[i] == sym_a && c[i + 1] == sym_b) c[i + 1] = filler();
        }
        break;
      case ProbeKind::kCountParity: {
        const std::size_t k = 2 * rng.below(3) + (label == 1 ? 0 : 1);
        place(c, sym_a, std::min(k, body));
        break;
      }
      case ProbeKind::kMajoritySymbol: {
        std::size_t more = 2 + rng.below(4);
        std::size_t less = 1 + rng.below(more - 1);
        place(c, label == 1 ? sym_a : sym_b, std::min(more, body / 2));
        place(c, label == 1 ? sym_b : sym_a, std::min(less, body / 2 - 1));
        break;
      }
      case ProbeKind::kFirstToken: {
        const std::int32_t mid = lo + (hi - lo) / 2;
        c[0] = label == 1 ? rng.token(lo, mid) : rng.token(mid, hi);
        break;
      }
    }
    Sequence s(task.seq_len, Vocab::kPad);
    s[0] = Vocab::kCls;
    std::copy(c.begin(), c.end(), s.begin() + 1);
    s[task.seq_len - 1] = Vocab::kSep;
    return s;
  };

  std::set<Sequence> seen;
  auto fill = [&](std::vector<ProbeExample>& out, std::size_t n) {
    std::size_t attempts = 0;
    while (out.size() < n) {
      const std::int32_t label = static_cast<std::int32_t>(out.size() % 2);
      Sequence s = make(label);
      if (++attempts > 100 * n) throw ValueError("probe: could not generate distinct examples");
      if (!seen.insert(s).second) continue;
      out.push_back({std::move(s), label});
    }
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  };
  ProbeData data;
  fill(data.train, task.train_size);
  fill(data.dev, task.dev_size);
  return data;
}

}  // namespace fairkd
