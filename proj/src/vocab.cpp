// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <map>

#include "fairkd/data.hpp"
#include "fairkd/error.hpp"

namespace fairkd {
namespace {

const char* const kSpecialNames[] = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"};

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) {
  tokens_.reserve(kNumSpecial + words.size());
  for (const char* name : kSpecialNames) {
    index_.emplace(name, static_cast<std::int32_t>(tokens_.size()));
    tokens_.emplace_back(name);
  }
  for (const auto& w : words) {
    if (w.empty() || std::any_of(w.begin(), w.end(), is_space)) {
      throw ValueError("vocab: token '" + w + "' is empty or contains whitespace");
    }
    if (!index_.emplace(w, static_cast<std::int32_t>(tokens_.size())).second) {
      throw ValueError("vocab: duplicate token '" + w + "'");
    }
    tokens_.push_back(w);
  }
}

std::int32_t Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValueError("vocab: id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

std::vector<std::int32_t> Vocab::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (auto w : whitespace_tokens(text)) ids.push_back(id(w));
  return ids;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocab file " + path.string());
  for (std::size_t i = kNumSpecial; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw IoError("write failed for vocab file " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocab file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  return Vocab(words);
}

std::vector<std::string_view> whitespace_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocab build_vocab(std::string_view corpus, std::size_t max_size, std::size_t min_freq) {
  std::map<std::string_view, std::size_t> counts;
  for (auto w : whitespace_tokens(corpus)) ++counts[w];
  if (counts.empty()) throw ValueError("build_vocab: corpus has no tokens");
  std::vector<std::pair<std::string_view, std::size_t>> ranked;
  for (const auto& [w, c] : counts) {
    if (c >= min_freq && std::find(std::begin(kSpecialNames), std::end(kSpecialNames), w) ==
                             std::end(kSpecialNames)) {
      ranked.emplace_back(w, c);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size) ranked.resize(max_size);
  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (const auto& r : ranked) words.emplace_back(r.first);
  return Vocab(words);
}

}  // namespace fairkd
