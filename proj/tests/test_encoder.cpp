// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fairkd/encoder.hpp"
#include "fairkd/gradcheck.hpp"
#include "fairkd/ops.hpp"
#include "test_util.hpp"

using namespace fairkd;

namespace {

Batch make_test_batch(std::size_t B, std::size_t s, const std::vector<std::int32_t>& ids,
                      const std::vector<std::uint8_t>& mask) {
  Batch b;
  b.batch_size = B;
  b.seq_len = s;
  b.token_ids = ids;
  b.attention_mask = mask;
  return b;
}

Batch random_batch(std::size_t B, std::size_t s, std::size_t V, std::mt19937_64& rng) {
  Batch b;
  b.batch_size = B;
  b.seq_len = s;
  std::uniform_int_distribution<std::int32_t> tok(5, static_cast<std::int32_t>(V) - 1);
  std::uniform_int_distribution<std::size_t> len(2, s);
  b.mlm_positions.resize(B);
  b.mlm_labels.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t n = len(rng);
    for (std::size_t p = 0; p < s; ++p) {
      b.token_ids.push_back(p < n ? tok(rng) : 0);
      b.attention_mask.push_back(p < n ? 1 : 0);
    }
    b.mlm_positions[i] = {n - 1};
    b.mlm_labels[i] = {tok(rng)};
  }
  return b;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("build_encoder: deterministic in the seed") {
  const auto cfg = make_config(2, 16, 4, 50, 8);
  auto a = build_encoder<float>(cfg, 7), b = build_encoder<float>(cfg, 7), c = build_encoder<float>(cfg, 8);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_same = all_same && bitwise_equal(pa[i].tensor, pb[i].tensor);
    any_diff = any_diff || !bitwise_equal(pa[i].tensor, pc[i].tensor);
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("build_encoder: truncated normal statistics") {
  const auto cfg = make_config(1, 128, 4, 1000, 64);
  auto w = build_encoder<double>(cfg, 21);
  auto v = w.token_embedding.values();
  REQUIRE(v.size() >= 100000);
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0, max_abs = 0;
  for (double x : v) {
    var += (x - mean) * (x - mean);
    max_abs = std::max(max_abs, std::abs(x));
  }
  const double sd = std::sqrt(var / static_cast<double>(v.size() - 1));
  CHECK(std::abs(mean) < 3 * sd / std::sqrt(static_cast<double>(v.size())));
  CHECK(max_abs <= 0.04);
  // A normal(0, 0.02) truncated at two standard deviations has stdev 0.02 * 0.8796.
  CHECK(sd == doctest::Approx(0.02 * 0.8796).epsilon(0.01));
  const auto f = build_encoder<float>(cfg, 1);
  for (float g : f.layers[0].ff_ln_gain.values()) CHECK(g == 1.0f);
  for (float b : f.layers[0].q_b.values()) CHECK(b == 0.0f);
}

TEST_CASE("EncoderConfig: hidden size must divide by heads") {
  auto cfg = make_config(2, 30, 4, 50, 8);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(build_encoder<float>(cfg, 1), ConfigError);
}

TEST_CASE("forward: output shapes") {
  const auto cfg = make_config(2, 64, 4, 1000, 32);
  auto w = build_encoder<float>(cfg, 3);
  std::mt19937_64 rng(1);
  auto out = forward(w, random_batch(3, 32, 1000, rng));
  CHECK(out.mlm_logits.shape() == Shape{3, 32, 1000});
  CHECK(out.embedding_output.shape() == Shape{3, 32, 64});
  REQUIRE(out.hidden_states.size() == 2);
  CHECK(out.hidden_states[1].shape() == Shape{3, 32, 64});
  CHECK(out.attention_logits[0].shape() == Shape{3, 4, 32, 32});
  CHECK(out.attention_dists[0].shape() == Shape{3, 4, 32, 32});
  CHECK(out.values[0].shape() == Shape{3, 4, 32, 16});
}

TEST_CASE("forward: single valid position gives a point mass") {
  const auto cfg = make_config(2, 16, 2, 20, 5);
  auto w = build_encoder<double>(cfg, 4);
  auto out = forward(w, make_test_batch(1, 5, {0, 0, 9, 0, 0}, {0, 0, 1, 0, 0}));
  for (const auto& dist : out.attention_dists) {
    auto v = dist.values();
    for (std::size_t row = 0; row < v.size() / 5; ++row) {
      for (std::size_t k = 0; k < 5; ++k) CHECK(v[row * 5 + k] == (k == 2 ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("forward: attention rows sum to one over valid keys") {
  const auto cfg = make_config(2, 16, 4, 30, 8);
  auto w = build_encoder<double>(cfg, 5);
  std::mt19937_64 rng(2);
  const Batch b = random_batch(3, 8, 30, rng);
  auto out = forward(w, b);
  auto v = out.attention_dists[1].values();
  for (std::size_t r = 0; r < v.size() / 8; ++r) {
    const std::size_t seq = r / (4 * 8);
    double total = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      if (!b.attention_mask[seq * 8 + k]) CHECK(v[r * 8 + k] == 0.0);
      total += v[r * 8 + k];
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("forward: permuting the batch permutes the outputs") {
  const auto cfg = make_config(2, 16, 4, 30, 6);
  auto w = build_encoder<double>(cfg, 6);
  std::mt19937_64 rng(3);
  Batch b = random_batch(3, 6, 30, rng);
  Batch p = b;
  const std::vector<std::size_t> perm = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      p.token_ids[i * 6 + j] = b.token_ids[perm[i] * 6 + j];
      p.attention_mask[i * 6 + j] = b.attention_mask[perm[i] * 6 + j];
    }
    p.mlm_positions[i] = b.mlm_positions[perm[i]];
    p.mlm_labels[i] = b.mlm_labels[perm[i]];
  }
  const auto out_b = forward(w, b), out_p = forward(w, p);
  auto ob = out_b.mlm_logits.values();
  auto op = out_p.mlm_logits.values();
  // GEMM rounding may depend on a row's place in the batch, so equality is
  // checked to double round-off rather than bitwise.
  const std::size_t stride = 6 * 30;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < stride; ++j) {
      CHECK(op[i * stride + j] == doctest::Approx(ob[perm[i] * stride + j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward: deterministic") {
  const auto cfg = make_config(2, 16, 4, 30, 6);
  auto w = build_encoder<float>(cfg, 6);
  std::mt19937_64 rng(4);
  const Batch b = random_batch(4, 6, 30, rng);
  CHECK(bitwise_equal(forward(w, b).mlm_logits, forward(w, b).mlm_logits));
}

TEST_CASE("forward: out-of-range id names its position") {
  const auto cfg = make_config(1, 8, 2, 11, 4);
  auto w = build_encoder<float>(cfg, 1);
  try {
    forward(w, make_test_batch(1, 4, {3, 5, 11, 4}, {1, 1, 1, 1}));
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("position 2") != std::string::npos);
  }
}

TEST_CASE("forward: identical tokens without positions give identical states") {
  auto cfg = make_config(2, 16, 4, 20, 6);
  auto w = build_encoder<double>(cfg, 9);
  for (double& v : w.position_embedding.mutable_values()) v = 0.0;
  auto out = forward(w, make_test_batch(1, 6, std::vector<std::int32_t>(6, 7), std::vector<std::uint8_t>(6, 1)));
  for (const auto& h : out.hidden_states) {
    auto v = h.values();
    for (std::size_t p = 1; p < 6; ++p) {
      for (std::size_t j = 0; j < 16; ++j) CHECK(v[p * 16 + j] == doctest::Approx(v[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("mlm_loss: reference values") {
  auto outputs_with = [](std::size_t rows, std::size_t V, std::vector<double> logits) {
    EncoderOutputs<double> o;
    o.mlm_logits = Tensor<double>::from({1, rows, V}, std::move(logits));
    return o;
  };
  auto batch_with = [](std::size_t s, std::vector<std::size_t> pos, std::vector<std::int32_t> lab) {
    Batch b = make_test_batch(1, s, std::vector<std::int32_t>(s, 5), std::vector<std::uint8_t>(s, 1));
    b.mlm_positions = {std::move(pos)};
    b.mlm_labels = {std::move(lab)};
    return b;
  };

  std::vector<double> confident(10, 0.0);
  confident[3] = 50.0;
  CHECK(mlm_loss(outputs_with(1, 10, confident), batch_with(1, {0}, {3})).item() < 1e-6);

  const double uniform = mlm_loss(outputs_with(1, 1000, std::vector<double>(1000, 0.0)), batch_with(1, {0}, {17})).item();
  CHECK(uniform == doctest::Approx(std::log(1000.0)).epsilon(1e-12));
  CHECK(uniform == doctest::Approx(6.9078).epsilon(1e-4));

  // Two positions: mean of independently computed per-position losses.
  std::mt19937_64 rng(5);
  auto logits = fairkd::testing::uniform_values(2 * 7, rng, -3, 3);
  auto per_position = [&](std::size_t row, std::size_t label) {
    double mx = -1e300;
    for (std::size_t j = 0; j < 7; ++j) mx = std::max(mx, logits[row * 7 + j]);
    double z = 0;
    for (std::size_t j = 0; j < 7; ++j) z += std::exp(logits[row * 7 + j] - mx);
    return -(logits[row * 7 + label] - mx - std::log(z));
  };
  const double expect = 0.5 * (per_position(0, 2) + per_position(1, 6));
  CHECK(mlm_loss(outputs_with(2, 7, logits), batch_with(2, {0, 1}, {2, 6})).item() ==
        doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(mlm_loss(outputs_with(1, 7, std::vector<double>(7, 0.0)), batch_with(1, {}, {})),
                  ValueError);
}

TEST_CASE("count_parameters: reference configurations") {
  EncoderConfig base = make_config(12, 768, 12, 30522, 512);
  REQUIRE(base.ff_dim == 3072);
  CHECK(std::abs(static_cast<double>(count_parameters(base)) - 110e6) <= 0.05 * 110e6);
  EncoderConfig six = make_config(6, 768, 12, 30522, 512);
  CHECK(std::abs(static_cast<double>(count_parameters(six)) - 67e6) <= 0.05 * 67e6);
}

TEST_CASE("count_parameters: hand summation and shape agreement") {
  EncoderConfig c = make_config(2, 8, 2, 11, 4);
  c.num_layers = 0;
  // token table, position table, embedding norm gain and bias, head bias (tied)
  CHECK(count_parameters(c) == 11 * 8 + 4 * 8 + 8 + 8 + 11);
  c.tie_lm_head = false;
  CHECK(count_parameters(c) == 11 * 8 + 4 * 8 + 8 + 8 + 8 * 11 + 11);

  for (bool tie : {true, false}) {
    EncoderConfig cfg = make_config(3, 16, 4, 23, 9, tie);
    cfg.ff_dim = 40;
    std::uint64_t total = 0;
    for (const auto& p : build_encoder<float>(cfg, 1).parameters()) total += p.tensor.size();
    CHECK(count_parameters(cfg) == total);
  }
}

TEST_CASE("pad positions receive no gradient") {
  auto cfg = make_config(2, 16, 4, 20, 6, /*tie_lm_head=*/false);
  auto w = build_encoder<double>(cfg, 12);
  Batch b = make_test_batch(2, 6, {3, 9, 11, 4, 0, 0, 3, 7, 4, 0, 0, 0}, {1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0});
  b.mlm_positions = {{1, 2}, {1}};
  b.mlm_labels = {{9, 11}, {7}};
  backward(mlm_loss(forward(w, b), b));
  auto g_tok = w.token_embedding.grad();
  for (std::size_t j = 0; j < 16; ++j) CHECK(g_tok[0 * 16 + j] == 0.0);  // PAD row
  auto g_pos = w.position_embedding.grad();
  for (std::size_t p = 4; p < 6; ++p) {
    for (std::size_t j = 0; j < 16; ++j) CHECK(g_pos[p * 16 + j] == 0.0);
  }
}

TEST_CASE("end-to-end gradient of the tiny encoder") {
  for (bool tie : {true, false}) {
    CAPTURE(tie);
    const auto cfg = make_config(1, 8, 2, 11, 4, tie);
    auto w = build_encoder<double>(cfg, 13);
    // Larger weights than the 0.02 init, so every path carries signal.
    std::mt19937_64 rng(14);
    for (const auto& p : w.parameters()) {
      Tensor<double> t = p.tensor;
      auto fresh = fairkd::testing::uniform_values(t.size(), rng, -0.5, 0.5);
      auto mv = t.mutable_values();
      for (std::size_t i = 0; i < mv.size(); ++i) mv[i] += fresh[i];
    }
    w.set_trainable(false);
    Batch b = make_test_batch(2, 4, {3, 8, 6, 4, 3, 2, 4, 0}, {1, 1, 1, 1, 1, 1, 1, 0});
    b.mlm_positions = {{1, 2}, {1}};
    b.mlm_labels = {{7, 10}, {5}};

    const auto params = w.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto f = [&](Tensor<double>& x) {
        auto copy = w;  // handles; swap parameter i for x
        auto swap = [&](Tensor<double>& slot) {
          if (slot.id() == params[i].tensor.id()) slot = x;
        };
        swap(copy.token_embedding);
        swap(copy.position_embedding);
        swap(copy.emb_ln_gain);
        swap(copy.emb_ln_bias);
        for (auto& l : copy.layers) {
          for (Tensor<double>* t : {&l.q_w, &l.q_b, &l.k_w, &l.k_b, &l.v_w, &l.v_b, &l.o_w, &l.o_b,
                                    &l.attn_ln_gain, &l.attn_ln_bias, &l.ff_in_w, &l.ff_in_b,
                                    &l.ff_out_w, &l.ff_out_b, &l.ff_ln_gain, &l.ff_ln_bias}) {
            swap(*t);
          }
        }
        if (copy.lm_head_w.defined()) swap(copy.lm_head_w);
        swap(copy.lm_head_b);
        return mlm_loss(forward(copy, b), b);
      };
      INFO(params[i].name);
      if (params[i].name.ends_with("attention.key.bias")) {
        // Adding a key bias shifts each score row by a constant, which softmax
        // ignores: the exact derivative is zero.
        Tensor<double> x = params[i].tensor.detach();
        x.set_requires_grad(true);
        backward(f(x));
        for (double g : x.grad()) CHECK(std::abs(g) < 1e-12);
        continue;
      }
      const auto report = finite_diff_check(f, params[i].tensor.detach());
      CHECK(report.non_finite.empty());
      CHECK(report.max_rel_error < 1e-4);
    }
  }
}
