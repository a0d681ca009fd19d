// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fairkd/distill.hpp"
#include "fairkd/encoder.hpp"
#include "fairkd/gradcheck.hpp"
#include "fairkd/ops.hpp"
#include "test_util.hpp"

using namespace fairkd;
using fairkd::testing::random_tensor;

namespace {

using T = Tensor<double>;

// -sum_v p_v log q_v for p = softmax(a / t), q = softmax(b / t), times t^2.
double soft_ce_oracle(const std::vector<double>& a, const std::vector<double>& b, double t) {
  auto softmax = [t](const std::vector<double>& z) {
    long double mx = -1e300L, total = 0;
    for (double v : z) mx = std::max(mx, static_cast<long double>(v / t));
    std::vector<long double> p;
    for (double v : z) {
      p.push_back(std::exp(v / t - mx));
      total += p.back();
    }
    for (auto& v : p) v /= total;
    return p;
  };
  const auto p = softmax(a), q = softmax(b);
  long double ce = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ce -= p[i] * std::log(q[i]);
  return static_cast<double>(t * t * ce);
}

double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  long double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) kl += p[i] * std::log(static_cast<long double>(p[i]) / q[i]);
  }
  return static_cast<double>(kl);
}

// Mean squared difference over entries of [rows, cols] matrices whose row is valid.
double mse_oracle(std::span<const double> a, std::span<const double> b, std::size_t cols,
                  const std::vector<std::uint8_t>& row_valid) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < row_valid.size(); ++r) {
    if (!row_valid[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = a[r * cols + c] - b[r * cols + c];
      total += d * d;
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

// Student-side projection computed without the library's matmul.
std::vector<double> project(const T& x, const T& w) {
  const std::size_t rows = x.size() / w.extent(0), k = w.extent(0), n = w.extent(1);
  std::vector<double> out(rows * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < k; ++i) out[r * n + j] += x.values()[r * k + i] * w.values()[i * n + j];
  return out;
}

T identity(std::size_t d) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  return T::from({d, d}, std::move(v));
}

Batch tiny_batch() {
  Batch b;
  b.batch_size = 2;
  b.seq_len = 5;
  b.token_ids = {3, 8, 2, 9, 4, 3, 2, 6, 4, 0};
  b.attention_mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
  b.mlm_positions = {{2, 3}, {1}};
  b.mlm_labels = {{7, 9}, {10}};
  return b;
}

}  // namespace

TEST_CASE("vanilla_kd_loss: reference values") {
  const std::vector<std::size_t> row0 = {0};
  CHECK(vanilla_kd_loss(T::from({1, 2}, {0, 0}), T::from({1, 2}, {0, 0}), 1.0, row0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::mt19937_64 rng(1);
  T teacher = random_tensor({1, 9}, rng, -4, 4);
  CHECK(vanilla_kd_loss(teacher, T::zeros({1, 9}), 1.0, row0).item() ==
        doctest::Approx(std::log(9.0)).epsilon(1e-12));

  const double v = vanilla_kd_loss(T::from({1, 2}, {1, 0}), T::from({1, 2}, {0, 1}), 1.0, row0).item();
  CHECK(v == doctest::Approx(soft_ce_oracle({1, 0}, {0, 1}, 1.0)).epsilon(1e-12));
  CHECK(std::abs(v - 1.0444) < 1e-3);

  for (double t : {0.5, 2.0, 4.0}) {
    const double got = vanilla_kd_loss(T::from({1, 3}, {1, -2, 0.5}), T::from({1, 3}, {0.3, 0.1, -1}), t, row0).item();
    CHECK(got == doctest::Approx(soft_ce_oracle({1, -2, 0.5}, {0.3, 0.1, -1}, t)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(vanilla_kd_loss(T::zeros({1, 2}), T::zeros({1, 2}), 0.0, row0), ValueError);
  CHECK_THROWS_AS(vanilla_kd_loss(T::zeros({1, 2}), T::zeros({1, 2}), -1.0, row0), ValueError);
}

TEST_CASE("vanilla_kd_loss: only selected positions, teacher detached") {
  std::mt19937_64 rng(2);
  T zt = random_tensor({3, 4}, rng, -2, 2, true), zs = random_tensor({3, 4}, rng, -2, 2, true);
  const std::vector<std::size_t> rows = {0, 2};
  auto loss = vanilla_kd_loss(zt, zs, 2.0, rows);
  auto row = [](const T& x, std::size_t r) {
    return std::vector<double>(x.values().begin() + r * 4, x.values().begin() + r * 4 + 4);
  };
  const double expect = 0.5 * (soft_ce_oracle(row(zt, 0), row(zs, 0), 2.0) + soft_ce_oracle(row(zt, 2), row(zs, 2), 2.0));
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));
  backward(loss);
  for (double g : zt.grad()) CHECK(g == 0.0);
  for (std::size_t j = 0; j < 4; ++j) CHECK(zs.grad()[4 + j] == 0.0);
}

TEST_CASE("combined_vanilla_objective") {
  CHECK(combined_vanilla_objective(T::scalar(2), T::scalar(4)).item() == 3.0);
  CHECK(combined_vanilla_objective(T::scalar(2), T::scalar(4), 1.0, 0.0).item() == 2.0);
  // Self-distillation at t = 1: L_pred is the teacher entropy.
  std::mt19937_64 rng(3);
  T z = random_tensor({1, 6}, rng, -2, 2);
  const std::vector<std::size_t> row0 = {0};
  const std::vector<double> zv(z.values().begin(), z.values().end());
  const double entropy = soft_ce_oracle(zv, zv, 1.0);
  const double got = combined_vanilla_objective(T::scalar(1.25), vanilla_kd_loss(z, z, 1.0, row0)).item();
  CHECK(got == doctest::Approx(0.5 * 1.25 + 0.5 * entropy).epsilon(1e-12));
}

TEST_CASE("tinybert_embedding_loss and tinybert_hidden_loss") {
  std::mt19937_64 rng(4);
  const std::vector<std::uint8_t> all = {1, 1, 1};

  T e = random_tensor({1, 3, 2}, rng);
  CHECK(tinybert_embedding_loss(e, e, identity(2), all).item() == 0.0);
  CHECK(tinybert_hidden_loss(e, e, identity(2), all).item() == 0.0);

  T shifted = T::from({1, 3, 2}, std::vector<double>(e.values().begin(), e.values().end()));
  for (double& v : shifted.mutable_values()) v += 2.0;
  CHECK(tinybert_embedding_loss(e, shifted, identity(2), all).item() == doctest::Approx(4.0).epsilon(1e-12));

  // Student width 2, teacher width 4.
  T es = random_tensor({1, 3, 2}, rng), et = random_tensor({1, 3, 4}, rng), we = random_tensor({2, 4}, rng);
  const auto proj = project(es, we);
  CHECK(std::abs(tinybert_embedding_loss(es, et, we, all).item() - mse_oracle(proj, et.values(), 4, all)) < 1e-6);
  CHECK(std::abs(tinybert_hidden_loss(es, et, we, all).item() - mse_oracle(proj, et.values(), 4, all)) < 1e-6);

  // Padded position excluded.
  const std::vector<std::uint8_t> partial = {1, 0, 1};
  CHECK(tinybert_hidden_loss(es, et, we, partial).item() ==
        doctest::Approx(mse_oracle(proj, et.values(), 4, partial)).epsilon(1e-12));

  // Zero student: second moment of the teacher.
  double second = 0;
  for (double v : et.values()) second += v * v;
  CHECK(tinybert_hidden_loss(T::zeros({1, 3, 2}), et, we, all).item() ==
        doctest::Approx(second / 12.0).epsilon(1e-12));

  CHECK_THROWS_AS(tinybert_embedding_loss(es, et, random_tensor({3, 4}, rng), all), ShapeError);
}

TEST_CASE("tinybert_attention_loss") {
  const std::vector<std::uint8_t> all = {1, 1};
  T a = T::from({1, 1, 2, 2}, {1, 0, 0, 1});
  CHECK(tinybert_attention_loss(a, a, all).item() == 0.0);
  CHECK(tinybert_attention_loss(a, T::zeros({1, 1, 2, 2}), all).item() == doctest::Approx(0.5));

  // Two heads, three positions, last one padded: per-head oracle over the
  // 2 x 2 valid block, then the mean over heads.
  std::mt19937_64 rng(5);
  T s = random_tensor({1, 2, 3, 3}, rng, -2, 2), t = random_tensor({1, 2, 3, 3}, rng, -2, 2);
  const double ninf = -std::numeric_limits<double>::infinity();
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t q = 0; q < 3; ++q) {
      s.mutable_values()[h * 9 + q * 3 + 2] = ninf;
      t.mutable_values()[h * 9 + q * 3 + 2] = ninf;
    }
  }
  double m[2] = {0, 0};
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t q = 0; q < 2; ++q) {
      for (std::size_t k = 0; k < 2; ++k) {
        const double d = s.values()[h * 9 + q * 3 + k] - t.values()[h * 9 + q * 3 + k];
        m[h] += d * d / 4.0;
      }
    }
  }
  const std::vector<std::uint8_t> valid = {1, 1, 0};
  CHECK(tinybert_attention_loss(s, t, valid).item() == doctest::Approx((m[0] + m[1]) / 2).epsilon(1e-12));
  CHECK_THROWS_AS(tinybert_attention_loss(random_tensor({1, 2, 2, 2}, rng), random_tensor({1, 4, 2, 2}, rng), all),
                  ShapeError);
}

TEST_CASE("minilm_attention_kl") {
  const std::vector<std::uint8_t> all = {1, 1};
  T p = T::from({1, 1, 2, 2}, {0.3, 0.7, 0.6, 0.4});
  CHECK(minilm_attention_kl(p, p, all).item() == 0.0);

  // Query 0 rows as given, query 1 rows identical so only query 0 contributes.
  auto pair = [&](std::vector<double> t0, std::vector<double> s0) {
    T t = T::from({1, 1, 2, 2}, {t0[0], t0[1], 0.5, 0.5});
    T s = T::from({1, 1, 2, 2}, {s0[0], s0[1], 0.5, 0.5});
    return minilm_attention_kl(t, s, all).item() * 2.0;
  };
  CHECK(pair({1, 0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double v = pair({0.5, 0.5}, {0.25, 0.75});
  CHECK(v == doctest::Approx(kl_oracle({0.5, 0.5}, {0.25, 0.75})).epsilon(1e-12));
  CHECK(std::abs(v - 0.1438) < 1e-3);

  T bad = T::from({1, 1, 2, 2}, {0.5, 0.6, 0.5, 0.5});
  CHECK_THROWS_AS(minilm_attention_kl(bad, p, all), ValueError);
  CHECK_THROWS_AS(minilm_attention_kl(p, bad, all), ValueError);
}

TEST_CASE("minilm_value_relation_loss") {
  std::mt19937_64 rng(6);
  const std::vector<std::uint8_t> all = {1, 1, 1};
  T v = random_tensor({1, 2, 3, 4}, rng);
  CHECK(minilm_value_relation_loss(v, v, all).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(minilm_value_relation_loss(T::zeros({1, 2, 3, 4}), T::zeros({1, 2, 3, 2}), all).item() ==
        doctest::Approx(0.0).epsilon(1e-15));

  // One head, two positions, d_k = 1.
  const std::vector<std::uint8_t> two = {1, 1};
  const double got = minilm_value_relation_loss(T::from({1, 1, 2, 1}, {1, 0}), T::zeros({1, 1, 2, 1}),
                                                two).item();
  const double e = std::exp(1.0);
  const double oracle = (kl_oracle({e / (1 + e), 1 / (1 + e)}, {0.5, 0.5}) + 0.0) / 2.0;
  CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(std::abs(got - 0.0554) < 1e-3);

  // Rows of the relation are probability vectors over valid keys.
  const std::vector<std::uint8_t> partial = {1, 1, 0};
  auto vr = value_relation(v, partial);
  for (std::size_t r = 0; r < vr.size() / 3; ++r) {
    double total = 0;
    for (std::size_t k = 0; k < 3; ++k) total += vr.values()[r * 3 + k];
    CHECK(std::abs(total - 1.0) <= 1e-6);
    CHECK(vr.values()[r * 3 + 2] == 0.0);
  }
  CHECK_THROWS_AS(minilm_value_relation_loss(random_tensor({1, 2, 3, 4}, rng), random_tensor({1, 3, 3, 4}, rng), all),
                  ShapeError);
}

TEST_CASE("temperature keeps the argmax") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    T z = random_tensor({1, 12}, rng, -5, 5);
    const auto zv = z.values();
    const auto best = std::max_element(zv.begin(), zv.end()) - zv.begin();
    for (double t : {0.1, 0.5, 1.0, 2.0, 4.0, 20.0}) {
      auto p = softmax_rows(scale(z, 1.0 / t));
      CHECK(std::max_element(p.values().begin(), p.values().end()) - p.values().begin() == best);
    }
  }
}

TEST_CASE("self-distillation gives zero layer-wise losses") {
  const auto cfg = make_config(2, 8, 2, 11, 5);
  auto w = build_encoder<double>(cfg, 17);
  const Batch b = tiny_batch();
  auto out = forward(w, b);

  DistillSpec<double> tiny;
  tiny.strategy = Strategy::kTinyBert;
  tiny.projections = make_projections<double>(8, 8, 1);
  auto tb = total_distill_objective(tiny, out, out, b);
  for (const auto& [name, value] : tb.components) {
    INFO(name);
    CHECK(std::abs(value) <= 1e-10);
  }

  DistillSpec<double> mini;
  mini.strategy = Strategy::kMiniLM;
  CHECK(std::abs(total_distill_objective(mini, out, out, b).total.item()) <= 1e-10);

  // Vanilla: L_pred equals the mean teacher entropy over the masked rows.
  DistillSpec<double> van;
  van.strategy = Strategy::kVanilla;
  auto vt = total_distill_objective(van, out, out, b);
  double entropy = 0;
  const auto rows = b.masked_rows();
  for (std::size_t r : rows) {
    const auto z = out.mlm_logits.values().subspan(r * 11, 11);
    const std::vector<double> zv(z.begin(), z.end());
    entropy += soft_ce_oracle(zv, zv, 1.0);
  }
  entropy /= static_cast<double>(rows.size());
  double pred = -1;
  for (const auto& [name, value] : vt.components)
    if (name == "pred") pred = value;
  CHECK(std::abs(pred - entropy) <= 1e-8);
}

TEST_CASE("total_distill_objective: dispatch") {
  const auto scfg = make_config(1, 8, 2, 11, 5), tcfg = make_config(2, 12, 2, 11, 5);
  auto student = build_encoder<double>(scfg, 1), teacher = build_encoder<double>(tcfg, 2);
  const Batch b = tiny_batch();
  auto so = forward(student, b), to = forward(teacher, b);

  DistillSpec<double> van;
  van.strategy = Strategy::kVanilla;
  van.w_ce = 1.0;
  van.w_pred = 0.0;
  CHECK(total_distill_objective(van, to, so, b).total.item() ==
        doctest::Approx(mlm_loss(so, b).item()).epsilon(1e-14));

  DistillSpec<double> tiny;
  tiny.strategy = Strategy::kTinyBert;
  std::mt19937_64 rng(3);
  tiny.projections.embedding = random_tensor({8, 12}, rng);
  tiny.projections.hidden = random_tensor({8, 12}, rng);
  auto terms = total_distill_objective(tiny, to, so, b);
  const auto& valid = b.attention_mask;
  std::vector<std::uint8_t> rv(valid.begin(), valid.end());
  const double embd = mse_oracle(project(so.embedding_output, tiny.projections.embedding),
                                 to.embedding_output.values(), 12, rv);
  const double hid = mse_oracle(project(so.hidden_states.back(), tiny.projections.hidden),
                                to.hidden_states.back().values(), 12, rv);
  const double att = tinybert_attention_loss(so.attention_logits.back(), to.attention_logits.back(), valid).item();
  CHECK(std::abs(terms.total.item() - (embd + att + hid)) < 1e-6);

  DistillSpec<double> scratch;
  CHECK_THROWS_AS(total_distill_objective(scratch, to, so, b), ValueError);
  CHECK_THROWS_AS(total_distill_objective(van, EncoderOutputs<double>{}, so, b), ValueError);
}

TEST_CASE("distillation never sends gradient into the teacher") {
  const auto cfg = make_config(2, 8, 2, 11, 5);
  auto teacher = build_encoder<double>(cfg, 5), student = build_encoder<double>(cfg, 6);
  const Batch b = tiny_batch();
  for (Strategy s : {Strategy::kVanilla, Strategy::kTinyBert, Strategy::kMiniLM}) {
    CAPTURE(strategy_name(s));
    teacher.set_trainable(true);
    DistillSpec<double> spec;
    spec.strategy = s;
    if (s == Strategy::kTinyBert) spec.projections = make_projections<double>(8, 8, 1);
    auto terms = total_distill_objective(spec, forward(teacher, b), forward(student, b), b);
    backward(terms.total);
    for (const auto& p : teacher.parameters()) {
      for (double g : p.tensor.grad()) CHECK(g == 0.0);
    }
    bool student_moved = false;
    for (const auto& p : student.parameters())
      for (double g : p.tensor.grad()) student_moved = student_moved || g != 0.0;
    CHECK(student_moved);
    student.set_trainable(true);  // resets student gradients
  }
}

TEST_CASE("DistillSpec::validate") {
  const auto s = make_config(1, 8, 2, 11, 5), t4 = make_config(1, 8, 4, 11, 5), wide = make_config(1, 12, 2, 11, 5);
  DistillSpec<double> spec;
  spec.strategy = Strategy::kMiniLM;
  CHECK_THROWS_AS(spec.validate(s, t4), ConfigError);
  spec.strategy = Strategy::kTinyBert;
  CHECK_THROWS_AS(spec.validate(s, wide), ConfigError);  // projections missing
  spec.projections = make_projections<double>(8, 12, 1);
  CHECK_NOTHROW(spec.validate(s, wide));
  spec.strategy = Strategy::kVanilla;
  spec.temperature = 0;
  CHECK_THROWS_AS(spec.validate(s, wide), ConfigError);
  CHECK(parse_strategy("TinyBERT") == Strategy::kTinyBert);
  CHECK_THROWS(parse_strategy("bogus"));
}
