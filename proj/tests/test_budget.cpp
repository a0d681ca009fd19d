// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "fairkd/budget.hpp"

using namespace fairkd;

namespace {

// L (24 d^2 + 4 s d) + 2 d V, evaluated independently of the library.
std::uint64_t closed_form(std::uint64_t L, std::uint64_t d, std::uint64_t s, std::uint64_t V, bool head) {
  return L * (24 * d * d + 4 * s * d) + (head ? 2 * d * V : 0);
}

}  // namespace

TEST_CASE("forward_flops_per_token: closed form") {
  EncoderConfig c = make_config(2, 64, 4, 1000, 32);
  c.num_layers = 0;
  CHECK(forward_flops_per_token(c, 32, true) == 128000);
  c.num_layers = 2;
  CHECK(forward_flops_per_token(c, 32, true) == 340992);
  CHECK(forward_flops_per_token(c, 32, true) == closed_form(2, 64, 32, 1000, true));

  const auto body = [&](std::size_t L) {
    EncoderConfig x = c;
    x.num_layers = L;
    return forward_flops_per_token(x, 32, false);
  };
  CHECK(body(4) == 2 * body(2));
  CHECK(body(6) == 3 * body(2));

  // Non-default feed-forward width: 8 d^2 + 4 d ff per layer.
  EncoderConfig f = make_config(1, 16, 2, 50, 8);
  f.ff_dim = 40;
  CHECK(forward_flops_per_token(f, 8, false) == 8 * 16 * 16 + 4 * 16 * 40 + 4 * 8 * 16);
}

TEST_CASE("train_step_flops_per_token: strategies") {
  const auto s = make_config(2, 64, 4, 1000, 32), t = make_config(4, 64, 4, 1000, 32);
  const auto cs = forward_flops_per_token(s, 32, true);
  const auto ct_head = forward_flops_per_token(t, 32, true), ct = forward_flops_per_token(t, 32, false);
  CHECK(train_step_flops_per_token(Strategy::kScratch, s, std::nullopt, 32) == 3 * cs);
  CHECK(train_step_flops_per_token(Strategy::kVanilla, s, t, 32) == 3 * cs + ct_head);
  CHECK(train_step_flops_per_token(Strategy::kVanilla, s, t, 32, false) == 3 * cs + ct);
  CHECK(train_step_flops_per_token(Strategy::kTinyBert, s, t, 32) == 3 * cs + ct);
  CHECK(train_step_flops_per_token(Strategy::kMiniLM, s, t, 32) == 3 * cs + ct);
  CHECK_THROWS(train_step_flops_per_token(Strategy::kVanilla, s, std::nullopt, 32));
}

TEST_CASE("reference-shaped allowance ratio") {
  const std::uint64_t cs = closed_form(6, 768, 128, 30522, true);
  const std::uint64_t ct = closed_form(12, 768, 128, 30522, true);
  const double hand = static_cast<double>(3 * cs + ct) / static_cast<double>(3 * cs);
  CHECK(std::abs(hand - 1.5502) <= 0.001);
  CHECK(reference_allowance_ratio() == doctest::Approx(hand).epsilon(1e-12));

  const auto student = make_config(6, 768, 12, 30522, 128), teacher = make_config(12, 768, 12, 30522, 128);
  for (std::uint64_t budget : {std::uint64_t{1} << 50, std::uint64_t{123456789012345678}}) {
    BudgetSpec b;
    b.flop_budget = budget;
    const auto model = build_cost_model(b, student, teacher, 128, {Strategy::kScratch, Strategy::kVanilla});
    const double ratio = model.allowance_ratio(Strategy::kVanilla);
    // Integer floors move the ratio by at most one token in either allowance.
    const double kd = static_cast<double>(model.row(Strategy::kVanilla).token_allowance);
    CHECK(std::abs(ratio - hand) <= hand / kd + 1e-12);
  }
}

TEST_CASE("tokens_under_budget: floor division and tightness") {
  BudgetSpec b;
  b.flop_budget = 1000;
  CHECK(tokens_under_budget(b, 3) == 333);
  CHECK(tokens_under_budget(b, 1000) == 1);
  CHECK(tokens_under_budget(b, 1001) == 0);
  CHECK_THROWS(tokens_under_budget(b, 0));

  b.flop_budget = 987654321987ULL;
  for (std::uint64_t cost : {3ULL, 1234567ULL, 98765432ULL}) {
    const std::uint64_t n = tokens_under_budget(b, cost);
    CHECK(n * cost <= b.flop_budget);
    CHECK(b.flop_budget - n * cost < cost);
  }
}

TEST_CASE("epochs_required") {
  CHECK(epochs_required(500000, 100000) == 5.0);
  CHECK(epochs_required(50000, 100000) < 1.0);
  CHECK(epochs_required(27'900'000'000ULL, 15'600'000'000ULL) == doctest::Approx(1.79).epsilon(0.005));
  CHECK_THROWS(epochs_required(10, 0));
}

TEST_CASE("larger teachers get smaller allowances") {
  const auto s = make_config(2, 64, 4, 1000, 32);
  BudgetSpec b;
  b.flop_budget = 1'000'000'000'000ULL;
  std::uint64_t previous = tokens_under_budget(b, train_step_flops_per_token(Strategy::kScratch, s, std::nullopt, 32));
  for (std::size_t L : {1, 2, 4, 8}) {
    const auto t = make_config(L, 64, 4, 1000, 32);
    const auto n = tokens_under_budget(b, train_step_flops_per_token(Strategy::kMiniLM, s, t, 32));
    CHECK(n < previous);
    previous = n;
  }
}

TEST_CASE("BudgetSpec and CostModel") {
  BudgetSpec b;
  CHECK_THROWS(b.validate());
  b.flop_budget = 1'000'000'000;
  CHECK_NOTHROW(b.validate());
  b.data_mode = DataMode::kLimited;
  CHECK_THROWS(b.validate());
  b.corpus_token_count = 1000;
  CHECK_NOTHROW(b.validate());

  const auto s = make_config(1, 16, 2, 50, 8), t = make_config(2, 16, 2, 50, 8);
  const auto model = build_cost_model(b, s, t, 8, {Strategy::kScratch, Strategy::kTinyBert});
  const auto& scratch = model.row(Strategy::kScratch);
  const auto& tiny = model.row(Strategy::kTinyBert);
  CHECK(scratch.teacher_forward == 0);
  CHECK(scratch.token_allowance == tokens_under_budget(b, scratch.per_token));
  CHECK(tiny.per_token > scratch.per_token);
  CHECK(scratch.epochs == doctest::Approx(static_cast<double>(scratch.token_allowance) / 1000.0));
  CHECK(model.allowance_ratio(Strategy::kTinyBert) ==
        doctest::Approx(static_cast<double>(scratch.token_allowance) / static_cast<double>(tiny.token_allowance)));
  CHECK(parse_data_mode("limited") == DataMode::kLimited);
  CHECK_THROWS(parse_data_mode("sometimes"));
}
