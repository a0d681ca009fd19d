// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/distill.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "fairkd/ops.hpp"

namespace fairkd {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kScratch:
      return "scratch";
    case Strategy::kVanilla:
      return "vanilla";
    case Strategy::kTinyBert:
      return "tinybert";
    case Strategy::kMiniLM:
      return "minilm";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "scratch" || lower == "no-kd") return Strategy::kScratch;
  if (lower == "vanilla" || lower == "vanilla-kd") return Strategy::kVanilla;
  if (lower == "tinybert") return Strategy::kTinyBert;
  if (lower == "minilm") return Strategy::kMiniLM;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

bool is_layerwise(Strategy s) { return s == Strategy::kTinyBert || s == Strategy::kMiniLM; }

template <typename T>
Projections<T> make_projections(std::size_t d_student, std::size_t d_teacher, std::uint64_t seed) {
  auto make = [&](std::uint64_t stream) {
    std::vector<T> v(d_student * d_teacher, T(0));
    if (d_student == d_teacher) {
      for (std::size_t i = 0; i < d_student; ++i) v[i * d_teacher + i] = T(1);
    } else {
      std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * stream));
      std::normal_distribution<double> normal(0.0, 0.02);
      for (T& x : v) {
        double z;
        do {
          z = normal(rng);
        } while (std::abs(z) > 0.04);
        x = static_cast<T>(z);
      }
    }
    return Tensor<T>::from({d_student, d_teacher}, std::move(v), true);
  };
  return {make(1), make(2)};
}

template <typename T>
void DistillSpec<T>::validate(const EncoderConfig& student, const EncoderConfig& teacher) const {
  if (!(temperature > 0)) throw ConfigError("distill spec: temperature must be positive");
  if (w_ce < 0 || w_pred < 0) throw ConfigError("distill spec: loss weights must be non-negative");
  if (strategy == Strategy::kTinyBert) {
    const auto& we = projections.embedding;
    const auto& wh = projections.hidden;
    const Shape want{student.hidden_size, teacher.hidden_size};
    if (!we.defined() || !wh.defined() || we.shape() != want || wh.shape() != want) {
      throw ConfigError("distill spec: tinybert needs projections of shape " + to_string(want));
    }
  }
  if (is_layerwise(strategy)) {
    if (student.num_heads != teacher.num_heads) {
      throw ConfigError("distill spec: " + std::string(strategy_name(strategy)) +
                        " needs equal head counts, student has " +
                        std::to_string(student.num_heads) + ", teacher has " +
                        std::to_string(teacher.num_heads));
    }
    if (relation_heads != 0 && relation_heads != student.num_heads) {
      throw ConfigError("distill spec: relation_heads must equal the shared head count " +
                        std::to_string(student.num_heads));
    }
    if (student.num_layers == 0 || teacher.num_layers == 0) {
      throw ConfigError("distill spec: layer-wise strategies need at least one layer per model");
    }
  }
}

namespace {

// [B*s] validity -> [B, s, width] element mask.
std::vector<std::uint8_t> expand_rows(std::span<const std::uint8_t> valid, std::size_t width) {
  std::vector<std::uint8_t> out(valid.size() * width);
  for (std::size_t r = 0; r < valid.size(); ++r)
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * width), width, valid[r]);
  return out;
}

// Validity of (b, a, q) rows of a [B, A, s, *] tensor.
std::vector<std::uint8_t> query_rows(std::span<const std::uint8_t> valid, std::size_t B,
                                     std::size_t A, std::size_t s) {
  std::vector<std::uint8_t> out(B * A * s);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t q = 0; q < s; ++q) out[(b * A + a) * s + q] = valid[b * s + q];
  return out;
}

template <typename T>
void check_heads(const char* op, const Tensor<T>& teacher, const Tensor<T>& student) {
  if (teacher.rank() != 4 || student.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 [B, A, s, *] inputs, got " +
                     to_string(teacher.shape()) + " and " + to_string(student.shape()));
  }
  if (teacher.extent(1) != student.extent(1)) {
    throw ShapeError(std::string(op) + ": head-count mismatch, teacher " +
                     std::to_string(teacher.extent(1)) + " vs student " +
                     std::to_string(student.extent(1)));
  }
  if (teacher.extent(0) != student.extent(0) || teacher.extent(2) != student.extent(2)) {
    throw ShapeError(std::string(op) + ": batch or sequence extents differ: " +
                     to_string(teacher.shape()) + " vs " + to_string(student.shape()));
  }
}

template <typename T>
Tensor<T> projected_mse(const char* op, const Tensor<T>& student, const Tensor<T>& teacher,
                        const Tensor<T>& projection, std::span<const std::uint8_t> valid) {
  if (student.rank() != 3 || teacher.rank() != 3 || projection.rank() != 2 ||
      student.extent(0) != teacher.extent(0) || student.extent(1) != teacher.extent(1) ||
      projection.extent(0) != student.extent(2) || projection.extent(1) != teacher.extent(2)) {
    throw ShapeError(std::string(op) + ": inconsistent shapes student " +
                     to_string(student.shape()) + ", teacher " + to_string(teacher.shape()) +
                     ", projection " + to_string(projection.shape()));
  }
  if (valid.size() != student.extent(0) * student.extent(1)) {
    throw ShapeError(std::string(op) + ": validity mask has the wrong length");
  }
  const auto mask = expand_rows(valid, teacher.extent(2));
  return masked_mse(matmul(student, projection), teacher, mask);
}

}  // namespace

template <typename T>
Tensor<T> vanilla_kd_loss(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits,
                          T temperature, std::span<const std::size_t> positions) {
  if (!(temperature > 0)) throw ValueError("vanilla_kd_loss: temperature must be positive");
  return soft_cross_entropy_rows(teacher_logits, student_logits, positions, temperature);
}

template <typename T>
Tensor<T> combined_vanilla_objective(const Tensor<T>& ce_loss, const Tensor<T>& pred_loss,
                                     double w_ce, double w_pred) {
  if (w_ce < 0 || w_pred < 0) throw ValueError("combined_vanilla_objective: negative weight");
  return add(scale(ce_loss, static_cast<T>(w_ce)), scale(pred_loss, static_cast<T>(w_pred)));
}

template <typename T>
Tensor<T> tinybert_embedding_loss(const Tensor<T>& student_emb, const Tensor<T>& teacher_emb,
                                  const Tensor<T>& projection,
                                  std::span<const std::uint8_t> valid) {
  return projected_mse("tinybert_embedding_loss", student_emb, teacher_emb, projection, valid);
}

template <typename T>
Tensor<T> tinybert_hidden_loss(const Tensor<T>& student_hidden, const Tensor<T>& teacher_hidden,
                               const Tensor<T>& projection, std::span<const std::uint8_t> valid) {
  return projected_mse("tinybert_hidden_loss", student_hidden, teacher_hidden, projection, valid);
}

template <typename T>
Tensor<T> tinybert_attention_loss(const Tensor<T>& student_scores, const Tensor<T>& teacher_scores,
                                  std::span<const std::uint8_t> valid) {
  check_heads("tinybert_attention_loss", teacher_scores, student_scores);
  const std::size_t B = student_scores.extent(0), A = student_scores.extent(1);
  const std::size_t s = student_scores.extent(2);
  if (student_scores.extent(3) != s || teacher_scores.extent(3) != s || valid.size() != B * s) {
    throw ShapeError("tinybert_attention_loss: expected [B, A, s, s] scores and B*s flags");
  }
  // Every head shares the same (query, key) support, so the pooled mean equals
  // the mean of the per-head MSEs.
  std::vector<std::uint8_t> mask(B * A * s * s);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t q = 0; q < s; ++q)
        for (std::size_t k = 0; k < s; ++k)
          mask[((b * A + a) * s + q) * s + k] = valid[b * s + q] && valid[b * s + k];
  return masked_mse(student_scores, teacher_scores, mask);
}

template <typename T>
Tensor<T> minilm_attention_kl(const Tensor<T>& teacher_dists, const Tensor<T>& student_dists,
                              std::span<const std::uint8_t> valid) {
  check_heads("minilm_attention_kl", teacher_dists, student_dists);
  const std::size_t B = student_dists.extent(0), A = student_dists.extent(1);
  const std::size_t s = student_dists.extent(2);
  if (valid.size() != B * s) throw ShapeError("minilm_attention_kl: validity mask has the wrong length");
  return kl_rows(teacher_dists, student_dists, query_rows(valid, B, A, s));
}

template <typename T>
Tensor<T> value_relation(const Tensor<T>& values, std::span<const std::uint8_t> valid) {
  if (values.rank() != 4) {
    throw ShapeError("value_relation: expected [B, A, s, d_k], got " + to_string(values.shape()));
  }
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(values.extent(3))));
  return softmax_rows(mask_keys(scale(batched_matmul_nt(values, values), inv_sqrt), valid));
}

template <typename T>
Tensor<T> minilm_value_relation_loss(const Tensor<T>& teacher_values,
                                     const Tensor<T>& student_values,
                                     std::span<const std::uint8_t> valid) {
  check_heads("minilm_value_relation_loss", teacher_values, student_values);
  const std::size_t B = student_values.extent(0), A = student_values.extent(1);
  const std::size_t s = student_values.extent(2);
  if (valid.size() != B * s) {
    throw ShapeError("minilm_value_relation_loss: validity mask has the wrong length");
  }
  const Tensor<T> vr_teacher = value_relation(teacher_values.detach(), valid);
  const Tensor<T> vr_student = value_relation(student_values, valid);
  return kl_rows(vr_teacher, vr_student, query_rows(valid, B, A, s));
}

template <typename T>
DistillTerms<T> total_distill_objective(const DistillSpec<T>& spec,
                                        const EncoderOutputs<T>& teacher,
                                        const EncoderOutputs<T>& student, const Batch& batch) {
  if (spec.strategy == Strategy::kScratch) {
    throw ValueError("total_distill_objective: the scratch strategy has no distillation objective");
  }
  if (!teacher.embedding_output.defined()) {
    throw ValueError("total_distill_objective: teacher outputs are missing");
  }
  DistillTerms<T> terms;
  auto record = [&](const char* name, const Tensor<T>& t) {
    terms.components.emplace_back(name, static_cast<double>(t.item()));
    terms.total = terms.total.defined() ? add(terms.total, t) : t;
  };
  const std::span<const std::uint8_t> valid = batch.attention_mask;

  switch (spec.strategy) {
    case Strategy::kVanilla: {
      if (!teacher.mlm_logits.defined()) {
        throw ValueError("total_distill_objective: teacher MLM logits are missing");
      }
      Tensor<T> ce = mlm_loss(student, batch);
      std::vector<std::size_t> rows;
      if (spec.soft_ce_all_positions) {
        for (std::size_t i = 0; i < valid.size(); ++i)
          if (valid[i]) rows.push_back(i);
      } else {
        rows = batch.masked_rows();
      }
      Tensor<T> pred = vanilla_kd_loss(teacher.mlm_logits, student.mlm_logits,
                                       static_cast<T>(spec.temperature), rows);
      terms.components.emplace_back("mlm", static_cast<double>(ce.item()));
      terms.components.emplace_back("pred", static_cast<double>(pred.item()));
      terms.total = combined_vanilla_objective(ce, pred, spec.w_ce, spec.w_pred);
      break;
    }
    case Strategy::kTinyBert: {
      if (teacher.hidden_states.empty() || student.hidden_states.empty()) {
        throw ValueError("total_distill_objective: tinybert needs at least one layer per model");
      }
      record("embd", tinybert_embedding_loss(student.embedding_output, teacher.embedding_output,
                                             spec.projections.embedding, valid));
      record("att", tinybert_attention_loss(student.attention_logits.back(),
                                            teacher.attention_logits.back(), valid));
      record("hid", tinybert_hidden_loss(student.hidden_states.back(), teacher.hidden_states.back(),
                                         spec.projections.hidden, valid));
      if (spec.add_mlm_term) record("mlm", mlm_loss(student, batch));
      break;
    }
    case Strategy::kMiniLM: {
      if (teacher.hidden_states.empty() || student.hidden_states.empty()) {
        throw ValueError("total_distill_objective: minilm needs at least one layer per model");
      }
      record("att_kl", minilm_attention_kl(teacher.attention_dists.back(),
                                           student.attention_dists.back(), valid));
      record("vr", minilm_value_relation_loss(teacher.values.back(), student.values.back(), valid));
      if (spec.add_mlm_term) record("mlm", mlm_loss(student, batch));
      break;
    }
    case Strategy::kScratch:
      break;
  }
  return terms;
}

#define FAIRKD_INSTANTIATE_DISTILL(T)                                                            \
  template struct DistillSpec<T>;                                                                \
  template Projections<T> make_projections<T>(std::size_t, std::size_t, std::uint64_t);          \
  template Tensor<T> vanilla_kd_loss(const Tensor<T>&, const Tensor<T>&, T,                      \
                                     std::span<const std::size_t>);                              \
  template Tensor<T> combined_vanilla_objective(const Tensor<T>&, const Tensor<T>&, double,      \
                                                double);                                         \
  template Tensor<T> tinybert_embedding_loss(const Tensor<T>&, const Tensor<T>&,                 \
                                             const Tensor<T>&, std::span<const std::uint8_t>);   \
  template Tensor<T> tinybert_attention_loss(const Tensor<T>&, const Tensor<T>&,                 \
                                             std::span<const std::uint8_t>);                     \
  template Tensor<T> tinybert_hidden_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                          std::span<const std::uint8_t>);                        \
  template Tensor<T> minilm_attention_kl(const Tensor<T>&, const Tensor<T>&,                     \
                                         std::span<const std::uint8_t>);                         \
  template Tensor<T> value_relation(const Tensor<T>&, std::span<const std::uint8_t>);            \
  template Tensor<T> minilm_value_relation_loss(const Tensor<T>&, const Tensor<T>&,              \
                                                std::span<const std::uint8_t>);                  \
  template DistillTerms<T> total_distill_objective(const DistillSpec<T>&,                        \
                                                   const EncoderOutputs<T>&,                     \
                                                   const EncoderOutputs<T>&, const Batch&);

FAIRKD_INSTANTIATE_DISTILL(float)
FAIRKD_INSTANTIATE_DISTILL(double)

#undef FAIRKD_INSTANTIATE_DISTILL

}  // namespace fairkd
