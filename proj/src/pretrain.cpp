// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "fairkd/error.hpp"
#include "fairkd/ops.hpp"
#include "fairkd/train.hpp"

namespace fairkd {
namespace {

constexpr const char* kColumns[] = {"step", "tokens_seen", "epoch", "lr",  "total",  "mlm",
                                    "pred", "embd",        "att",   "hid", "att_kl", "vr"};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

double* component_slot(TrainRecord& r, const std::string& name) {
  if (name == "mlm") return &r.mlm;
  if (name == "pred") return &r.pred;
  if (name == "embd") return &r.embd;
  if (name == "att") return &r.att;
  if (name == "hid") return &r.hid;
  if (name == "att_kl") return &r.att_kl;
  if (name == "vr") return &r.vr;
  return nullptr;
}

bool needs_student_logits(const DistillSpec<float>& spec) {
  return spec.strategy == Strategy::kScratch || spec.strategy == Strategy::kVanilla ||
         spec.add_mlm_term;
}

struct StepLoss {
  Tensor<float> total;
  std::vector<std::pair<std::string, double>> components;
};

StepLoss compute_loss(const EncoderWeights<float>& student, const DistillSpec<float>& spec,
                      const EncoderWeights<float>* teacher, const Batch& batch) {
  ForwardOptions sopt;
  sopt.compute_mlm_logits = needs_student_logits(spec);
  EncoderOutputs<float> s_out = forward(student, batch, sopt);
  if (spec.strategy == Strategy::kScratch) {
    Tensor<float> loss = mlm_loss(s_out, batch);
    return {loss, {{"mlm", static_cast<double>(loss.item())}}};
  }
  ForwardOptions topt;
  topt.compute_mlm_logits = spec.strategy == Strategy::kVanilla;
  EncoderOutputs<float> t_out = forward(*teacher, batch, topt);
  DistillTerms<float> terms = total_distill_objective(spec, t_out, s_out, batch);
  return {terms.total, std::move(terms.components)};
}

}  // namespace

std::string TrainLog::to_tsv() const {
  std::ostringstream out;
  out << "# strategy\t" << strategy << '\n'
      << "# token_allowance\t" << token_allowance << '\n'
      << "# flops_per_token\t" << flops_per_token << '\n'
      << "# tokens_trained\t" << tokens_trained << '\n'
      << "# steps\t" << steps << '\n'
      << "# rejected_steps\t" << rejected_steps << '\n'
      << "# epochs\t" << epochs << '\n'
      << "# initial_mlm\t" << fmt(initial_eval.mlm) << '\n'
      << "# initial_objective\t" << fmt(initial_eval.objective) << '\n'
      << "# final_mlm\t" << fmt(final_eval.mlm) << '\n'
      << "# final_objective\t" << fmt(final_eval.objective) << '\n';
  for (std::size_t i = 0; i < std::size(kColumns); ++i) out << (i ? "\t" : "") << kColumns[i];
  out << '\n';
  for (const auto& r : records) {
    out << r.step << '\t' << r.tokens_seen << '\t' << r.epoch << '\t' << fmt(r.lr) << '\t'
        << fmt(r.total) << '\t' << fmt(r.mlm) << '\t' << fmt(r.pred) << '\t' << fmt(r.embd) << '\t'
        << fmt(r.att) << '\t' << fmt(r.hid) << '\t' << fmt(r.att_kl) << '\t' << fmt(r.vr) << '\n';
  }
  return out.str();
}

TrainLog TrainLog::from_tsv(const std::string& text) {
  TrainLog log;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::string> meta;
  bool header_seen = false;
  std::size_t line_no = 0;
  std::uint64_t line_start = 0, next_start = 0;
  auto num = [&](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
      throw FormatError("train log: bad number '" + s + "' on line " + std::to_string(line_no),
                        line_start);
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    line_start = next_start;
    next_start += line.size() + 1;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab < 2) continue;
      meta[line.substr(2, tab - 2)] = line.substr(tab + 1);
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, '\t')) cols.push_back(c);
    if (!header_seen) {
      if (cols.size() != std::size(kColumns) || cols[0] != "step") {
        throw FormatError("train log: unexpected header on line " + std::to_string(line_no),
                          line_start);
      }
      header_seen = true;
      continue;
    }
    if (cols.size() != std::size(kColumns)) {
      throw FormatError("train log: expected " + std::to_string(std::size(kColumns)) +
                            " columns on line " + std::to_string(line_no),
                        line_start);
    }
    TrainRecord r;
    r.step = static_cast<std::uint64_t>(num(cols[0]));
    r.tokens_seen = static_cast<std::uint64_t>(num(cols[1]));
    r.epoch = static_cast<std::size_t>(num(cols[2]));
    r.lr = num(cols[3]);
    r.total = num(cols[4]);
    r.mlm = num(cols[5]);
    r.pred = num(cols[6]);
    r.embd = num(cols[7]);
    r.att = num(cols[8]);
    r.hid = num(cols[9]);
    r.att_kl = num(cols[10]);
    r.vr = num(cols[11]);
    log.records.push_back(r);
  }
  if (!header_seen) throw FormatError("train log: header row missing", next_start);
  auto get = [&](const char* key) -> std::string {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError(std::string("train log: missing field '") + key + "'", next_start);
    return it->second;
  };
  log.strategy = get("strategy");
  log.token_allowance = std::stoull(get("token_allowance"));
  log.flops_per_token = std::stoull(get("flops_per_token"));
  log.tokens_trained = std::stoull(get("tokens_trained"));
  log.steps = std::stoull(get("steps"));
  log.rejected_steps = std::stoull(get("rejected_steps"));
  log.epochs = std::stoull(get("epochs"));
  log.initial_eval.mlm = num(get("initial_mlm"));
  log.initial_eval.objective = num(get("initial_objective"));
  log.final_eval.mlm = num(get("final_mlm"));
  log.final_eval.objective = num(get("final_objective"));
  return log;
}

double default_peak_lr(Strategy strategy) { return strategy == Strategy::kScratch ? 1e-3 : 5e-4; }

EvalMetrics evaluate_pretraining(const EncoderWeights<float>& student,
                                 const DistillSpec<float>& spec,
                                 const EncoderWeights<float>* teacher, const Vocab& vocab,
                                 const std::vector<Sequence>& sequences, double mask_prob,
                                 std::uint64_t seed, std::size_t batch_size) {
  EvalMetrics m;
  if (sequences.empty()) return m;
  if (spec.strategy != Strategy::kScratch && teacher == nullptr) {
    throw ConfigError("evaluate: strategy '" + std::string(strategy_name(spec.strategy)) +
                      "' needs a teacher");
  }
  EncoderWeights<float> frozen = student.clone();
  frozen.set_trainable(false);
  DistillSpec<float> eval_spec = spec;
  if (spec.projections.embedding.defined()) {
    eval_spec.projections.embedding = spec.projections.embedding.detach();
    eval_spec.projections.hidden = spec.projections.hidden.detach();
  }
  double mlm_sum = 0.0, obj_sum = 0.0;
  std::size_t mlm_count = 0, obj_count = 0;
  for (std::size_t start = 0, chunk = 0; start < sequences.size(); start += batch_size, ++chunk) {
    const std::size_t end = std::min(sequences.size(), start + batch_size);
    std::vector<Sequence> part(sequences.begin() + static_cast<std::ptrdiff_t>(start),
                               sequences.begin() + static_cast<std::ptrdiff_t>(end));
    Batch batch = mask_batch(part, vocab, mask_prob, seed, chunk);
    const std::size_t masked = batch.num_masked();
    ForwardOptions opt;
    EncoderOutputs<float> s_out = forward(frozen, batch, opt);
    mlm_sum += static_cast<double>(mlm_loss(s_out, batch).item()) * static_cast<double>(masked);
    mlm_count += masked;
    double obj;
    if (eval_spec.strategy == Strategy::kScratch) {
      obj = static_cast<double>(mlm_loss(s_out, batch).item());
    } else {
      ForwardOptions topt;
      topt.compute_mlm_logits = eval_spec.strategy == Strategy::kVanilla;
      EncoderOutputs<float> t_out = forward(*teacher, batch, topt);
      obj = static_cast<double>(total_distill_objective(eval_spec, t_out, s_out, batch).total.item());
    }
    obj_sum += obj * static_cast<double>(part.size());
    obj_count += part.size();
  }
  m.mlm = mlm_sum / static_cast<double>(mlm_count);
  m.objective = obj_sum / static_cast<double>(obj_count);
  return m;
}

PretrainResult pretrain(const EncoderConfig& student_config, DistillSpec<float> spec,
                        const EncoderWeights<float>* teacher, const Vocab& vocab,
                        const BudgetSpec& budget, TokenStream& stream,
                        const PretrainOptions& options) {
  student_config.validate();
  budget.validate();
  if (student_config.vocab_size != vocab.size()) {
    throw ConfigError("pretrain: student vocab_size " + std::to_string(student_config.vocab_size) +
                      " differs from the vocabulary size " + std::to_string(vocab.size()));
  }
  if (options.seq_len > student_config.max_seq_len) {
    throw ConfigError("pretrain: seq_len exceeds the student's max_seq_len");
  }
  if (options.grad_accumulation == 0) throw ConfigError("pretrain: grad_accumulation must be >= 1");
  const bool distill = spec.strategy != Strategy::kScratch;
  std::optional<EncoderConfig> teacher_config;
  if (distill) {
    if (teacher == nullptr) {
      throw ConfigError("pretrain: strategy '" + std::string(strategy_name(spec.strategy)) +
                        "' needs a teacher");
    }
    teacher_config = teacher->config;
    if (teacher->config.vocab_size != student_config.vocab_size) {
      throw ConfigError("pretrain: teacher and student vocabularies differ");
    }
    if (spec.strategy == Strategy::kTinyBert && !spec.projections.embedding.defined()) {
      spec.projections = make_projections<float>(student_config.hidden_size,
                                                 teacher->config.hidden_size,
                                                 options.seed ^ 0x70726F6AULL);
    }
    spec.validate(student_config, teacher->config);
    teacher->set_trainable(false);
  }

  const std::uint64_t per_token = train_step_flops_per_token(
      spec.strategy, student_config, teacher_config, options.seq_len, budget.count_teacher_lm_head);
  const std::uint64_t allowance = tokens_under_budget(budget, per_token);
  if (stream.spec().token_allowance != allowance) {
    throw ConfigError("pretrain: stream allowance " + std::to_string(stream.spec().token_allowance) +
                      " does not match the budgeted allowance " + std::to_string(allowance));
  }
  if (stream.tokens_emitted() != 0) throw ConfigError("pretrain: stream was already consumed");

  PretrainResult result;
  result.student = build_encoder<float>(student_config, options.seed);
  auto params = result.student.parameters();
  if (spec.strategy == Strategy::kTinyBert) {
    params.push_back({"distill.projection.embedding", spec.projections.embedding, false});
    params.push_back({"distill.projection.hidden", spec.projections.hidden, false});
  }
  OptimizerState opt = make_optimizer_state(params, options.adamw);
  const double peak = options.peak_lr > 0 ? options.peak_lr : default_peak_lr(spec.strategy);

  TrainLog& log = result.log;
  log.strategy = std::string(strategy_name(spec.strategy));
  log.token_allowance = allowance;
  log.flops_per_token = per_token;
  const std::uint64_t eval_seed = options.seed ^ 0x6576616CULL;
  log.initial_eval = evaluate_pretraining(result.student, spec, teacher, vocab,
                                          options.eval_sequences, options.mask_prob, eval_seed);

  std::uint64_t micro = 0;
  std::uint64_t step_start_tokens = 0;
  StepLoss last;
  auto zero_grads = [&] {
    for (auto& p : params) {
      if (p.tensor.requires_grad()) p.tensor.zero_grad();
    }
  };
  auto apply_step = [&](std::uint64_t tokens_now) {
    const double f = (static_cast<double>(step_start_tokens) +
                      static_cast<double>(tokens_now - step_start_tokens) / 2.0) /
                     static_cast<double>(allowance);
    const double lr = lr_at(f, peak, options.warmup);
    adamw_step(params, opt, lr);
    zero_grads();
    ++log.steps;
    if (options.log_every > 0 && (log.steps % options.log_every == 0 || stream.exhausted())) {
      TrainRecord r;
      r.step = log.steps;
      r.tokens_seen = tokens_now;
      r.epoch = stream.epoch_counter();
      r.lr = lr;
      r.total = static_cast<double>(last.total.item());
      for (const auto& [name, value] : last.components) {
        if (double* slot = component_slot(r, name)) *slot = value;
      }
      log.records.push_back(r);
      if (options.on_log) options.on_log(r);
    }
    step_start_tokens = tokens_now;
  };

  while (auto seqs = stream.next_batch()) {
    Batch batch = mask_batch(*seqs, vocab, options.mask_prob, options.seed, micro);
    last = compute_loss(result.student, spec, teacher, batch);
    Tensor<float> loss = options.grad_accumulation == 1
                             ? last.total
                             : scale(last.total, 1.0f / static_cast<float>(options.grad_accumulation));
    backward(loss);
    ++micro;
    if (micro % options.grad_accumulation == 0 || stream.exhausted()) {
      apply_step(stream.tokens_emitted());
    }
    last = StepLoss{last.total.detach(), std::move(last.components)};
  }
  log.tokens_trained = stream.tokens_emitted();
  log.rejected_steps = opt.rejected;
  log.epochs = stream.epoch_counter();
  log.final_eval = evaluate_pretraining(result.student, spec, teacher, vocab,
                                        options.eval_sequences, options.mask_prob, eval_seed);
  result.projections = spec.projections;
  return result;
}

}  // namespace fairkd
