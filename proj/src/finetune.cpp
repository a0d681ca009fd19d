// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "fairkd/error.hpp"
#include "fairkd/ops.hpp"
#include "fairkd/probe.hpp"
#include "rng.hpp"

namespace fairkd {
namespace {

constexpr std::size_t kClasses = 2;

Tensor<float> classifier_logits(const EncoderWeights<float>& enc, const Tensor<float>& w,
                                const Tensor<float>& b, const Batch& batch) {
  ForwardOptions opt;
  opt.compute_mlm_logits = false;
  EncoderOutputs<float> out = forward(enc, batch, opt);
  std::vector<std::size_t> cls_rows(batch.batch_size);
  for (std::size_t i = 0; i < batch.batch_size; ++i) cls_rows[i] = i * batch.seq_len;
  return add_bias(matmul(gather_rows(out.last_hidden(), cls_rows), w), b);
}

std::vector<Sequence> gather_ids(const std::vector<ProbeExample>& ex, std::size_t begin,
                                 std::size_t end, const std::vector<std::size_t>* order) {
  std::vector<Sequence> seqs;
  seqs.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) seqs.push_back(ex[order ? (*order)[i] : i].ids);
  return seqs;
}

}  // namespace

FinetuneResult finetune_probe(const EncoderWeights<float>& encoder, const ProbeData& data,
                              std::size_t batch_size, double lr, std::uint64_t seed,
                              const FinetuneOptions& options) {
  if (batch_size == 0) throw ConfigError("finetune: batch_size must be positive");
  if (!(lr >= 0)) throw ConfigError("finetune: learning rate must be non-negative");
  if (data.train.empty() || data.dev.empty()) throw ConfigError("finetune: empty probe split");
  const EncoderConfig& cfg = encoder.config;
  for (const auto* split : {&data.train, &data.dev}) {
    for (const auto& ex : *split) {
      if (ex.ids.size() > cfg.max_seq_len) {
        throw ConfigError("finetune: probe sequence length " + std::to_string(ex.ids.size()) +
                          " exceeds the checkpoint's max_seq_len " +
                          std::to_string(cfg.max_seq_len));
      }
      for (auto id : ex.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
          throw ConfigError("finetune: probe token id " + std::to_string(id) +
                            " outside the checkpoint vocabulary of " +
                            std::to_string(cfg.vocab_size));
        }
      }
    }
  }

  EncoderWeights<float> enc = encoder.clone();
  enc.set_trainable(true);
  std::mt19937_64 gen = detail::make_engine(seed, 0, 0x636C6173u);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<float> wv(cfg.hidden_size * kClasses);
  for (auto& x : wv) {
    double z;
    do {
      z = normal(gen);
    } while (std::abs(z) > 0.04);
    x = static_cast<float>(z);
  }
  Tensor<float> w = Tensor<float>::from({cfg.hidden_size, kClasses}, std::move(wv), true);
  Tensor<float> b = Tensor<float>::zeros({kClasses}, true);

  auto params = enc.parameters();
  params.push_back({"classifier.weight", w, true});
  params.push_back({"classifier.bias", b, false});
  OptimizerState opt = make_optimizer_state(params, options.adamw);

  const std::size_t n = data.train.size();
  const std::size_t steps_per_epoch = (n + batch_size - 1) / batch_size;
  const std::uint64_t total_steps = steps_per_epoch * options.epochs;
  std::vector<std::size_t> order(n);
  FinetuneResult result;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[gen() % i]);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      Batch batch = make_batch(gather_ids(data.train, start, end, &order));
      std::vector<std::size_t> rows(end - start);
      std::vector<std::int32_t> labels(end - start);
      for (std::size_t i = start; i < end; ++i) {
        rows[i - start] = i - start;
        labels[i - start] = data.train[order[i]].label;
      }
      Tensor<float> loss = cross_entropy_rows(classifier_logits(enc, w, b, batch), rows, labels);
      backward(loss);
      const double step_lr =
          lr * (1.0 - static_cast<double>(result.steps) / static_cast<double>(total_steps));
      adamw_step(params, opt, step_lr);
      for (auto& p : params) p.tensor.zero_grad();
      ++result.steps;
    }
  }

  EncoderWeights<float> frozen = enc.clone();
  frozen.set_trainable(false);
  Tensor<float> wf = w.detach(), bf = b.detach();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.dev.size(); start += 64) {
    const std::size_t end = std::min(data.dev.size(), start + 64);
    Tensor<float> logits =
        classifier_logits(frozen, wf, bf, make_batch(gather_ids(data.dev, start, end, nullptr)));
    auto v = logits.values();
    for (std::size_t i = start; i < end; ++i) {
      const float* row = v.data() + (i - start) * kClasses;
      const std::int32_t pred = row[1] > row[0] ? 1 : 0;
      correct += pred == data.dev[i].label ? 1 : 0;
    }
  }
  result.dev_accuracy = static_cast<double>(correct) / static_cast<double>(data.dev.size());
  return result;
}

GridResult grid_search(const EncoderWeights<float>& encoder, const ProbeTask& task,
                       const GridOptions& options) {
  if (task.vocab_size != encoder.config.vocab_size) {
    throw ConfigError("grid search: task vocab_size " + std::to_string(task.vocab_size) +
                      " differs from the checkpoint's " + std::to_string(encoder.config.vocab_size));
  }
  const ProbeData data = generate_probe(task);
  GridResult result;
  bool have_best = false;
  for (std::size_t bs : options.batch_sizes) {
    for (double lr : options.learning_rates) {
      GridPoint p{bs, lr, finetune_probe(encoder, data, bs, lr, options.seed, options.finetune).dev_accuracy};
      result.points.push_back(p);
      const auto& cur = result.best;
      const bool better = !have_best || p.dev_accuracy > cur.dev_accuracy ||
                          (p.dev_accuracy == cur.dev_accuracy &&
                           (p.lr < cur.lr || (p.lr == cur.lr && p.batch_size < cur.batch_size)));
      if (better) {
        result.best = p;
        have_best = true;
      }
    }
  }
  if (!have_best) throw ConfigError("grid search: empty grid");
  return result;
}

}  // namespace fairkd
