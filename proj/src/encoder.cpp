// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/encoder.hpp"

#include <cmath>
#include <random>

#include "fairkd/ops.hpp"

namespace fairkd {

void EncoderConfig::validate() const {
  if (hidden_size == 0 || num_heads == 0 || ff_dim == 0 || vocab_size == 0 || max_seq_len == 0) {
    throw ConfigError("encoder config: hidden_size, num_heads, ff_dim, vocab_size and max_seq_len "
                      "must be positive");
  }
  if (hidden_size % num_heads != 0) {
    throw ConfigError("encoder config: hidden size " + std::to_string(hidden_size) +
                      " is not divisible by " + std::to_string(num_heads) + " heads");
  }
  if (!(layer_norm_eps > 0)) throw ConfigError("encoder config: layer_norm_eps must be positive");
}

EncoderConfig make_config(std::size_t layers, std::size_t hidden, std::size_t heads,
                          std::size_t vocab, std::size_t max_seq_len, bool tie_lm_head) {
  EncoderConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.num_heads = heads;
  c.ff_dim = 4 * hidden;
  c.vocab_size = vocab;
  c.max_seq_len = max_seq_len;
  c.tie_lm_head = tie_lm_head;
  return c;
}

namespace {

// Applies `f` to every tensor member in canonical order, producing a weight
// struct of element type U.
template <typename U, typename T, typename F>
EncoderWeights<U> map_weights(const EncoderWeights<T>& w, F&& f) {
  EncoderWeights<U> out;
  out.config = w.config;
  out.token_embedding = f(w.token_embedding);
  out.position_embedding = f(w.position_embedding);
  out.emb_ln_gain = f(w.emb_ln_gain);
  out.emb_ln_bias = f(w.emb_ln_bias);
  for (const auto& l : w.layers) {
    LayerWeights<U> o;
    o.q_w = f(l.q_w);
    o.q_b = f(l.q_b);
    o.k_w = f(l.k_w);
    o.k_b = f(l.k_b);
    o.v_w = f(l.v_w);
    o.v_b = f(l.v_b);
    o.o_w = f(l.o_w);
    o.o_b = f(l.o_b);
    o.attn_ln_gain = f(l.attn_ln_gain);
    o.attn_ln_bias = f(l.attn_ln_bias);
    o.ff_in_w = f(l.ff_in_w);
    o.ff_in_b = f(l.ff_in_b);
    o.ff_out_w = f(l.ff_out_w);
    o.ff_out_b = f(l.ff_out_b);
    o.ff_ln_gain = f(l.ff_ln_gain);
    o.ff_ln_bias = f(l.ff_ln_bias);
    out.layers.push_back(std::move(o));
  }
  if (w.lm_head_w.defined()) out.lm_head_w = f(w.lm_head_w);
  out.lm_head_b = f(w.lm_head_b);
  return out;
}

}  // namespace

template <typename T>
std::vector<NamedParameter<T>> EncoderWeights<T>::parameters() const {
  std::vector<NamedParameter<T>> p;
  p.push_back({"embeddings.token", token_embedding, true});
  p.push_back({"embeddings.position", position_embedding, true});
  p.push_back({"embeddings.norm.gain", emb_ln_gain, false});
  p.push_back({"embeddings.norm.bias", emb_ln_bias, false});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string pre = "layer." + std::to_string(i) + ".";
    p.push_back({pre + "attention.query.weight", l.q_w, true});
    p.push_back({pre + "attention.query.bias", l.q_b, false});
    p.push_back({pre + "attention.key.weight", l.k_w, true});
    p.push_back({pre + "attention.key.bias", l.k_b, false});
    p.push_back({pre + "attention.value.weight", l.v_w, true});
    p.push_back({pre + "attention.value.bias", l.v_b, false});
    p.push_back({pre + "attention.output.weight", l.o_w, true});
    p.push_back({pre + "attention.output.bias", l.o_b, false});
    p.push_back({pre + "attention.norm.gain", l.attn_ln_gain, false});
    p.push_back({pre + "attention.norm.bias", l.attn_ln_bias, false});
    p.push_back({pre + "ffn.in.weight", l.ff_in_w, true});
    p.push_back({pre + "ffn.in.bias", l.ff_in_b, false});
    p.push_back({pre + "ffn.out.weight", l.ff_out_w, true});
    p.push_back({pre + "ffn.out.bias", l.ff_out_b, false});
    p.push_back({pre + "ffn.norm.gain", l.ff_ln_gain, false});
    p.push_back({pre + "ffn.norm.bias", l.ff_ln_bias, false});
  }
  if (lm_head_w.defined()) p.push_back({"lm_head.weight", lm_head_w, true});
  p.push_back({"lm_head.bias", lm_head_b, false});
  return p;
}

template <typename T>
void EncoderWeights<T>::set_trainable(bool trainable) const {
  for (auto& p : parameters()) {
    Tensor<T> t = p.tensor;
    if (t.requires_grad() != trainable) t.set_requires_grad(trainable);
  }
}

template <typename T>
EncoderWeights<T> EncoderWeights<T>::clone() const {
  return map_weights<T>(*this, [](const Tensor<T>& t) { return t.clone(); });
}

template <typename T>
template <typename U>
EncoderWeights<U> EncoderWeights<T>::cast() const {
  return map_weights<U>(*this, [](const Tensor<T>& t) {
    auto v = t.values();
    std::vector<U> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<U>(v[i]);
    return Tensor<U>::from(t.shape(), std::move(out), t.requires_grad());
  });
}

template <typename T>
EncoderWeights<T> build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.hidden_size, V = config.vocab_size, ff = config.ff_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto trunc_normal = [&](Shape shape) {
    std::vector<T> v(numel(shape));
    for (T& x : v) {
      double z;
      do {
        z = normal(rng);
      } while (std::abs(z) > 0.04);
      x = static_cast<T>(z);
    }
    return Tensor<T>::from(std::move(shape), std::move(v), true);
  };
  auto zeros = [](Shape shape) { return Tensor<T>::zeros(std::move(shape), true); };
  auto ones = [](Shape shape) { return Tensor<T>::full(std::move(shape), T(1), true); };

  EncoderWeights<T> w;
  w.config = config;
  w.token_embedding = trunc_normal({V, d});
  w.position_embedding = trunc_normal({config.max_seq_len, d});
  w.emb_ln_gain = ones({d});
  w.emb_ln_bias = zeros({d});
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    LayerWeights<T> l;
    l.q_w = trunc_normal({d, d});
    l.q_b = zeros({d});
    l.k_w = trunc_normal({d, d});
    l.k_b = zeros({d});
    l.v_w = trunc_normal({d, d});
    l.v_b = zeros({d});
    l.o_w = trunc_normal({d, d});
    l.o_b = zeros({d});
    l.attn_ln_gain = ones({d});
    l.attn_ln_bias = zeros({d});
    l.ff_in_w = trunc_normal({d, ff});
    l.ff_in_b = zeros({ff});
    l.ff_out_w = trunc_normal({ff, d});
    l.ff_out_b = zeros({d});
    l.ff_ln_gain = ones({d});
    l.ff_ln_bias = zeros({d});
    w.layers.push_back(std::move(l));
  }
  if (!config.tie_lm_head) w.lm_head_w = trunc_normal({d, V});
  w.lm_head_b = zeros({V});
  return w;
}

std::size_t Batch::num_masked() const {
  std::size_t n = 0;
  for (const auto& p : mlm_positions) n += p.size();
  return n;
}

std::vector<std::size_t> Batch::masked_rows() const {
  std::vector<std::size_t> rows;
  rows.reserve(num_masked());
  for (std::size_t b = 0; b < mlm_positions.size(); ++b)
    for (std::size_t p : mlm_positions[b]) rows.push_back(b * seq_len + p);
  return rows;
}

std::vector<std::int32_t> Batch::flat_labels() const {
  std::vector<std::int32_t> out;
  out.reserve(num_masked());
  for (const auto& l : mlm_labels) out.insert(out.end(), l.begin(), l.end());
  return out;
}

std::size_t Batch::num_tokens() const {
  std::size_t n = 0;
  for (std::uint8_t m : attention_mask) n += m ? 1 : 0;
  return n;
}

void Batch::validate() const {
  if (batch_size == 0 || seq_len == 0) throw ShapeError("batch: empty batch");
  if (token_ids.size() != batch_size * seq_len || attention_mask.size() != batch_size * seq_len) {
    throw ShapeError("batch: token_ids/attention_mask do not hold batch_size x seq_len entries");
  }
  if (!mlm_positions.empty() &&
      (mlm_positions.size() != batch_size || mlm_labels.size() != batch_size)) {
    throw ShapeError("batch: masked-LM lists must have one entry per sequence");
  }
  for (std::size_t b = 0; b < mlm_positions.size(); ++b) {
    if (mlm_positions[b].size() != mlm_labels[b].size()) {
      throw ShapeError("batch: sequence " + std::to_string(b) +
                       " has mismatched masked positions and labels");
    }
    for (std::size_t p : mlm_positions[b]) {
      if (p >= seq_len || !attention_mask[b * seq_len + p]) {
        throw ValueError("batch: masked position " + std::to_string(p) + " of sequence " +
                         std::to_string(b) + " lies outside the valid region");
      }
    }
  }
}

template <typename T>
const Tensor<T>& EncoderOutputs<T>::last_hidden() const {
  return hidden_states.empty() ? embedding_output : hidden_states.back();
}

template <typename T>
EncoderOutputs<T> forward(const EncoderWeights<T>& w, const Batch& batch,
                          const ForwardOptions& options) {
  const EncoderConfig& cfg = w.config;
  batch.validate();
  const std::size_t B = batch.batch_size, s = batch.seq_len;
  if (s > cfg.max_seq_len) {
    throw ShapeError("forward: sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < batch.token_ids.size(); ++i) {
    const auto id = batch.token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw ValueError("forward: token id " + std::to_string(id) + " at sequence " +
                       std::to_string(i / s) + ", position " + std::to_string(i % s) +
                       " is outside the vocabulary of " + std::to_string(cfg.vocab_size));
    }
  }
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));

  std::vector<std::int32_t> pos_ids(B * s);
  for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = static_cast<std::int32_t>(i % s);

  EncoderOutputs<T> out;
  Tensor<T> x = add(embedding(w.token_embedding, batch.token_ids, {B, s}),
                    embedding(w.position_embedding, pos_ids, {B, s}));
  x = layer_norm(x, w.emb_ln_gain, w.emb_ln_bias, eps);
  out.embedding_output = x;

  for (const auto& l : w.layers) {
    Tensor<T> q = split_heads(add_bias(matmul(x, l.q_w), l.q_b), cfg.num_heads);
    Tensor<T> k = split_heads(add_bias(matmul(x, l.k_w), l.k_b), cfg.num_heads);
    Tensor<T> v = split_heads(add_bias(matmul(x, l.v_w), l.v_b), cfg.num_heads);
    Tensor<T> logits = mask_keys(scale(batched_matmul_nt(q, k), inv_sqrt_dk), batch.attention_mask);
    Tensor<T> dists = softmax_rows(logits);
    Tensor<T> context = merge_heads(batched_matmul(dists, v));
    Tensor<T> attn = add_bias(matmul(context, l.o_w), l.o_b);
    x = layer_norm(add(x, attn), l.attn_ln_gain, l.attn_ln_bias, eps);
    Tensor<T> hidden = gelu(add_bias(matmul(x, l.ff_in_w), l.ff_in_b));
    Tensor<T> ffn = add_bias(matmul(hidden, l.ff_out_w), l.ff_out_b);
    x = layer_norm(add(x, ffn), l.ff_ln_gain, l.ff_ln_bias, eps);

    out.hidden_states.push_back(x);
    out.attention_logits.push_back(logits);
    out.attention_dists.push_back(dists);
    out.values.push_back(v);
  }

  if (options.compute_mlm_logits) {
    Tensor<T> logits = cfg.tie_lm_head ? matmul_nt(x, w.token_embedding) : matmul(x, w.lm_head_w);
    out.mlm_logits = add_bias(logits, w.lm_head_b);
  }
  return out;
}

template <typename T>
Tensor<T> mlm_loss(const EncoderOutputs<T>& outputs, const Batch& batch) {
  if (batch.num_masked() == 0) throw ValueError("mlm_loss: batch has no masked positions");
  if (!outputs.mlm_logits.defined()) throw ValueError("mlm_loss: outputs carry no MLM logits");
  const auto rows = batch.masked_rows();
  const auto labels = batch.flat_labels();
  return cross_entropy_rows(outputs.mlm_logits, rows, labels);
}

std::uint64_t count_parameters(const EncoderConfig& c) {
  c.validate();
  const std::uint64_t d = c.hidden_size, V = c.vocab_size, s = c.max_seq_len, ff = c.ff_dim;
  const std::uint64_t embeddings = V * d + s * d + 2 * d;
  const std::uint64_t attention = 4 * (d * d + d) + 2 * d;
  const std::uint64_t ffn = d * ff + ff + ff * d + d + 2 * d;
  const std::uint64_t head = c.tie_lm_head ? V : d * V + V;
  return embeddings + c.num_layers * (attention + ffn) + head;
}

template struct EncoderWeights<float>;
template struct EncoderWeights<double>;
template struct EncoderOutputs<float>;
template struct EncoderOutputs<double>;
template EncoderWeights<double> EncoderWeights<float>::cast<double>() const;
template EncoderWeights<float> EncoderWeights<double>::cast<float>() const;
template EncoderWeights<float> EncoderWeights<float>::cast<float>() const;
template EncoderWeights<double> EncoderWeights<double>::cast<double>() const;
template EncoderWeights<float> build_encoder<float>(const EncoderConfig&, std::uint64_t);
template EncoderWeights<double> build_encoder<double>(const EncoderConfig&, std::uint64_t);
template EncoderOutputs<float> forward(const EncoderWeights<float>&, const Batch&,
                                       const ForwardOptions&);
template EncoderOutputs<double> forward(const EncoderWeights<double>&, const Batch&,
                                        const ForwardOptions&);
template Tensor<float> mlm_loss(const EncoderOutputs<float>&, const Batch&);
template Tensor<double> mlm_loss(const EncoderOutputs<double>&, const Batch&);

}  // namespace fairkd
