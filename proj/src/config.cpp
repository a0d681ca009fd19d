// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fairkd/error.hpp"

namespace fairkd {
namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("config: '" + key + "' = '" + v + "' is not a number");
  if constexpr (std::is_unsigned_v<T>) {
    if (v.find('-') != std::string::npos) {
      throw ConfigError("config: '" + key + "' must be non-negative");
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' = '" + v + "' is not a boolean");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& v)>;

template <typename Get>
Setter size_field(Get get) {
  return [get](ExperimentConfig& c, const std::string& k, const std::string& v) {
    get(c) = parse_number<std::size_t>(k, v);
  };
}
template <typename Get>
Setter u64_field(Get get) {
  return [get](ExperimentConfig& c, const std::string& k, const std::string& v) {
    get(c) = parse_number<std::uint64_t>(k, v);
  };
}
template <typename Get>
Setter real_field(Get get) {
  return [get](ExperimentConfig& c, const std::string& k, const std::string& v) {
    get(c) = parse_number<double>(k, v);
  };
}
template <typename Get>
Setter bool_field(Get get) {
  return [get](ExperimentConfig& c, const std::string& k, const std::string& v) {
    get(c) = parse_bool(k, v);
  };
}

void add_model_keys(std::map<std::string, Setter>& t, const std::string& section,
                    std::function<ModelSection&(ExperimentConfig&)> m) {
  t[section + ".layers"] = size_field([m](ExperimentConfig& c) -> std::size_t& { return m(c).layers; });
  t[section + ".hidden"] = size_field([m](ExperimentConfig& c) -> std::size_t& { return m(c).hidden; });
  t[section + ".heads"] = size_field([m](ExperimentConfig& c) -> std::size_t& { return m(c).heads; });
  t[section + ".ff_dim"] = size_field([m](ExperimentConfig& c) -> std::size_t& { return m(c).ff_dim; });
  t[section + ".tie_lm_head"] =
      bool_field([m](ExperimentConfig& c) -> bool& { return m(c).tie_lm_head; });
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    using C = ExperimentConfig;
    t["experiment.name"] = [](C& c, const std::string&, const std::string& v) { c.name = v; };
    t["experiment.seed"] = u64_field([](C& c) -> std::uint64_t& { return c.seed; });
    t["experiment.strategies"] = [](C& c, const std::string& k, const std::string& v) {
      c.strategies.clear();
      for (const auto& s : split_list(v)) c.strategies.push_back(parse_strategy(s));
      if (c.strategies.empty()) throw ConfigError("config: '" + k + "' lists no strategy");
    };

    t["data.mode"] = [](C& c, const std::string&, const std::string& v) { c.data.mode = parse_data_mode(v); };
    t["data.corpus_path"] = [](C& c, const std::string&, const std::string& v) { c.data.corpus_path = v; };
    t["data.corpus_tokens"] = size_field([](C& c) -> std::size_t& { return c.data.corpus_tokens; });
    t["data.lexicon_size"] = size_field([](C& c) -> std::size_t& { return c.data.lexicon_size; });
    t["data.markov_order"] = [](C& c, const std::string& k, const std::string& v) {
      c.data.markov_order = parse_number<int>(k, v);
    };
    t["data.max_vocab"] = size_field([](C& c) -> std::size_t& { return c.data.max_vocab; });
    t["data.min_freq"] = size_field([](C& c) -> std::size_t& { return c.data.min_freq; });
    t["data.seq_len"] = size_field([](C& c) -> std::size_t& { return c.data.seq_len; });
    t["data.limited_tokens"] = size_field([](C& c) -> std::size_t& { return c.data.limited_tokens; });
    t["data.heldout_sequences"] =
        size_field([](C& c) -> std::size_t& { return c.data.heldout_sequences; });

    add_model_keys(t, "teacher", [](C& c) -> ModelSection& { return c.teacher.model; });
    t["teacher.tokens"] = u64_field([](C& c) -> std::uint64_t& { return c.teacher.tokens; });
    t["teacher.peak_lr"] = real_field([](C& c) -> double& { return c.teacher.peak_lr; });
    add_model_keys(t, "student", [](C& c) -> ModelSection& { return c.student; });

    t["budget.flop_budget"] = u64_field([](C& c) -> std::uint64_t& { return c.flop_budget; });
    t["budget.count_teacher_lm_head"] =
        bool_field([](C& c) -> bool& { return c.count_teacher_lm_head; });

    t["pretrain.batch_size"] = size_field([](C& c) -> std::size_t& { return c.pretrain.batch_size; });
    t["pretrain.mask_prob"] = real_field([](C& c) -> double& { return c.pretrain.mask_prob; });
    t["pretrain.warmup"] = real_field([](C& c) -> double& { return c.pretrain.warmup; });
    t["pretrain.weight_decay"] = real_field([](C& c) -> double& { return c.pretrain.weight_decay; });
    t["pretrain.peak_lr_scratch"] =
        real_field([](C& c) -> double& { return c.pretrain.peak_lr_scratch; });
    t["pretrain.peak_lr_distill"] =
        real_field([](C& c) -> double& { return c.pretrain.peak_lr_distill; });
    t["pretrain.grad_accumulation"] =
        size_field([](C& c) -> std::size_t& { return c.pretrain.grad_accumulation; });
    t["pretrain.log_every"] = size_field([](C& c) -> std::size_t& { return c.pretrain.log_every; });
    t["pretrain.temperature"] = real_field([](C& c) -> double& { return c.pretrain.temperature; });
    t["pretrain.w_ce"] = real_field([](C& c) -> double& { return c.pretrain.w_ce; });
    t["pretrain.w_pred"] = real_field([](C& c) -> double& { return c.pretrain.w_pred; });
    t["pretrain.add_mlm_term"] = bool_field([](C& c) -> bool& { return c.pretrain.add_mlm_term; });

    t["finetune.tasks"] = [](C& c, const std::string& k, const std::string& v) {
      c.finetune.tasks.clear();
      for (const auto& s : split_list(v)) c.finetune.tasks.push_back(parse_probe(s));
      if (c.finetune.tasks.empty()) throw ConfigError("config: '" + k + "' lists no task");
    };
    t["finetune.train_size"] = size_field([](C& c) -> std::size_t& { return c.finetune.train_size; });
    t["finetune.dev_size"] = size_field([](C& c) -> std::size_t& { return c.finetune.dev_size; });
    t["finetune.seq_len"] = size_field([](C& c) -> std::size_t& { return c.finetune.seq_len; });
    t["finetune.epochs"] = size_field([](C& c) -> std::size_t& { return c.finetune.epochs; });
    t["finetune.batch_sizes"] = [](C& c, const std::string& k, const std::string& v) {
      c.finetune.batch_sizes.clear();
      for (const auto& s : split_list(v)) c.finetune.batch_sizes.push_back(parse_number<std::size_t>(k, s));
    };
    t["finetune.learning_rates"] = [](C& c, const std::string& k, const std::string& v) {
      c.finetune.learning_rates.clear();
      for (const auto& s : split_list(v)) c.finetune.learning_rates.push_back(parse_number<double>(k, s));
    };
    return t;
  }();
  return table;
}

std::string join_strategies(const std::vector<Strategy>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::string(strategy_name(v[i]));
  return out;
}

std::string fmt_real(double x) {
  std::ostringstream o;
  o.precision(17);
  o << x;
  return o.str();
}

void emit_model(std::ostream& o, const ModelSection& m) {
  o << "layers = " << m.layers << "\nhidden = " << m.hidden << "\nheads = " << m.heads
    << "\nff_dim = " << m.ff_dim << "\ntie_lm_head = " << (m.tie_lm_head ? "true" : "false") << "\n";
}

EncoderConfig model_config(const ModelSection& m, std::size_t vocab, std::size_t seq_len) {
  EncoderConfig c = make_config(m.layers, m.hidden, m.heads, vocab, seq_len, m.tie_lm_head);
  if (m.ff_dim != 0) c.ff_dim = m.ff_dim;
  c.validate();
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("config: no strategies");
  for (std::size_t i = 0; i < strategies.size(); ++i)
    for (std::size_t j = i + 1; j < strategies.size(); ++j)
      if (strategies[i] == strategies[j]) {
        throw ConfigError("config: strategy '" + std::string(strategy_name(strategies[i])) +
                          "' listed twice");
      }
  if (data.seq_len < 8) throw ConfigError("config: data.seq_len must be at least 8");
  if (data.corpus_path.empty() && (data.markov_order < 1 || data.markov_order > 2)) {
    throw ConfigError("config: data.markov_order must be 1 or 2");
  }
  if (data.corpus_path.empty() && data.lexicon_size < 10) {
    throw ConfigError("config: data.lexicon_size must be at least 10");
  }
  if (data.mode == DataMode::kLimited && data.limited_tokens == 0) {
    throw ConfigError("config: data.limited_tokens must be positive in the limited regime");
  }
  if (teacher.tokens == 0) throw ConfigError("config: teacher.tokens must be positive");
  if (flop_budget == 0) throw ConfigError("config: budget.flop_budget must be positive");
  if (pretrain.batch_size == 0) throw ConfigError("config: pretrain.batch_size must be positive");
  if (!(pretrain.mask_prob > 0 && pretrain.mask_prob <= 1)) {
    throw ConfigError("config: pretrain.mask_prob must lie in (0, 1]");
  }
  if (!(pretrain.warmup > 0 && pretrain.warmup < 1)) {
    throw ConfigError("config: pretrain.warmup must lie in (0, 1)");
  }
  if (finetune.tasks.empty() || finetune.batch_sizes.empty() || finetune.learning_rates.empty()) {
    throw ConfigError("config: finetune needs tasks, batch sizes and learning rates");
  }
  if (finetune.seq_len > data.seq_len) {
    throw ConfigError("config: finetune.seq_len exceeds data.seq_len (the models' max length)");
  }
  teacher_config(data.lexicon_size + Vocab::kNumSpecial);
  student_config(data.lexicon_size + Vocab::kNumSpecial);
}

EncoderConfig ExperimentConfig::teacher_config(std::size_t vocab_size) const {
  return model_config(teacher.model, vocab_size, data.seq_len);
}

EncoderConfig ExperimentConfig::student_config(std::size_t vocab_size) const {
  return model_config(student, vocab_size, data.seq_len);
}

ExperimentConfig parse_config(const std::string& ini_text) {
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' lies outside any section");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = table.find(full);
      if (it == table.end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second(c, full, trim(value.data()));
    }
  }
  c.validate();
  return c;
}

void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  ExperimentConfig updated = config;
  it->second(updated, key, trim(value));
  updated.validate();
  config = std::move(updated);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "[experiment]\nname = " << c.name << "\nseed = " << c.seed
    << "\nstrategies = " << join_strategies(c.strategies) << "\n\n";
  o << "[data]\nmode = " << data_mode_name(c.data.mode) << "\ncorpus_path = " << c.data.corpus_path
    << "\ncorpus_tokens = " << c.data.corpus_tokens << "\nlexicon_size = " << c.data.lexicon_size
    << "\nmarkov_order = " << c.data.markov_order << "\nmax_vocab = " << c.data.max_vocab
    << "\nmin_freq = " << c.data.min_freq << "\nseq_len = " << c.data.seq_len
    << "\nlimited_tokens = " << c.data.limited_tokens
    << "\nheldout_sequences = " << c.data.heldout_sequences << "\n\n";
  o << "[teacher]\n";
  emit_model(o, c.teacher.model);
  o << "tokens = " << c.teacher.tokens << "\npeak_lr = " << fmt_real(c.teacher.peak_lr) << "\n\n";
  o << "[student]\n";
  emit_model(o, c.student);
  o << "\n[budget]\nflop_budget = " << c.flop_budget
    << "\ncount_teacher_lm_head = " << (c.count_teacher_lm_head ? "true" : "false") << "\n\n";
  const auto& p = c.pretrain;
  o << "[pretrain]\nbatch_size = " << p.batch_size << "\nmask_prob = " << fmt_real(p.mask_prob)
    << "\nwarmup = " << fmt_real(p.warmup) << "\nweight_decay = " << fmt_real(p.weight_decay)
    << "\npeak_lr_scratch = " << fmt_real(p.peak_lr_scratch)
    << "\npeak_lr_distill = " << fmt_real(p.peak_lr_distill)
    << "\ngrad_accumulation = " << p.grad_accumulation << "\nlog_every = " << p.log_every
    << "\ntemperature = " << fmt_real(p.temperature) << "\nw_ce = " << fmt_real(p.w_ce)
    << "\nw_pred = " << fmt_real(p.w_pred)
    << "\nadd_mlm_term = " << (p.add_mlm_term ? "true" : "false") << "\n\n";
  const auto& f = c.finetune;
  o << "[finetune]\ntasks = ";
  for (std::size_t i = 0; i < f.tasks.size(); ++i) o << (i ? "," : "") << probe_name(f.tasks[i]);
  o << "\ntrain_size = " << f.train_size << "\ndev_size = " << f.dev_size
    << "\nseq_len = " << f.seq_len << "\nepochs = " << f.epochs << "\nbatch_sizes = ";
  for (std::size_t i = 0; i < f.batch_sizes.size(); ++i) o << (i ? "," : "") << f.batch_sizes[i];
  o << "\nlearning_rates = ";
  for (std::size_t i = 0; i < f.learning_rates.size(); ++i) {
    o << (i ? "," : "") << fmt_real(f.learning_rates[i]);
  }
  o << "\n";
  return o.str();
}

}  // namespace fairkd
