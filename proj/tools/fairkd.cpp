// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library only through fairkd.h.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "fairkd/fairkd.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::string data_mode;
  std::optional<std::uint64_t> flop_budget;
  std::string out = "fairkd_out";
  std::string format = "md";
};

class Failure {
 public:
  explicit Failure(fkd_status s) : status(s) {}
  fkd_status status;
};

void check(fkd_status s) {
  if (s != FKD_OK) throw Failure(s);
}

fkd_format parse_format(const std::string& f) { return f == "tsv" ? FKD_FORMAT_TSV : FKD_FORMAT_MD; }

struct ConfigHandle {
  fkd_config* ptr = nullptr;
  ~ConfigHandle() { fkd_config_free(ptr); }
};

void load(const Options& o, ConfigHandle& h, bool strategy_selects_run) {
  check(fkd_config_load(o.config.c_str(), &h.ptr));
  if (o.seed) check(fkd_config_set(h.ptr, "experiment.seed", std::to_string(*o.seed).c_str()));
  if (!o.data_mode.empty()) check(fkd_config_set(h.ptr, "data.mode", o.data_mode.c_str()));
  if (o.flop_budget) {
    check(fkd_config_set(h.ptr, "budget.flop_budget", std::to_string(*o.flop_budget).c_str()));
  }
  if (strategy_selects_run && !o.strategy.empty()) {
    const std::string list = o.strategy == "scratch" ? "scratch" : "scratch," + o.strategy;
    check(fkd_config_set(h.ptr, "experiment.strategies", list.c_str()));
  }
}

void print_owned(char* s) {
  std::fputs(s, stdout);
  fkd_string_free(s);
}

void print_summary(const fkd_run_summary& s) {
  std::printf("stages run: %llu, skipped: %llu, pretraining runs: %llu, grid searches: %llu, "
              "finetune runs: %llu, optimizer steps: %llu\n",
              static_cast<unsigned long long>(s.stages_run),
              static_cast<unsigned long long>(s.stages_skipped),
              static_cast<unsigned long long>(s.pretraining_runs),
              static_cast<unsigned long long>(s.grid_searches),
              static_cast<unsigned long long>(s.finetune_runs),
              static_cast<unsigned long long>(s.training_steps));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairkd: compute-matched pretraining of small MLM encoders, from scratch or by distillation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fkd_version()));
  Options o;

  auto add_common = [&o](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "experiment config (INI)")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--seed", o.seed, "override experiment.seed");
    sub->add_option("--data-mode", o.data_mode, "override data.mode")
        ->check(CLI::IsMember({"unlimited", "limited"}));
    sub->add_option("--flop-budget", o.flop_budget, "override budget.flop_budget");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--format", o.format, "table format")
        ->check(CLI::IsMember({"tsv", "md"}))
        ->capture_default_str();
  };

  auto* teacher = app.add_subcommand("pretrain-teacher", "pretrain the teacher encoder");
  add_common(teacher, true);
  auto* run = app.add_subcommand("run", "full experiment: teacher, every strategy, probes, report");
  add_common(run, true);
  run->add_option("--strategy", o.strategy, "run only this strategy (plus the scratch baseline)");
  auto* finetune = app.add_subcommand("finetune", "grid-search the probe tasks on one student");
  add_common(finetune, true);
  finetune->add_option("--strategy", o.strategy, "student to finetune")->required();
  auto* budget = app.add_subcommand("budget", "print per-token costs and token allowances");
  add_common(budget, true);
  auto* report = app.add_subcommand("report", "re-render the comparison table from an output directory");
  report->add_option("--out", o.out, "output directory")->capture_default_str();
  report->add_option("--format", o.format, "table format")
      ->check(CLI::IsMember({"tsv", "md"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    ConfigHandle cfg;
    fkd_run_summary summary{};
    if (*teacher) {
      load(o, cfg, false);
      check(fkd_pretrain_teacher(cfg.ptr, o.out.c_str(), &summary));
      print_summary(summary);
    } else if (*run) {
      load(o, cfg, true);
      check(fkd_run(cfg.ptr, o.out.c_str(), &summary));
      print_summary(summary);
      char* table = nullptr;
      check(fkd_report(o.out.c_str(), parse_format(o.format), &table));
      print_owned(table);
    } else if (*finetune) {
      load(o, cfg, false);
      check(fkd_finetune(cfg.ptr, o.out.c_str(), o.strategy.c_str(), &summary));
      print_summary(summary);
    } else if (*budget) {
      load(o, cfg, false);
      char* table = nullptr;
      check(fkd_budget(cfg.ptr, parse_format(o.format), &table));
      print_owned(table);
    } else if (*report) {
      char* table = nullptr;
      check(fkd_report(o.out.c_str(), parse_format(o.format), &table));
      print_owned(table);
    }
  } catch (const Failure& f) {
    std::cerr << "fairkd: error: " << fkd_last_error() << '\n';
    return f.status == FKD_ERR_CONFIG || f.status == FKD_ERR_ARGUMENT ? 2 : 1;
  }
  return 0;
}
