// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/fairkd.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "fairkd/checkpoint.hpp"
#include "fairkd/config.hpp"
#include "fairkd/error.hpp"
#include "fairkd/experiment.hpp"

struct fkd_config {
  fairkd::ExperimentConfig config;
};

struct fkd_checkpoint {
  fairkd::CheckpointFile file;
  std::vector<std::vector<uint64_t>> dims;
};

namespace {

thread_local std::string g_last_error;
thread_local uint64_t g_last_offset = 0;

fkd_status fail(fkd_status status, const std::string& message, uint64_t offset = 0) {
  g_last_error = message;
  g_last_offset = offset;
  return status;
}

template <typename F>
fkd_status guarded(F&& body) {
  g_last_error.clear();
  g_last_offset = 0;
  try {
    body();
    return FKD_OK;
  } catch (const fairkd::FormatError& e) {
    return fail(FKD_ERR_FORMAT, e.what(), e.offset());
  } catch (const fairkd::ShapeError& e) {
    return fail(FKD_ERR_SHAPE, e.what());
  } catch (const fairkd::ValueError& e) {
    return fail(FKD_ERR_VALUE, e.what());
  } catch (const fairkd::ConfigError& e) {
    return fail(FKD_ERR_CONFIG, e.what());
  } catch (const fairkd::IoError& e) {
    return fail(FKD_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FKD_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FKD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FKD_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

fairkd::ReportFormat to_format(fkd_format f) {
  switch (f) {
    case FKD_FORMAT_TSV: return fairkd::ReportFormat::kTsv;
    case FKD_FORMAT_MD: return fairkd::ReportFormat::kMarkdown;
  }
  throw fairkd::ConfigError("unknown output format " + std::to_string(static_cast<int>(f)));
}

void fill_summary(const fairkd::RunSummary& s, fkd_run_summary* out) {
  if (out == nullptr) return;
  out->stages_run = s.stages_run.size();
  out->stages_skipped = s.stages_skipped.size();
  out->pretraining_runs = s.pretraining_runs;
  out->grid_searches = s.grid_searches;
  out->finetune_runs = s.finetune_runs;
  out->training_steps = s.training_steps;
}

#define FKD_REQUIRE(ptr)                                                  \
  do {                                                                    \
    if ((ptr) == nullptr) return fail(FKD_ERR_ARGUMENT, #ptr " is NULL"); \
  } while (0)

#define FKD_REQUIRE_FORMAT(f)                                                      \
  do {                                                                             \
    if ((f) != FKD_FORMAT_TSV && (f) != FKD_FORMAT_MD)                             \
      return fail(FKD_ERR_ARGUMENT, "unknown output format " + std::to_string(f)); \
  } while (0)

}  // namespace

extern "C" {

const char* fkd_version(void) { return "0.1.0"; }
const char* fkd_last_error(void) { return g_last_error.c_str(); }
uint64_t fkd_last_error_offset(void) { return g_last_offset; }
void fkd_string_free(char* s) { std::free(s); }

fkd_status fkd_config_load(const char* path, fkd_config** out) {
  FKD_REQUIRE(path);
  FKD_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new fkd_config{fairkd::load_config(path)}; });
}

fkd_status fkd_config_parse(const char* ini_text, fkd_config** out) {
  FKD_REQUIRE(ini_text);
  FKD_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new fkd_config{fairkd::parse_config(ini_text)}; });
}

fkd_status fkd_config_set(fkd_config* config, const char* key, const char* value) {
  FKD_REQUIRE(config);
  FKD_REQUIRE(key);
  FKD_REQUIRE(value);
  return guarded([&] { fairkd::apply_override(config->config, key, value); });
}

fkd_status fkd_config_to_ini(const fkd_config* config, char** out) {
  FKD_REQUIRE(config);
  FKD_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = dup_string(fairkd::to_ini(config->config)); });
}

void fkd_config_free(fkd_config* config) { delete config; }

fkd_status fkd_budget(const fkd_config* config, fkd_format format, char** out) {
  FKD_REQUIRE(config);
  FKD_REQUIRE(out);
  FKD_REQUIRE_FORMAT(format);
  *out = nullptr;
  return guarded([&] {
    const auto fmt = to_format(format);
    const fairkd::PreparedData data = fairkd::prepare_data(config->config);
    const auto model =
        fairkd::experiment_cost_model(config->config, data.vocab.size(), data.limited_tokens);
    *out = dup_string(fairkd::render_budget(model, fmt));
  });
}

fkd_status fkd_pretrain_teacher(const fkd_config* config, const char* out_dir,
                                fkd_run_summary* summary) {
  FKD_REQUIRE(config);
  FKD_REQUIRE(out_dir);
  return guarded([&] {
    fairkd::Experiment exp(config->config, out_dir);
    fill_summary(exp.pretrain_teacher(), summary);
  });
}

fkd_status fkd_run(const fkd_config* config, const char* out_dir, fkd_run_summary* summary) {
  FKD_REQUIRE(config);
  FKD_REQUIRE(out_dir);
  return guarded([&] {
    fairkd::Experiment exp(config->config, out_dir);
    fill_summary(exp.run(), summary);
  });
}

fkd_status fkd_finetune(const fkd_config* config, const char* out_dir, const char* strategy,
                        fkd_run_summary* summary) {
  FKD_REQUIRE(config);
  FKD_REQUIRE(out_dir);
  FKD_REQUIRE(strategy);
  return guarded([&] {
    const fairkd::Strategy s = fairkd::parse_strategy(strategy);
    fairkd::Experiment exp(config->config, out_dir);
    fill_summary(exp.finetune(s), summary);
  });
}

fkd_status fkd_report(const char* out_dir, fkd_format format, char** out) {
  FKD_REQUIRE(out_dir);
  FKD_REQUIRE(out);
  FKD_REQUIRE_FORMAT(format);
  *out = nullptr;
  return guarded(
      [&] { *out = dup_string(fairkd::render_report_from_dir(out_dir, to_format(format))); });
}

fkd_status fkd_checkpoint_load(const char* path, fkd_checkpoint** out) {
  FKD_REQUIRE(path);
  FKD_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    auto* c = new fkd_checkpoint{fairkd::read_checkpoint(path), {}};
    for (const auto& t : c->file.tensors) c->dims.emplace_back(t.shape.begin(), t.shape.end());
    *out = c;
  });
}

fkd_status fkd_checkpoint_save(const fkd_checkpoint* ckpt, const char* path) {
  FKD_REQUIRE(ckpt);
  FKD_REQUIRE(path);
  return guarded([&] { fairkd::write_checkpoint(path, ckpt->file); });
}

fkd_status fkd_checkpoint_meta(const fkd_checkpoint* ckpt, const char* key, const char** value) {
  FKD_REQUIRE(ckpt);
  FKD_REQUIRE(key);
  FKD_REQUIRE(value);
  auto it = ckpt->file.metadata.find(key);
  *value = it == ckpt->file.metadata.end() ? nullptr : it->second.c_str();
  return FKD_OK;
}

size_t fkd_checkpoint_tensor_count(const fkd_checkpoint* ckpt) {
  return ckpt == nullptr ? 0 : ckpt->file.tensors.size();
}

fkd_status fkd_checkpoint_tensor_info(const fkd_checkpoint* ckpt, size_t index, const char** name,
                                      size_t* rank, const uint64_t** dims) {
  FKD_REQUIRE(ckpt);
  if (index >= ckpt->file.tensors.size()) {
    return fail(FKD_ERR_ARGUMENT, "tensor index " + std::to_string(index) + " out of range");
  }
  if (name) *name = ckpt->file.tensors[index].name.c_str();
  if (rank) *rank = ckpt->dims[index].size();
  if (dims) *dims = ckpt->dims[index].data();
  return FKD_OK;
}

fkd_status fkd_checkpoint_tensor_data(const fkd_checkpoint* ckpt, size_t index, const float** data,
                                      size_t* count) {
  FKD_REQUIRE(ckpt);
  FKD_REQUIRE(data);
  FKD_REQUIRE(count);
  if (index >= ckpt->file.tensors.size()) {
    return fail(FKD_ERR_ARGUMENT, "tensor index " + std::to_string(index) + " out of range");
  }
  *data = ckpt->file.tensors[index].values.data();
  *count = ckpt->file.tensors[index].values.size();
  return FKD_OK;
}

void fkd_checkpoint_free(fkd_checkpoint* ckpt) { delete ckpt; }

}  // extern "C"
