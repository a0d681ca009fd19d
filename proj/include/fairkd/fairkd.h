/* Copyright 2026 The fairkd Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface of libfairkd. Every function returns an fkd_status; on failure
 * fkd_last_error() describes the problem (per thread, valid until the next
 * call on that thread). Strings returned through char** are owned by the
 * caller and released with fkd_string_free. */

#ifndef FAIRKD_FAIRKD_H_
#define FAIRKD_FAIRKD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(FAIRKD_BUILDING_LIBRARY)
#define FKD_API __attribute__((visibility("default")))
#else
#define FKD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fkd_status {
  FKD_OK = 0,
  FKD_ERR_ARGUMENT = 1, /* null pointer, unknown enum value */
  FKD_ERR_SHAPE = 2,
  FKD_ERR_VALUE = 3,
  FKD_ERR_CONFIG = 4,
  FKD_ERR_IO = 5,
  FKD_ERR_FORMAT = 6, /* malformed file; see fkd_last_error_offset */
  FKD_ERR_INTERNAL = 7
} fkd_status;

typedef enum fkd_format { FKD_FORMAT_TSV = 0, FKD_FORMAT_MD = 1 } fkd_format;

typedef struct fkd_config fkd_config;
typedef struct fkd_checkpoint fkd_checkpoint;

typedef struct fkd_run_summary {
  uint64_t stages_run;
  uint64_t stages_skipped;
  uint64_t pretraining_runs;
  uint64_t grid_searches;
  uint64_t finetune_runs;
  uint64_t training_steps;
} fkd_run_summary;

FKD_API const char* fkd_version(void);
FKD_API const char* fkd_last_error(void);
/* Byte offset of the last FKD_ERR_FORMAT failure, 0 otherwise. */
FKD_API uint64_t fkd_last_error_offset(void);
FKD_API void fkd_string_free(char* s);

/* Experiment configuration (INI). */
FKD_API fkd_status fkd_config_load(const char* path, fkd_config** out);
FKD_API fkd_status fkd_config_parse(const char* ini_text, fkd_config** out);
/* key is "section.name", e.g. "budget.flop_budget". */
FKD_API fkd_status fkd_config_set(fkd_config* config, const char* key, const char* value);
FKD_API fkd_status fkd_config_to_ini(const fkd_config* config, char** out);
FKD_API void fkd_config_free(fkd_config* config);

/* Cost table and token allowances of every configured strategy. */
FKD_API fkd_status fkd_budget(const fkd_config* config, fkd_format format, char** out);
/* Pipeline stages under out_dir; summary may be NULL. */
FKD_API fkd_status fkd_pretrain_teacher(const fkd_config* config, const char* out_dir,
                                        fkd_run_summary* summary);
FKD_API fkd_status fkd_run(const fkd_config* config, const char* out_dir, fkd_run_summary* summary);
FKD_API fkd_status fkd_finetune(const fkd_config* config, const char* out_dir, const char* strategy,
                                fkd_run_summary* summary);
/* Re-renders the comparison table from the logs in out_dir. */
FKD_API fkd_status fkd_report(const char* out_dir, fkd_format format, char** out);

/* Checkpoints. */
FKD_API fkd_status fkd_checkpoint_load(const char* path, fkd_checkpoint** out);
FKD_API fkd_status fkd_checkpoint_save(const fkd_checkpoint* ckpt, const char* path);
/* *value is NULL when the key is absent; the pointer lives as long as ckpt. */
FKD_API fkd_status fkd_checkpoint_meta(const fkd_checkpoint* ckpt, const char* key,
                                       const char** value);
FKD_API size_t fkd_checkpoint_tensor_count(const fkd_checkpoint* ckpt);
FKD_API fkd_status fkd_checkpoint_tensor_info(const fkd_checkpoint* ckpt, size_t index,
                                              const char** name, size_t* rank,
                                              const uint64_t** dims);
FKD_API fkd_status fkd_checkpoint_tensor_data(const fkd_checkpoint* ckpt, size_t index,
                                              const float** data, size_t* count);
FKD_API void fkd_checkpoint_free(fkd_checkpoint* ckpt);

#ifdef __cplusplus
}
#endif

#endif /* FAIRKD_FAIRKD_H_ */
