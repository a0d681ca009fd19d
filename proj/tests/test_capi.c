/* Copyright 2026 The fairkd Authors
 * SPDX-License-Identifier: Apache-2.0 */

/* Exercises the C interface from C, linked against libfairkd only. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "fairkd/fairkd.h"

static int failures = 0;

#define EXPECT(cond)                                                   \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: expected %s (last error: %s)\n", __FILE__, \
              __LINE__, #cond, fkd_last_error());                      \
      ++failures;                                                      \
    }                                                                  \
  } while (0)

static const char* kIni =
    "[experiment]\nname = capi\nseed = 5\nstrategies = scratch,minilm\n"
    "[data]\nmode = limited\ncorpus_tokens = 20000\nlexicon_size = 40\nseq_len = 16\n"
    "limited_tokens = 2000\nheldout_sequences = 8\n"
    "[teacher]\nlayers = 1\nhidden = 16\nheads = 2\ntokens = 3000\n"
    "[student]\nlayers = 1\nhidden = 8\nheads = 2\n"
    "[budget]\nflop_budget = 50000000\n"
    "[pretrain]\nbatch_size = 16\n"
    "[finetune]\ntasks = first-token\ntrain_size = 16\ndev_size = 16\nseq_len = 12\n"
    "epochs = 1\nbatch_sizes = 16\nlearning_rates = 1e-3\n";

int main(int argc, char** argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: %s OUT_DIR\n", argv[0]);
    return 2;
  }
  const char* out = argv[1];
  char path[4096];

  EXPECT(strlen(fkd_version()) > 0);

  fkd_config* cfg = NULL;
  EXPECT(fkd_config_parse(NULL, &cfg) == FKD_ERR_ARGUMENT);
  EXPECT(fkd_config_parse("[student]\nwidth = 3\n", &cfg) == FKD_ERR_CONFIG);
  EXPECT(strstr(fkd_last_error(), "width") != NULL);
  EXPECT(fkd_config_load("/nonexistent/x.ini", &cfg) == FKD_ERR_IO);
  EXPECT(fkd_config_parse(kIni, &cfg) == FKD_OK);
  EXPECT(fkd_config_set(cfg, "budget.flop_budget", "zero") == FKD_ERR_CONFIG);
  EXPECT(fkd_config_set(cfg, "experiment.seed", "6") == FKD_OK);

  char* ini = NULL;
  EXPECT(fkd_config_to_ini(cfg, &ini) == FKD_OK);
  EXPECT(ini != NULL && strstr(ini, "seed = 6") != NULL);
  fkd_string_free(ini);

  char* table = NULL;
  EXPECT(fkd_budget(cfg, FKD_FORMAT_TSV, &table) == FKD_OK);
  EXPECT(table != NULL && strstr(table, "minilm") != NULL);
  fkd_string_free(table);
  EXPECT(fkd_budget(cfg, (fkd_format)7, &table) == FKD_ERR_ARGUMENT);

  fkd_run_summary s;
  memset(&s, 0, sizeof s);
  EXPECT(fkd_run(cfg, out, &s) == FKD_OK);
  EXPECT(s.pretraining_runs == 3);
  EXPECT(s.stages_skipped == 0);
  EXPECT(fkd_run(cfg, out, &s) == FKD_OK);
  EXPECT(s.stages_run == 0);
  EXPECT(fkd_finetune(cfg, out, "bert", &s) == FKD_ERR_CONFIG);

  char* report = NULL;
  EXPECT(fkd_report(out, FKD_FORMAT_MD, &report) == FKD_OK);
  EXPECT(report != NULL && strstr(report, "| scratch |") != NULL);
  fkd_string_free(report);

  fkd_checkpoint* ck = NULL;
  snprintf(path, sizeof path, "%s/student_minilm.fkd", out);
  EXPECT(fkd_checkpoint_load(path, &ck) == FKD_OK);
  const char* strategy = NULL;
  EXPECT(fkd_checkpoint_meta(ck, "strategy", &strategy) == FKD_OK);
  EXPECT(strategy != NULL && strcmp(strategy, "minilm") == 0);
  const char* absent = "x";
  EXPECT(fkd_checkpoint_meta(ck, "no-such-key", &absent) == FKD_OK && absent == NULL);
  EXPECT(fkd_checkpoint_tensor_count(ck) > 0);
  const char* name = NULL;
  size_t rank = 0, count = 0;
  const uint64_t* dims = NULL;
  const float* data = NULL;
  EXPECT(fkd_checkpoint_tensor_info(ck, 0, &name, &rank, &dims) == FKD_OK);
  EXPECT(rank == 2);
  EXPECT(fkd_checkpoint_tensor_data(ck, 0, &data, &count) == FKD_OK);
  EXPECT(count == dims[0] * dims[1]);
  EXPECT(fkd_checkpoint_tensor_info(ck, 100000, &name, &rank, &dims) == FKD_ERR_ARGUMENT);

  snprintf(path, sizeof path, "%s/copy.fkd", out);
  EXPECT(fkd_checkpoint_save(ck, path) == FKD_OK);
  fkd_checkpoint_free(ck);

  /* Flip one payload byte: the checksum must catch it. */
  FILE* f = fopen(path, "r+b");
  EXPECT(f != NULL);
  if (f) {
    fseek(f, -8, SEEK_END);
    int c = fgetc(f);
    fseek(f, -8, SEEK_END);
    fputc(c ^ 0x40, f);
    fclose(f);
  }
  ck = NULL;
  EXPECT(fkd_checkpoint_load(path, &ck) == FKD_ERR_FORMAT);
  EXPECT(fkd_last_error_offset() > 0);
  EXPECT(ck == NULL);

  fkd_config_free(cfg);
  if (failures) fprintf(stderr, "%d C API check(s) failed\n", failures);
  else printf("C API: all checks passed\n");
  return failures ? 1 : 0;
}
