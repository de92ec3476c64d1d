/* Copyright (c) 2026 The GKD Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef GKD_GKD_H_
#define GKD_GKD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GKD_API __declspec(dllexport)
#else
#define GKD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gkd_status {
  GKD_OK = 0,
  GKD_ERR_INVALID_ARGUMENT = 1, /* null handle or pointer, unknown key */
  GKD_ERR_VALIDATION = 2,
  GKD_ERR_DIMENSION = 3,
  GKD_ERR_NUMERIC = 4,
  GKD_ERR_CONTRACT = 5,
  GKD_ERR_IO = 6,
  GKD_ERR_EXISTS = 7,
  GKD_ERR_MISSING_INPUT = 8,
  GKD_ERR_RUN = 9,
  GKD_ERR_CHECK_FAILED = 10, /* gradcheck found a mismatch */
  GKD_ERR_INTERNAL = 11
} gkd_status;

/* Opaque session: an experiment config plus overrides, a log sink and the
 * last error message. Not thread safe; use one session per thread. */
typedef struct gkd_session gkd_session;

/* Receives one line of progress output, without the trailing newline. */
typedef void (*gkd_log_fn)(const char* line, void* user);

GKD_API const char* gkd_version(void);
GKD_API const char* gkd_status_name(gkd_status status);
/* 0 success, 2 usage or config errors, 1 everything else. */
GKD_API int gkd_exit_code(gkd_status status);

/* New session holding the built-in default config. */
GKD_API gkd_status gkd_session_create(gkd_session** out);
/* Replaces the session config with the file at config_path. */
GKD_API gkd_status gkd_session_load_config(gkd_session* session, const char* config_path);
GKD_API void gkd_session_destroy(gkd_session* session);
/* Message of the last failed call on this session; "" after success. */
GKD_API const char* gkd_session_last_error(const gkd_session* session);
/* Routes progress lines to fn; NULL restores the default (stdout). */
GKD_API gkd_status gkd_session_set_log(gkd_session* session, gkd_log_fn fn, void* user);

/* Overrides applied before each command. Keys: seed, method,
 * label_fraction, out, overwrite ("0" or "1"). */
GKD_API gkd_status gkd_session_set(gkd_session* session, const char* key, const char* value);
/* Effective config as JSON; valid until the next call on the session. */
GKD_API gkd_status gkd_session_config_json(gkd_session* session, const char** out);

GKD_API gkd_status gkd_build_corpus(gkd_session* session, uint64_t* corpus_hash);
GKD_API gkd_status gkd_pretrain_teacher(gkd_session* session, double* val_miou);
/* method NULL runs every method of the config. unseen_miou, when not NULL,
 * receives the mean unseen mIoU over the runs. */
GKD_API gkd_status gkd_run(gkd_session* session, const char* method, double* unseen_miou);
/* run_dir NULL evaluates every run under the output directory. */
GKD_API gkd_status gkd_eval(gkd_session* session, const char* run_dir);
/* corrupt != 0 enables the negative control. Returns GKD_ERR_CHECK_FAILED
 * when any row exceeds the tolerance; rows/failed may be NULL. */
GKD_API gkd_status gkd_gradcheck(gkd_session* session, int corrupt, size_t* rows, size_t* failed);
/* run_dirs NULL (count 0) reports every run under the output directory;
 * out_dir NULL writes into <out>/report. */
GKD_API gkd_status gkd_report(gkd_session* session, const char* const* run_dirs, size_t count,
                              const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* GKD_GKD_H_ */
