/* C interface to the low-rank graph hypernetwork library. */

#ifndef LOGAH_H
#define LOGAH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible C-ABI call.
 */
typedef enum LogahStatus {
  LOGAH_STATUS_OK = 0,
  LOGAH_STATUS_NULL_ARGUMENT = 1,
  LOGAH_STATUS_INVALID_UTF8 = 2,
  LOGAH_STATUS_INVALID_ARGUMENT = 3,
  LOGAH_STATUS_IO_ERROR = 4,
  LOGAH_STATUS_RUNTIME_ERROR = 5,
  LOGAH_STATUS_PANIC = 6,
} LogahStatus;

/**
 * Opaque trained-hypernetwork checkpoint handle.
 */
typedef struct LogahCheckpoint LogahCheckpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *logah_version(void);

/**
 * Description of the most recent error on this thread. Never NULL; empty
 * string when no error has occurred. Valid until the next failing call.
 */
const char *logah_last_error_message(void);

/**
 * Dense (GHN-3-style) decoder parameter count:
 * `4*d^2*256 + 32*d^2 + 8*d^3 + d*num_classes`.
 */
uint64_t logah_ghn3_decoder_param_count(uint64_t d, uint64_t num_classes);

/**
 * Low-rank decoder parameter count: `4*d^2 + 32*d^2 + 8*d*2*r^2 + r*k`.
 */
uint64_t logah_lowrank_decoder_param_count(uint64_t d, uint64_t r, uint64_t k);

/**
 * Sample `count` architectures of `kind` ("vit" or "gpt2") under a
 * parameter cap and write them to `out_path` as JSONL, plus a histogram CSV
 * sidecar at `<out_path>.hist.csv`.
 *
 * # Safety
 * `kind` and `out_path` must be valid NUL-terminated strings.
 */
enum LogahStatus logah_generate_dataset(const char *kind,
                                        uintptr_t count,
                                        uint64_t seed,
                                        uint64_t cap,
                                        const char *out_path);

/**
 * Load a checkpoint file into a new handle stored in `*out`. On failure
 * `*out` is left untouched.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to writable storage for one handle pointer.
 */
enum LogahStatus logah_checkpoint_load(const char *path, struct LogahCheckpoint **out);

/**
 * Optimizer step count stored in the checkpoint; 0 for a NULL handle.
 *
 * # Safety
 * `handle` must be NULL or a live handle from [`logah_checkpoint_load`].
 */
uint64_t logah_checkpoint_step(const struct LogahCheckpoint *handle);

/**
 * Release a handle. NULL is a no-op.
 *
 * # Safety
 * `handle` must be NULL or a live handle from [`logah_checkpoint_load`];
 * it must not be used afterwards.
 */
void logah_checkpoint_free(struct LogahCheckpoint *handle);

/**
 * Predict the full parameter set of a preset architecture ("vit-s",
 * "vit-b", "vit-l", "gpt2-s", "gpt2-m", "gpt2-l") and write it as a
 * named-tensor archive directory at `out_dir`. When `fallback_count` is
 * non-NULL it receives the number of tensors the decoder could not predict
 * (routed to the variance-scaled fallback initializer).
 *
 * # Safety
 * `handle` must be a live handle; `preset` and `out_dir` valid
 * NUL-terminated strings; `fallback_count` NULL or writable.
 */
enum LogahStatus logah_predict_preset(const struct LogahCheckpoint *handle,
                                      const char *preset,
                                      const char *out_dir,
                                      uint64_t *fallback_count);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LOGAH_H */
