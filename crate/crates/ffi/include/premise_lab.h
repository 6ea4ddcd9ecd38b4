/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef PREMISE_LAB_H
#define PREMISE_LAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; values 3..=11 mirror the command-line exit codes.
 */
typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_POINTER = 1,
  PL_STATUS_INVALID_UTF8 = 2,
  PL_STATUS_CONFIG = 3,
  PL_STATUS_MISSING_ARTIFACT = 4,
  PL_STATUS_FORMAT = 5,
  PL_STATUS_IO = 6,
  PL_STATUS_DATA = 7,
  PL_STATUS_INPUT = 8,
  PL_STATUS_TRAINING = 9,
  PL_STATUS_PROTOCOL = 10,
  PL_STATUS_EMPTY_LOCALIZATION = 11,
  PL_STATUS_BUFFER_TOO_SMALL = 12,
  PL_STATUS_PANIC = 13,
} PlStatus;

/**
 * Opaque dataset manifest.
 */
typedef struct PlDataset PlDataset;

/**
 * Opaque trained model.
 */
typedef struct PlModel PlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (NUL-terminated, truncated to `cap`) and
 * returns its full length in bytes excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t pl_last_error(char *buf, size_t cap);

/**
 * Loads a checkpoint JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum PlStatus pl_model_load(const char *path, struct PlModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`pl_model_load`] and not be used afterwards.
 */
void pl_model_free(struct PlModel *model);

/**
 * Writes `(layers, heads, vocab_size, max_seq_len)`; any output may be null.
 *
 * # Safety
 * Non-null pointers must be valid for writes.
 */
enum PlStatus pl_model_shape(const struct PlModel *model,
                             size_t *layers,
                             size_t *heads,
                             size_t *vocab_size,
                             size_t *max_seq_len);

/**
 * Next-token logits after `tokens`, written to `out` (`vocab_size` values).
 *
 * # Safety
 * `tokens` must point to `n_tokens` ids and `out` to `out_len` doubles.
 */
enum PlStatus pl_forward_logits(const struct PlModel *model,
                                const size_t *tokens,
                                size_t n_tokens,
                                double *out,
                                size_t out_len);

/**
 * Loads a dataset manifest JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum PlStatus pl_dataset_load(const char *path, struct PlDataset **out);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `data` must come from [`pl_dataset_load`] and not be used afterwards.
 */
void pl_dataset_free(struct PlDataset *data);

/**
 * Number of question instances; 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t pl_dataset_len(const struct PlDataset *data);

/**
 * Influence of head `(layer, head)` on instance `index`.
 *
 * # Safety
 * Handles must be live; `out` must be valid for a write.
 */
enum PlStatus pl_head_influence(const struct PlModel *model,
                                const struct PlDataset *data,
                                size_t index,
                                size_t layer,
                                size_t head,
                                double *out);

/**
 * Beam-decodes the answer to instance `index` with the heads
 * `(layers[i], heads[i])` constrained on its false-object span. Writes at
 * most `cap` ids to `out_ids` and the full count to `out_len`; too small a
 * buffer yields `PL_STATUS_BUFFER_TOO_SMALL` with `out_len` set.
 *
 * # Safety
 * `layers`/`heads` must point to `n_heads` values (may be null when 0),
 * `out_ids` to `cap` writable ids and `out_len` must be valid for a write.
 */
enum PlStatus pl_constrained_generate(const struct PlModel *model,
                                      const struct PlDataset *data,
                                      size_t index,
                                      const size_t *layers,
                                      const size_t *heads,
                                      size_t n_heads,
                                      size_t beam_width,
                                      size_t max_new,
                                      size_t *out_ids,
                                      size_t cap,
                                      size_t *out_len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREMISE_LAB_H */
