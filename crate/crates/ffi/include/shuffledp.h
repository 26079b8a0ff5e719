#ifndef SHUFFLEDP_H
#define SHUFFLEDP_H

/* Generated by cbindgen from the shuffledp-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define SHUFFLEDP_OK 0

/**
 * A required pointer argument was null.
 */
#define SHUFFLEDP_ERR_NULL 1

/**
 * Invalid configuration or parameters.
 */
#define SHUFFLEDP_ERR_CONFIG 2

/**
 * Dataset construction, validation, or I/O failed.
 */
#define SHUFFLEDP_ERR_DATASET 3

/**
 * An internal panic was caught at the boundary.
 */
#define SHUFFLEDP_ERR_PANIC 4

/**
 * A string argument was not valid UTF-8.
 */
#define SHUFFLEDP_ERR_UTF8 5

/**
 * Opaque handle for a validated scalar dataset.
 */
typedef struct ShuffledpDataset ShuffledpDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *shuffledp_version(void);

/**
 * Message describing the calling thread's most recent error. The pointer
 * stays valid until the next failing call on the same thread; do not free.
 */
const char *shuffledp_last_error(void);

/**
 * Builds a dataset from `len` values bounded by `domain` and writes the
 * handle to `out`. The values are copied; the caller keeps ownership of
 * the input buffer and must release the handle with
 * `shuffledp_dataset_free`.
 *
 * # Safety
 * `values` must point to `len` readable u64 values and `out` must be a
 * valid writable pointer.
 */
int32_t shuffledp_dataset_new(const uint64_t *values,
                              size_t len,
                              uint64_t domain,
                              struct ShuffledpDataset **out);

/**
 * Reads a scalar dataset from a CSV file. `column` selects a header column
 * by name; pass null for a headerless single-column file. `domain` of 0
 * means "use the observed maximum"; otherwise values are clamped to it.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `column` null or NUL-terminated,
 * and `out` a valid writable pointer.
 */
int32_t shuffledp_dataset_from_csv(const char *path,
                                   const char *column,
                                   uint64_t domain,
                                   struct ShuffledpDataset **out);

/**
 * Number of values in the dataset; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle from this library.
 */
uint64_t shuffledp_dataset_len(const struct ShuffledpDataset *dataset);

/**
 * Exact (non-private) sum of the dataset; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle from this library.
 */
uint64_t shuffledp_dataset_sum(const struct ShuffledpDataset *dataset);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `dataset` must be null or a handle produced by this library, and must
 * not be used afterwards.
 */
void shuffledp_dataset_free(struct ShuffledpDataset *dataset);

/**
 * Runs one round of the scalar sum protocol with private threshold
 * selection over the dataset and writes the estimate to `out_estimate`
 * and the selected clipping threshold to `out_threshold` (ignored when
 * null). `noiseless` disables noise and rounding for exactness checks.
 *
 * # Safety
 * `dataset` must be a live handle and `out_estimate` a valid writable
 * pointer; `out_threshold` must be null or writable.
 */
int32_t shuffledp_sum_estimate(const struct ShuffledpDataset *dataset,
                               double epsilon,
                               double delta,
                               double beta,
                               bool noiseless,
                               uint64_t seed,
                               double *out_estimate,
                               uint64_t *out_threshold);

/**
 * Runs a full experiment described by a JSON configuration (the same
 * schema the CLI uses) and writes a heap-allocated JSON report document to
 * `out_json`. Release the string with `shuffledp_string_free`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out_json` a valid
 * writable pointer.
 */
int32_t shuffledp_run_experiment_json(const char *config_json, char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string produced by this library, and must not be
 * used afterwards.
 */
void shuffledp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHUFFLEDP_H */
