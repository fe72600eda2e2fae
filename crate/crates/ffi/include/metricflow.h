#ifndef METRICFLOW_H
#define METRICFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; nonzero values mirror the CLI exit codes where they overlap.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an undersized output buffer.
   */
  MF_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Input rejected by the engine.
   */
  MF_STATUS_INVALID = 2,
  MF_STATUS_NUMERIC = 3,
  MF_STATUS_IO = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  MF_STATUS_INTERNAL = 5,
} MfStatus;

typedef enum MfCodebookKind {
  MF_CODEBOOK_KIND_RANDOM_UNIT_SPHERE = 0,
  MF_CODEBOOK_KIND_INTEGER_GRID = 1,
} MfCodebookKind;

/**
 * Codebook with its cached distance matrix.
 */
typedef struct MfCodebook MfCodebook;

/**
 * Enumerated toy task distribution.
 */
typedef struct MfTask MfTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mf_version(void);

/**
 * Message of the last failed call on this thread; valid until the next
 * failing call on the same thread. Empty when nothing failed yet.
 */
const char *mf_last_error(void);

/**
 * Synthesizes a codebook of `k` entries in `dim` dimensions.
 *
 * # Safety
 * `out` must be a valid pointer; the handle it receives must be released
 * with [`mf_codebook_free`].
 */
enum MfStatus mf_codebook_synth(enum MfCodebookKind kind,
                                size_t k,
                                size_t dim,
                                uint64_t seed,
                                struct MfCodebook **out);

/**
 * Loads a codebook JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MfStatus mf_codebook_load(const char *path, struct MfCodebook **out);

/**
 * # Safety
 * `cb` must be a live handle and `path` a NUL-terminated string.
 */
enum MfStatus mf_codebook_save(const struct MfCodebook *cb, const char *path);

/**
 * Releases a codebook handle; null is ignored.
 *
 * # Safety
 * `cb` must be null or a handle not yet freed.
 */
void mf_codebook_free(struct MfCodebook *cb);

/**
 * Number of codebook entries, or 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live handle.
 */
size_t mf_codebook_k(const struct MfCodebook *cb);

/**
 * # Safety
 * `cb` must be a live handle and `out` a valid pointer.
 */
enum MfStatus mf_codebook_distance(const struct MfCodebook *cb, size_t i, size_t j, double *out);

/**
 * `beta_t = c * (t / (1 - t))^alpha` for `t` in `[0, 1)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MfStatus mf_beta(double alpha, double c, double t, double *out);

/**
 * `t / (t + lambda * (1 - t))`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MfStatus mf_shift_time(double t, double lambda, double *out);

/**
 * Writes `p_t(. | target)` (unshifted `t`) into `out[0..k]`.
 *
 * # Safety
 * `cb` must be a live handle and `out` must hold `len` doubles.
 */
enum MfStatus mf_conditional_probs(const struct MfCodebook *cb,
                                   size_t target,
                                   double alpha,
                                   double c,
                                   double t,
                                   double *out,
                                   size_t len);

/**
 * Builds a toy task from its JSON spec.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer; the
 * handle must be released with [`mf_task_free`].
 */
enum MfStatus mf_task_from_json(const char *json, struct MfTask **out);

/**
 * # Safety
 * `task` must be null or a handle not yet freed.
 */
void mf_task_free(struct MfTask *task);

/**
 * Tokens per sequence, or 0 for a null handle.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t mf_task_sequence_len(const struct MfTask *task);

/**
 * Number of sequences with positive probability, or 0 for a null handle.
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t mf_task_support_len(const struct MfTask *task);

/**
 * Samples `count` sequences with the exact posterior predictor and the
 * Euler sampler (sync mode). Writes `count * mf_task_sequence_len` tokens
 * row-major into `out`.
 *
 * # Safety
 * Handles must be live and `out` must hold `len` values.
 */
enum MfStatus mf_sample_oracle(const struct MfTask *task,
                               const struct MfCodebook *cb,
                               double alpha,
                               double c,
                               double lambda,
                               size_t steps,
                               uint64_t seed,
                               size_t count,
                               uint32_t *out,
                               size_t len);

/**
 * Exact total variation between `count` row-major sequences and the task
 * distribution.
 *
 * # Safety
 * `task` must be a live handle and `tokens` must hold
 * `count * mf_task_sequence_len` values.
 */
enum MfStatus mf_exact_tv(const struct MfTask *task,
                          const uint32_t *tokens,
                          size_t count,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METRICFLOW_H */
