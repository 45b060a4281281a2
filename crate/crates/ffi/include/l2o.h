#ifndef L2O_H
#define L2O_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum L2oStatus {
  L2O_STATUS_OK = 0,
  L2O_STATUS_NULL_POINTER = 1,
  L2O_STATUS_INVALID_ARGUMENT = 2,
  L2O_STATUS_DIMENSION_MISMATCH = 3,
  L2O_STATUS_CONFIG = 4,
  L2O_STATUS_FORMAT = 5,
  L2O_STATUS_IO = 6,
  L2O_STATUS_TRAINING = 7,
  /**
   * Some runs of an experiment failed; the others completed.
   */
  L2O_STATUS_RUN_FAILURES = 8,
  L2O_STATUS_INTERNAL = 9,
} L2oStatus;

/**
 * Trained LSTM optimizer weights.
 */
typedef struct L2oLstm L2oLstm;

/**
 * LSTM optimizer driving one optimizee of fixed dimension.
 */
typedef struct L2oLstmSession L2oLstmSession;

/**
 * Unrolled network (LISTA family).
 */
typedef struct L2oUnrolled L2oUnrolled;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated crate version.
 */
const char *l2o_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated and
 * NUL-terminated) and returns its full length in bytes, without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t l2o_last_error(char *buf, size_t len);

/**
 * `10·log10(‖x̂ − x*‖² / ‖x*‖²)` of two length-`n` vectors.
 *
 * # Safety
 * `x_hat` and `x_star` must point to `n` readable doubles, `out` to one.
 */
enum L2oStatus l2o_nmse_db(const double *x_hat, const double *x_star, size_t n, double *out);

/**
 * `E[f − f*] / E[f*]` over `count` instances.
 *
 * # Safety
 * `f` and `f_star` must point to `count` readable doubles, `out` to one.
 */
enum L2oStatus l2o_relative_loss(const double *f, const double *f_star, size_t count, double *out);

/**
 * Network of `variant` (`lista`, `lista_cp`, `lista_cpss` or `alista`) that
 * reproduces `depth` ISTA steps on the `m x n` column-major dictionary `a`.
 *
 * # Safety
 * `variant` must be a NUL-terminated string, `a` must point to `m·n`
 * readable doubles and `out` to a writable handle slot.
 */
enum L2oStatus l2o_unrolled_ista_init(const char *variant,
                                      const double *a,
                                      size_t m,
                                      size_t n,
                                      double lambda,
                                      size_t depth,
                                      struct L2oUnrolled **out);

/**
 * Loads an unrolled network saved by the benchmark (`<method>_s<seed>.ol2o`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum L2oStatus l2o_unrolled_load(const char *path, struct L2oUnrolled **out);

/**
 * # Safety
 * `h` must be a live handle and `path` a NUL-terminated string.
 */
enum L2oStatus l2o_unrolled_save(const struct L2oUnrolled *h, const char *path);

/**
 * Writes `m`, `n` and the layer count.
 *
 * # Safety
 * `h` must be a live handle; the outputs must be writable (or null to skip).
 */
enum L2oStatus l2o_unrolled_shape(const struct L2oUnrolled *h, size_t *m, size_t *n, size_t *depth);

/**
 * Runs the first `layers` layers on `count` measurements `b` (`m x count`,
 * column-major) and writes the estimates (`n x count`) to `x_out`.
 *
 * # Safety
 * `h` must be a live handle, `b` must hold `m·count` doubles and `x_out`
 * must have room for `n·count`.
 */
enum L2oStatus l2o_unrolled_forward(const struct L2oUnrolled *h,
                                    const double *b,
                                    size_t count,
                                    size_t layers,
                                    double *x_out);

/**
 * # Safety
 * `h` must be null or a handle not yet freed.
 */
void l2o_unrolled_free(struct L2oUnrolled *h);

/**
 * Freshly initialized LSTM optimizer.
 *
 * # Safety
 * `out` must be a writable handle slot.
 */
enum L2oStatus l2o_lstm_init(uint64_t seed, size_t hidden, size_t layers, struct L2oLstm **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum L2oStatus l2o_lstm_load(const char *path, struct L2oLstm **out);

/**
 * # Safety
 * `h` must be a live handle and `path` a NUL-terminated string.
 */
enum L2oStatus l2o_lstm_save(const struct L2oLstm *h, const char *path);

/**
 * # Safety
 * `h` must be null or a handle not yet freed.
 */
void l2o_lstm_free(struct L2oLstm *h);

/**
 * Session for an `n`-dimensional optimizee with zeroed LSTM states. The
 * session keeps its own copy of the weights.
 *
 * # Safety
 * `h` must be a live handle and `out` a writable handle slot.
 */
enum L2oStatus l2o_lstm_session_new(const struct L2oLstm *h, size_t n, struct L2oLstmSession **out);

/**
 * Feeds the gradient `grad` (length `n`) and writes the update to add to
 * the iterate into `update`; the session's states advance.
 *
 * # Safety
 * `s` must be a live session, `grad` must hold `n` doubles and `update`
 * must have room for `n`.
 */
enum L2oStatus l2o_lstm_session_step(struct L2oLstmSession *s,
                                     const double *grad,
                                     size_t n,
                                     double *update);

/**
 * # Safety
 * `s` must be null or a session not yet freed.
 */
void l2o_lstm_session_free(struct L2oLstmSession *s);

/**
 * Runs the experiment described by the config file at `config`, writing
 * results and summary tables to `out_dir`. Returns
 * [`L2oStatus::RunFailures`] when some runs failed (see `failures.txt`).
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum L2oStatus l2o_run_experiment(const char *config, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* L2O_H */
