#ifndef PICE_H
#define PICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PiceStatus {
  PICE_STATUS_OK = 0,
  PICE_STATUS_NULL_POINTER = 1,
  PICE_STATUS_DIMENSION = 2,
  PICE_STATUS_INVALID_INPUT = 3,
  PICE_STATUS_NUMERIC = 4,
  PICE_STATUS_INVALID_SAMPLE = 5,
  PICE_STATUS_DEGENERATE_BATCH = 6,
  PICE_STATUS_DIVERGENCE = 7,
  PICE_STATUS_UNSTABLE = 8,
  PICE_STATUS_PARSE = 9,
  PICE_STATUS_CONFIG = 10,
  PICE_STATUS_IO = 11,
  PICE_STATUS_INVALID_UTF8 = 12,
  PICE_STATUS_PANIC = 13,
} PiceStatus;

/**
 * Replay buffer handle.
 */
typedef struct PiceBuffer PiceBuffer;

/**
 * Policy handle.
 */
typedef struct PicePolicy PicePolicy;

/**
 * Q-function handle.
 */
typedef struct PiceQFunction PiceQFunction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *pice_last_error_message(void);

void pice_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pice_version(void);

/**
 * Nearest PSD matrix to the symmetric `dim x dim` matrix `h`.
 *
 * # Safety
 * `h` and `out` must point to `dim * dim` doubles.
 */
enum PiceStatus pice_proj_psd(const double *h, size_t dim, double *out);

/**
 * Projection of `h` onto the PSD matrices of Frobenius norm at most `delta`.
 *
 * # Safety
 * `h` and `out` must point to `dim * dim` doubles.
 */
enum PiceStatus pice_proj_intersection(const double *h, size_t dim, double delta, double *out);

/**
 * Q-function from its symmetric `dim x dim` value matrix, state first.
 *
 * # Safety
 * `h` must point to `dim * dim` doubles; `out` must be a valid pointer.
 */
enum PiceStatus pice_qfunction_from_matrix(const double *h,
                                           size_t dim,
                                           size_t state_dim,
                                           struct PiceQFunction **out);

/**
 * `Q(x, u)`.
 *
 * # Safety
 * `q` must be a live handle, `x` and `u` must hold `nx` and `nu` doubles.
 */
enum PiceStatus pice_qfunction_value(const struct PiceQFunction *q,
                                     const double *x,
                                     size_t nx,
                                     const double *u,
                                     size_t nu,
                                     double *out);

/**
 * # Safety
 * `q` must be a live handle.
 */
enum PiceStatus pice_qfunction_min_eigenvalue(const struct PiceQFunction *q, double *out);

/**
 * # Safety
 * `q` must be null or a handle not yet freed.
 */
void pice_qfunction_free(struct PiceQFunction *q);

/**
 * Box-clipped linear policy `u = clip(L x)` with `L` given row-major,
 * `action_dim x state_dim`, box `[-1, 1]`.
 *
 * # Safety
 * `gain` must point to `action_dim * state_dim` doubles.
 */
enum PiceStatus pice_policy_from_gain(const double *gain,
                                      size_t action_dim,
                                      size_t state_dim,
                                      struct PicePolicy **out);

/**
 * Greedy policy of `q` over the box `[-1, 1]`.
 *
 * # Safety
 * `q` must be a live handle.
 */
enum PiceStatus pice_policy_greedy(const struct PiceQFunction *q, struct PicePolicy **out);

/**
 * # Safety
 * `p` must be a live handle, `x` must hold `nx` doubles and `u` room for `nu`.
 */
enum PiceStatus pice_policy_act(const struct PicePolicy *p,
                                const double *x,
                                size_t nx,
                                double *u,
                                size_t nu);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum PiceStatus pice_policy_load(const char *path, struct PicePolicy **out);

/**
 * # Safety
 * `p` must be a live handle and `path` a NUL-terminated string.
 */
enum PiceStatus pice_policy_save(const struct PicePolicy *p, const char *path);

/**
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void pice_policy_free(struct PicePolicy *p);

/**
 * Empty offline buffer holding at most `capacity` samples.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PiceStatus pice_buffer_new(size_t capacity, struct PiceBuffer **out);

/**
 * Append the four-tuple `(x, u, g, x_next)`.
 *
 * # Safety
 * `b` must be a live handle; `x`, `x_next` hold `nx` doubles, `u` holds `nu`.
 */
enum PiceStatus pice_buffer_push(struct PiceBuffer *b,
                                 const double *x,
                                 size_t nx,
                                 const double *u,
                                 size_t nu,
                                 double g,
                                 const double *x_next);

/**
 * Load a JSON-lines buffer file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum PiceStatus pice_buffer_load(const char *path, struct PiceBuffer **out);

/**
 * # Safety
 * `b` must be a live handle.
 */
enum PiceStatus pice_buffer_len(const struct PiceBuffer *b, size_t *out);

/**
 * # Safety
 * `b` must be null or a handle not yet freed.
 */
void pice_buffer_free(struct PiceBuffer *b);

/**
 * Offline policy iteration from the zero policy with default cost weights
 * and training settings. `policy_updates` and `converged` may be null.
 *
 * # Safety
 * `b` must be a live handle and `out` a valid pointer.
 */
enum PiceStatus pice_offline_train(const struct PiceBuffer *b,
                                   struct PicePolicy **out,
                                   size_t *policy_updates,
                                   bool *converged);

/**
 * Run the experiment described by a TOML config file, writing outputs under
 * `out_dir`. `threads` of 0 means one worker.
 *
 * # Safety
 * `config_path` and `out_dir` must be NUL-terminated strings.
 */
enum PiceStatus pice_run_config(const char *config_path, const char *out_dir, size_t threads);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PICE_H */
