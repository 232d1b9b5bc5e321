#ifndef SPVAR_H
#define SPVAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Joint (`0`) or rowwise (`1`) estimation.
 */
typedef enum {
  SPVAR_ESTIMATOR_JOINT = 0,
  SPVAR_ESTIMATOR_ROWWISE = 1,
} SpvarEstimator;

/**
 * Status codes.
 */
typedef enum {
  SPVAR_STATUS_OK = 0,
  SPVAR_STATUS_NULL_POINTER = 1,
  SPVAR_STATUS_INVALID_ARGUMENT = 2,
  SPVAR_STATUS_SHAPE = 3,
  SPVAR_STATUS_NOT_STATIONARY = 4,
  SPVAR_STATUS_FIT_FAILED = 5,
  SPVAR_STATUS_PARSE = 6,
  SPVAR_STATUS_IO = 7,
  SPVAR_STATUS_BUFFER_TOO_SMALL = 8,
  SPVAR_STATUS_PANIC = 9,
  SPVAR_STATUS_OTHER = 10,
} SpvarStatus;

/**
 * The outcome of a fit.
 */
typedef struct SpvarFit SpvarFit;

/**
 * A model with its decay parameters and coefficient matrices.
 */
typedef struct SpvarModel SpvarModel;

/**
 * A `T × N` data panel.
 */
typedef struct SpvarPanel SpvarPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length, or 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t spvar_last_error(char *buf, size_t cap);

/**
 * Builds a panel from `t × n` row-major values.
 *
 * # Safety
 * `data` must point to `t * n` doubles; `out` must be writable.
 */
SpvarStatus spvar_panel_new(const double *data, size_t t, size_t n, SpvarPanel **out);

/**
 * # Safety
 * `panel` must be null or a handle from this library, not yet freed.
 */
void spvar_panel_free(SpvarPanel *panel);

/**
 * # Safety
 * `panel`, `t` and `n` must be valid pointers.
 */
SpvarStatus spvar_panel_shape(const SpvarPanel *panel, size_t *t, size_t *n);

/**
 * Copies the panel row-major into `out` (capacity `cap` doubles).
 *
 * # Safety
 * `panel` must be valid; `out` must point to `cap` writable doubles.
 */
SpvarStatus spvar_panel_data(const SpvarPanel *panel, double *out, size_t cap);

/**
 * Draws a sparse model of orders `(p, r, s)` and simulates `t` rows from it.
 * `lambdas` holds `r` rates; `etas` holds `s` pairs `(gamma, theta)`.
 *
 * # Safety
 * Array arguments must hold the stated counts; `out_panel` and `out_model` must be writable.
 */
SpvarStatus spvar_simulate(size_t n,
                           size_t t,
                           size_t p,
                           size_t r,
                           size_t s,
                           const double *lambdas,
                           const double *etas,
                           size_t nonzeros_per_row,
                           double noise_sd,
                           uint64_t seed,
                           SpvarPanel **out_panel,
                           SpvarModel **out_model);

/**
 * Fits orders `(p, r, s)` with penalty `lambda_g` and default solver settings.
 *
 * # Safety
 * `panel` must be valid; `out` must be writable.
 */
SpvarStatus spvar_fit(const SpvarPanel *panel,
                      size_t p,
                      size_t r,
                      size_t s,
                      double lambda_g,
                      SpvarEstimator estimator,
                      SpvarFit **out);

/**
 * # Safety
 * `fit` must be null or a live handle.
 */
void spvar_fit_free(SpvarFit *fit);

/**
 * Convergence flag, unpenalized loss, penalized objective and iteration count.
 *
 * # Safety
 * `fit` must be valid; each output pointer may be null to skip it.
 */
SpvarStatus spvar_fit_summary(const SpvarFit *fit,
                              bool *converged,
                              double *loss,
                              double *objective,
                              size_t *iterations);

/**
 * A new handle holding a copy of the fitted model.
 *
 * # Safety
 * `fit` must be valid; `out` must be writable.
 */
SpvarStatus spvar_fit_model(const SpvarFit *fit, SpvarModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void spvar_model_free(SpvarModel *model);

/**
 * # Safety
 * All pointers must be valid.
 */
SpvarStatus spvar_model_dims(const SpvarModel *model, size_t *n, size_t *p, size_t *r, size_t *s);

/**
 * Writes `ω` as `λ_1..λ_r, γ_1, θ_1, .., γ_s, θ_s` (`r + 2s` values).
 *
 * # Safety
 * `model` must be valid; `out` must point to `cap` writable doubles.
 */
SpvarStatus spvar_model_omega(const SpvarModel *model, double *out, size_t cap);

/**
 * Writes the lag-`h` matrix `A_h` (`h ≥ 1`) row-major into `out` (`N²` values).
 *
 * # Safety
 * `model` must be valid; `out` must point to `cap` writable doubles.
 */
SpvarStatus spvar_model_lag_matrix(const SpvarModel *model, size_t h, double *out, size_t cap);

/**
 * One-step-ahead forecast of the row after `history`, written to `out` (`N` values).
 *
 * # Safety
 * `model` and `history` must be valid; `out` must point to `cap` writable doubles.
 */
SpvarStatus spvar_forecast(const SpvarModel *model,
                           const SpvarPanel *history,
                           double *out,
                           size_t cap);

/**
 * Serializes the model to JSON. The string must be released with [`spvar_string_free`].
 *
 * # Safety
 * `model` must be valid; `out` must be writable.
 */
SpvarStatus spvar_model_to_json(const SpvarModel *model, char **out);

/**
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
SpvarStatus spvar_model_from_json(const char *json, SpvarModel **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void spvar_string_free(char *s);

/**
 * BIC order selection over `0..=max_p × 0..=max_r × 0..=max_s` with the rate-rule penalty
 * constant `lambda_c`; writes the chosen orders.
 *
 * # Safety
 * `panel` must be valid; the three outputs must be writable.
 */
SpvarStatus spvar_select_orders(const SpvarPanel *panel,
                                size_t max_p,
                                size_t max_r,
                                size_t max_s,
                                double tau,
                                double q,
                                double lambda_c,
                                size_t *p,
                                size_t *r,
                                size_t *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPVAR_H */
