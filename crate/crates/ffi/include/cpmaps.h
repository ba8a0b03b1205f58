#ifndef CPMAPS_H
#define CPMAPS_H

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  CPM_OK = 0,
  CPM_NULL_POINTER = 1,
  CPM_MALFORMED_INPUT = 2,
  CPM_DIMENSION_MISMATCH = 3,
  /**
   * A mathematical precondition failed (not PSD, not subinvariant, ...).
   */
  CPM_PRECONDITION = 4,
  CPM_NOT_CONVERGED = 5,
  CPM_INTERNAL = 6,
} CpmStatus;

typedef enum {
  CPM_TARGET_UNITAL = 0,
  CPM_TARGET_CONTRACTIVE = 1,
  CPM_TARGET_STRICT = 2,
  CPM_TARGET_PURE = 3,
} CpmTarget;

typedef enum {
  CPM_VERDICT_YES = 0,
  CPM_VERDICT_NO = 1,
  CPM_VERDICT_UNDETERMINED = 2,
} CpmVerdict;

/**
 * Opaque Kraus family.
 */
typedef struct CpmKrausFamily CpmKrausFamily;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; valid until the next
 * failing call on the same thread. Never NULL.
 */
const char *cpm_last_error_message(void);

/**
 * Creates a family from `n` operators stored consecutively, each a
 * row-major `dim x dim` matrix. Free with [`cpm_family_free`].
 *
 * # Safety
 * `re` (and `im` unless NULL) must point to `n * dim * dim` doubles and
 * `out` must be writable.
 */
CpmStatus cpm_family_new(size_t dim,
                         size_t n,
                         const double *re,
                         const double *im,
                         CpmKrausFamily **out);

/**
 * # Safety
 * `family` must come from [`cpm_family_new`] and not be freed twice.
 */
void cpm_family_free(CpmKrausFamily *family);

/**
 * Dimension of the family, 0 for NULL.
 *
 * # Safety
 * `family` must be NULL or a live handle.
 */
size_t cpm_family_dim(const CpmKrausFamily *family);

/**
 * Number of Kraus operators, 0 for NULL.
 *
 * # Safety
 * `family` must be NULL or a live handle.
 */
size_t cpm_family_len(const CpmKrausFamily *family);

/**
 * `phi(X)` for a square `X`.
 *
 * # Safety
 * Input and output arrays must hold `dim * dim` doubles; imaginary pointers
 * may be NULL.
 */
CpmStatus cpm_apply(const CpmKrausFamily *family,
                    const double *x_re,
                    const double *x_im,
                    double *out_re,
                    double *out_im);

/**
 * Spectral radius of `phi`.
 *
 * # Safety
 * `family` must be a live handle and `out` writable.
 */
CpmStatus cpm_spectral_radius(const CpmKrausFamily *family, double *out);

/**
 * Solves `X - phi(X) = R` for positive `R` when `r(phi) < 1`.
 *
 * # Safety
 * Arrays must hold `dim * dim` doubles; imaginary pointers may be NULL.
 */
CpmStatus cpm_solve_stein(const CpmKrausFamily *family,
                          const double *r_re,
                          const double *r_im,
                          double *out_re,
                          double *out_im);

/**
 * Decides similarity to the chosen class. When the verdict is yes and
 * `q_re` is not NULL, the witness `Q` is written there.
 *
 * # Safety
 * `verdict` must be writable; `q_re`/`q_im` NULL or `dim * dim` doubles.
 */
CpmStatus cpm_similarity(const CpmKrausFamily *family,
                         CpmTarget target,
                         CpmVerdict *verdict,
                         double *q_re,
                         double *q_im);

/**
 * *-curvature of `(phi, D)`; `D = I` when `d_re` is NULL. A nonnegative
 * `level` reports the sequence value at that index (truncated models).
 *
 * # Safety
 * `out` and `converged` must be writable; `d_re`/`d_im` NULL or
 * `dim * dim` doubles.
 */
CpmStatus cpm_star_curvature(const CpmKrausFamily *family,
                             const double *d_re,
                             const double *d_im,
                             int64_t level,
                             double *out,
                             bool *converged);

/**
 * Euler characteristic of `(phi, D)`, with the same conventions as
 * [`cpm_star_curvature`].
 *
 * # Safety
 * As for [`cpm_star_curvature`].
 */
CpmStatus cpm_euler_characteristic(const CpmKrausFamily *family,
                                   const double *d_re,
                                   const double *d_im,
                                   int64_t level,
                                   double *out,
                                   bool *converged);

/**
 * Map classification as a JSON string. Free with [`cpm_string_free`].
 *
 * # Safety
 * `out` must be writable.
 */
CpmStatus cpm_classify_json(const CpmKrausFamily *family, char **out);

/**
 * Runs a `cpmaps` command line, e.g. `"similarity --target strict --input
 * f.json --format json"`, and returns its standard output. `exit_code`
 * receives the command's exit status.
 *
 * # Safety
 * `args` must be a NUL-terminated string; `out` and `exit_code` writable.
 */
CpmStatus cpm_run_command(const char *args, char **out, int32_t *exit_code);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cpm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPMAPS_H */
