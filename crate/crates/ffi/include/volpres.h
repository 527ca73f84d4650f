#ifndef VOLPRES_H
#define VOLPRES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VpBoundary {
  VP_BOUNDARY_PERIODIC = 0,
  VP_BOUNDARY_CLAMPED = 1,
} VpBoundary;

typedef enum VpStatus {
  VP_STATUS_OK = 0,
  VP_STATUS_NULL_POINTER = 1,
  VP_STATUS_INVALID_INPUT = 2,
  VP_STATUS_PARSE = 3,
  VP_STATUS_DOMAIN = 4,
  VP_STATUS_PRECONDITION = 5,
  VP_STATUS_SIZE_LIMIT = 6,
  VP_STATUS_NON_CONVERGENCE = 7,
  VP_STATUS_BUFFER_TOO_SMALL = 8,
  VP_STATUS_IO = 9,
  VP_STATUS_PANIC = 10,
} VpStatus;

typedef enum VpTarget {
  VP_TARGET_SPECIAL_LINEAR = 0,
  VP_TARGET_TRACELESS = 1,
  VP_TARGET_ROTATION = 2,
  VP_TARGET_SKEW = 3,
  VP_TARGET_SYMPLECTIC_LIE = 4,
} VpTarget;

/**
 * Vector field sampled on a uniform grid.
 */
typedef struct VpField VpField;

/**
 * Square matrix of size at most 8.
 */
typedef struct VpMatrix VpMatrix;

/**
 * Outcome of a projection: distance and the determinant-constraint multiplier.
 */
typedef struct VpProjection {
  double distance;
  double multiplier;
  double kkt_residual;
} VpProjection;

/**
 * Outcome of a decomposition: residual, right-hand side and their ratio.
 */
typedef struct VpDecomposition {
  double residual;
  double rhs;
  double ratio;
  bool vacuous;
} VpDecomposition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf`
 * (NUL-terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t vp_last_error_message(char *buf, size_t cap);

/**
 * Creates an `n × n` matrix from `n * n` row-major entries.
 *
 * # Safety
 * `entries` must point to `n * n` readable doubles; `out` must be writable.
 */
enum VpStatus vp_matrix_new(size_t n, const double *entries, struct VpMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from this library that has not been freed.
 */
void vp_matrix_free(struct VpMatrix *m);

/**
 * Matrix size, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t vp_matrix_dim(const struct VpMatrix *m);

/**
 * Writes the row-major entries into `buf` of capacity `cap`.
 *
 * # Safety
 * `m` must be a live handle; `buf` must point to `cap` writable doubles.
 */
enum VpStatus vp_matrix_entries(const struct VpMatrix *m, double *buf, size_t cap);

/**
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum VpStatus vp_matrix_det(const struct VpMatrix *m, double *out);

/**
 * Nearest point of `target` to `m`. The projected matrix is returned as a
 * new handle in `out_matrix` (skipped when null).
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable; `out_matrix` may be null.
 */
enum VpStatus vp_project(const struct VpMatrix *m,
                         enum VpTarget target,
                         struct VpProjection *out,
                         struct VpMatrix **out_matrix);

/**
 * Checks the two-sided SL(n) distance bound for `m` at parameter `theta`.
 * `out_satisfied` receives whether both sides hold, `out_ratio` the larger
 * side ratio.
 *
 * # Safety
 * `m` must be a live handle; both outputs must be writable.
 */
enum VpStatus vp_verify_sl_sandwich(const struct VpMatrix *m,
                                    double theta,
                                    bool *out_satisfied,
                                    double *out_ratio);

/**
 * Creates a `dim`-component field on the grid with `n` nodes per axis on
 * `[lo, hi]^dim`; `values` holds `dim * n^dim` node-major entries.
 *
 * # Safety
 * `values` must point to `len` readable doubles; `out` must be writable.
 */
enum VpStatus vp_field_new(size_t dim,
                           size_t n,
                           double lo,
                           double hi,
                           enum VpBoundary boundary,
                           const double *values,
                           size_t len,
                           struct VpField **out);

/**
 * Samples a named map family (e.g. `"twist"`, `"compress:0.3"`) on its
 * default domain with `n` nodes per axis.
 *
 * # Safety
 * `spec` must be a NUL-terminated string; `out` must be writable.
 */
enum VpStatus vp_field_from_map(const char *spec,
                                size_t dim,
                                size_t n,
                                enum VpBoundary boundary,
                                struct VpField **out);

/**
 * # Safety
 * `f` must be null or a handle from this library that has not been freed.
 */
void vp_field_free(struct VpField *f);

/**
 * Number of stored values (`components × nodes`), or 0 for a null handle.
 *
 * # Safety
 * `f` must be null or a live handle.
 */
size_t vp_field_len(const struct VpField *f);

/**
 * # Safety
 * `f` must be a live handle; `buf` must point to `cap` writable doubles.
 */
enum VpStatus vp_field_values(const struct VpField *f, double *buf, size_t cap);

/**
 * Divergence-free approximation in `L^p`; the corrected field is returned
 * in `out_field` unless it is null.
 *
 * # Safety
 * `f` must be a live handle; `out` must be writable; `out_field` may be null.
 */
enum VpStatus vp_field_divfree(const struct VpField *f,
                               double p,
                               struct VpDecomposition *out,
                               struct VpField **out_field);

/**
 * Hamiltonian approximation in `L^p` of a field of even dimension.
 *
 * # Safety
 * Same contract as [`vp_field_divfree`].
 */
enum VpStatus vp_field_hamiltonian(const struct VpField *f,
                                   double p,
                                   struct VpDecomposition *out,
                                   struct VpField **out_field);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLPRES_H */
