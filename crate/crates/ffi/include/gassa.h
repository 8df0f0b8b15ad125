#ifndef GASSA_H
#define GASSA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 `metric` argument values.
 */
#define GASSA_METRIC_AIRM 0

#define GASSA_METRIC_STEIN 1

/*
 Result code of every fallible call.
 */
typedef enum GassaStatus {
  GASSA_STATUS_OK = 0,
  GASSA_STATUS_NULL_POINTER = 1,
  GASSA_STATUS_INVALID_ARGUMENT = 2,
  GASSA_STATUS_NOT_SPD = 3,
  GASSA_STATUS_NOT_SYMMETRIC = 4,
  GASSA_STATUS_DIM_MISMATCH = 5,
  GASSA_STATUS_NO_CONVERGENCE = 6,
  GASSA_STATUS_SINGULAR_TRANSFORM = 7,
  GASSA_STATUS_BAD_DIMS = 8,
  GASSA_STATUS_RANK_DEFICIENT = 9,
  GASSA_STATUS_INSUFFICIENT_DATA = 10,
  GASSA_STATUS_DEGENERATE_SEGMENT = 11,
  GASSA_STATUS_BAD_WINDOW = 12,
  GASSA_STATUS_GENERATION_FAILURE = 13,
  GASSA_STATUS_EMPTY_CLASS = 14,
  GASSA_STATUS_SCHEMA = 15,
  GASSA_STATUS_CONFIG = 16,
  GASSA_STATUS_ALL_RESTARTS_FAILED = 17,
  GASSA_STATUS_ASSERTION = 18,
  GASSA_STATUS_IO = 19,
  GASSA_STATUS_JSON = 20,
  GASSA_STATUS_CSV = 21,
  GASSA_STATUS_BUFFER_TOO_SMALL = 22,
  GASSA_STATUS_PANIC = 99,
} GassaStatus;

/*
 Outcome of [`gassa_fit`].
 */
typedef struct GassaFitResult GassaFitResult;

/*
 A set of same-sized SPD matrices.
 */
typedef struct GassaMatrixSet GassaMatrixSet;

/*
 Options for [`gassa_fit`]; obtain defaults from [`gassa_fit_options_default`].
 */
typedef struct GassaFitOptions {
  uint32_t metric;
  bool whiten;
  size_t m;
  size_t restarts;
  uint64_t seed;
  size_t max_iter;
  double grad_tol;
} GassaFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Description of the last failure on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *gassa_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gassa_version(void);

struct GassaFitOptions gassa_fit_options_default(void);

/*
 New empty set of `dim×dim` matrices, or null when `dim` is 0.
 */
struct GassaMatrixSet *gassa_matrix_set_new(size_t dim);

/*
 Load a JSON covariance set (labels are ignored).

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GassaStatus gassa_matrix_set_read_json(const char *path, struct GassaMatrixSet **out);

/*
 Validate and append a row-major `dim×dim` matrix.

 # Safety
 `set` must come from this library; `data` must hold `len` doubles.
 */
enum GassaStatus gassa_matrix_set_push(struct GassaMatrixSet *set, const double *data, size_t len);

/*
 Number of matrices in the set (0 for null).

 # Safety
 `set` must be null or come from this library.
 */
size_t gassa_matrix_set_len(const struct GassaMatrixSet *set);

/*
 Matrix dimension of the set (0 for null).

 # Safety
 `set` must be null or come from this library.
 */
size_t gassa_matrix_set_dim(const struct GassaMatrixSet *set);

/*
 # Safety
 `set` must be null or come from this library and not be used afterwards.
 */
void gassa_matrix_set_free(struct GassaMatrixSet *set);

/*
 Squared AIRM distance or Stein divergence between two row-major matrices.

 # Safety
 `x` and `y` must hold `dim*dim` doubles; `out` must be writable.
 */
enum GassaStatus gassa_distance2(uint32_t metric,
                                 size_t dim,
                                 const double *x,
                                 const double *y,
                                 double *out);

/*
 Metric-matched mean of the set, written row-major into `out`.

 # Safety
 `set` must come from this library; `out` must hold `len` doubles.
 */
enum GassaStatus gassa_mean(uint32_t metric,
                            const struct GassaMatrixSet *set,
                            double *out,
                            size_t len);

/*
 Grassmann distance between the column spans of two row-major `d×k` matrices.

 # Safety
 `a` and `b` must hold `d*k` doubles; `out` must be writable.
 */
enum GassaStatus gassa_grassmann_dist(size_t d,
                                      size_t k,
                                      const double *a,
                                      const double *b,
                                      double *out);

/*
 Fit gaSSA to the set. On success `*out` receives a result handle.

 # Safety
 `set` must come from this library, `opts` must be readable and `out`
 writable.
 */
enum GassaStatus gassa_fit(const struct GassaMatrixSet *set,
                           const struct GassaFitOptions *opts,
                           struct GassaFitResult **out);

/*
 Ambient dimension `D` and stationary dimension `m` of a result.

 # Safety
 `res` must come from this library; `d` and `m` must be writable.
 */
enum GassaStatus gassa_fit_result_dims(const struct GassaFitResult *res, size_t *d, size_t *m);

/*
 Final cost of the winning restart.

 # Safety
 `res` must come from this library; `out` must be writable.
 */
enum GassaStatus gassa_fit_result_cost(const struct GassaFitResult *res, double *out);

/*
 Orthonormal basis of the stationary projection, row-major `D×m`.

 # Safety
 `res` must come from this library; `out` must hold `len` doubles.
 */
enum GassaStatus gassa_fit_result_s_basis(const struct GassaFitResult *res,
                                          double *out,
                                          size_t len);

/*
 Orthonormal basis of the estimated n-space, row-major `D×(D−m)`.

 # Safety
 `res` must come from this library; `out` must hold `len` doubles.
 */
enum GassaStatus gassa_fit_result_n_basis(const struct GassaFitResult *res,
                                          double *out,
                                          size_t len);

/*
 The full result as JSON; release with [`gassa_string_free`]. Null on failure.

 # Safety
 `res` must come from this library.
 */
char *gassa_fit_result_to_json(const struct GassaFitResult *res);

/*
 # Safety
 `res` must be null or come from this library and not be used afterwards.
 */
void gassa_fit_result_free(struct GassaFitResult *res);

/*
 # Safety
 `s` must be null or a string returned by this library.
 */
void gassa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GASSA_H */
