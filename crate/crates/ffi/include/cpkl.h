#ifndef CPKL_H
#define CPKL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpklMethod {
  CPKL_METHOD_PDNR = 0,
  CPKL_METHOD_PQNR = 1,
  CPKL_METHOD_MU = 2,
} CpklMethod;

typedef enum CpklStatus {
  CPKL_STATUS_OK = 0,
  CPKL_STATUS_NULL_POINTER = 1,
  CPKL_STATUS_INVALID_ARGUMENT = 2,
  CPKL_STATUS_IO = 3,
  CPKL_STATUS_PARSE = 4,
  CPKL_STATUS_SHAPE_MISMATCH = 5,
  CPKL_STATUS_INVALID_MODEL = 6,
  CPKL_STATUS_PANIC = 7,
} CpklStatus;

/**
 * Outcome of [`cpkl_fit`].
 */
typedef struct CpklFitResult CpklFitResult;

/**
 * CP model: weights plus one column-normalized factor matrix per mode.
 */
typedef struct CpklModel CpklModel;

/**
 * Sparse count tensor.
 */
typedef struct CpklTensor CpklTensor;

/**
 * Fit settings. Fill with [`cpkl_fit_options_default`] and then adjust.
 */
typedef struct CpklFitOptions {
  enum CpklMethod method;
  size_t rank;
  size_t outer_max;
  double tau;
  /**
   * Seconds; zero or negative means no limit.
   */
  double time_limit;
  uint64_t seed;
  /**
   * Row-solve threads; 0 uses all cores.
   */
  size_t workers;
  bool mode1_only;
} CpklFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next `cpkl_*` call on the same thread.
 */
const char *cpkl_last_error_message(void);

/**
 * Reads a COO text file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CpklStatus cpkl_tensor_read_coo(const char *path, struct CpklTensor **out);

/**
 * Builds a tensor from `nnz` entries. `indices` holds `nnz * ndims` 0-based
 * subscripts, one entry after another.
 *
 * # Safety
 * `dims` must point to `ndims` values, `indices` to `nnz * ndims` values and
 * `counts` to `nnz` values.
 */
enum CpklStatus cpkl_tensor_from_coo(size_t ndims,
                                     const size_t *dims,
                                     size_t nnz,
                                     const size_t *indices,
                                     const uint64_t *counts,
                                     struct CpklTensor **out);

/**
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t cpkl_tensor_nnz(const struct CpklTensor *tensor);

/**
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t cpkl_tensor_ndims(const struct CpklTensor *tensor);

/**
 * Sum of all counts.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
uint64_t cpkl_tensor_total_count(const struct CpklTensor *tensor);

/**
 * # Safety
 * `tensor` must be null or a handle not yet freed.
 */
void cpkl_tensor_free(struct CpklTensor *tensor);

/**
 * Samples a synthetic tensor with the default boost settings and returns
 * it together with the generating model.
 *
 * # Safety
 * `dims` must point to `ndims` values; `tensor_out` and `truth_out` must be
 * valid pointers.
 */
enum CpklStatus cpkl_generate(size_t ndims,
                              const size_t *dims,
                              size_t rank,
                              uint64_t samples,
                              uint64_t seed,
                              struct CpklTensor **tensor_out,
                              struct CpklModel **truth_out);

/**
 * Default options for `rank` components: PDN-R, tau 1e-4, 200 outer
 * iterations, no time limit, seed 0, all cores.
 *
 * # Safety
 * `options` must be a valid pointer.
 */
enum CpklStatus cpkl_fit_options_default(size_t rank, struct CpklFitOptions *options);

/**
 * Fits a model from a random start.
 *
 * # Safety
 * `tensor` must be a live handle, `options` a valid pointer and `out` a
 * valid pointer.
 */
enum CpklStatus cpkl_fit(const struct CpklTensor *tensor,
                         const struct CpklFitOptions *options,
                         struct CpklFitResult **out);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
bool cpkl_fit_result_converged(const struct CpklFitResult *result);

/**
 * KKT violation at the end of the fit; NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double cpkl_fit_result_final_kkt(const struct CpklFitResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t cpkl_fit_result_outer_iterations(const struct CpklFitResult *result);

/**
 * Copies the per-iteration objective values into `out`. `len` must be at
 * least [`cpkl_fit_result_outer_iterations`].
 *
 * # Safety
 * `result` must be a live handle and `out` must hold `len` values.
 */
enum CpklStatus cpkl_fit_result_objectives(const struct CpklFitResult *result,
                                           double *out,
                                           size_t len);

/**
 * Copies the fitted model into a new handle.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum CpklStatus cpkl_fit_result_model(const struct CpklFitResult *result, struct CpklModel **out);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void cpkl_fit_result_free(struct CpklFitResult *result);

/**
 * Reads a model JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CpklStatus cpkl_model_read(const char *path, struct CpklModel **out);

/**
 * Writes a model JSON file.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum CpklStatus cpkl_model_write(const struct CpklModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cpkl_model_rank(const struct CpklModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cpkl_model_ndims(const struct CpklModel *model);

/**
 * Size of `mode`, or 0 when out of range.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cpkl_model_dim(const struct CpklModel *model, size_t mode);

/**
 * Copies the `rank` weights into `out`.
 *
 * # Safety
 * `model` must be a live handle and `out` must hold `len` values.
 */
enum CpklStatus cpkl_model_lambda(const struct CpklModel *model, double *out, size_t len);

/**
 * Copies factor `mode` into `out`, row-major, `dim * rank` values.
 *
 * # Safety
 * `model` must be a live handle and `out` must hold `len` values.
 */
enum CpklStatus cpkl_model_factor(const struct CpklModel *model,
                                  size_t mode,
                                  double *out,
                                  size_t len);

/**
 * KL objective `sum m - x log m` of `model` on `tensor`.
 *
 * # Safety
 * `model` and `tensor` must be live handles and `out` a valid pointer.
 */
enum CpklStatus cpkl_model_kl_objective(const struct CpklModel *model,
                                        const struct CpklTensor *tensor,
                                        double *out);

/**
 * Greedy congruence score of `model` against `truth`, in [0, 1].
 *
 * # Safety
 * `model` and `truth` must be live handles and `out` a valid pointer.
 */
enum CpklStatus cpkl_score(const struct CpklModel *model,
                           const struct CpklModel *truth,
                           double *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cpkl_model_free(struct CpklModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPKL_H */
