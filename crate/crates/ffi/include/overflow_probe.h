#ifndef OVERFLOW_PROBE_H
#define OVERFLOW_PROBE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum OvpStatus {
  OVP_STATUS_OK = 0,
  OVP_STATUS_NULL_POINTER = 1,
  OVP_STATUS_INVALID_UTF8 = 2,
  OVP_STATUS_IO = 3,
  OVP_STATUS_FORMAT = 4,
  OVP_STATUS_DOMAIN = 5,
  OVP_STATUS_SINGLE_CLASS = 6,
  OVP_STATUS_DIMENSION_MISMATCH = 7,
  OVP_STATUS_CONFIG = 8,
  OVP_STATUS_BUFFER_TOO_SMALL = 9,
  OVP_STATUS_PANIC = 10,
} OvpStatus;

/**
 * A trained probe loaded from a model directory.
 */
typedef struct OvpModel OvpModel;

/**
 * A tensor read from an OVT1 file.
 */
typedef struct OvpTensor OvpTensor;

/**
 * Saturation statistics of one vector.
 */
typedef struct OvpSaturation {
  double hoyer;
  double spectral_entropy;
  double excess_kurtosis;
} OvpSaturation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *ovp_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ovp_version(void);

/**
 * Reads an OVT1 file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum OvpStatus ovp_tensor_read(const char *path, struct OvpTensor **out);

/**
 * Number of dimensions; 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t ovp_tensor_rank(const struct OvpTensor *t);

/**
 * Number of elements; 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t ovp_tensor_len(const struct OvpTensor *t);

/**
 * Element type code: 1 for f32, 2 for f64, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
uint8_t ovp_tensor_dtype(const struct OvpTensor *t);

/**
 * Copies the shape into `dims`, which holds `cap` entries.
 *
 * # Safety
 * `t` must be a live handle and `dims` valid for `cap` writes.
 */
enum OvpStatus ovp_tensor_shape(const struct OvpTensor *t, size_t *dims, size_t cap);

/**
 * Copies the elements, widened to f64, into `buf` of `cap` entries.
 *
 * # Safety
 * `t` must be a live handle and `buf` valid for `cap` writes.
 */
enum OvpStatus ovp_tensor_copy_f64(const struct OvpTensor *t, double *buf, size_t cap);

/**
 * Releases a tensor handle. Null is ignored.
 *
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void ovp_tensor_free(struct OvpTensor *t);

/**
 * Hoyer sparsity, spectral entropy and excess kurtosis of `v[0..n]`.
 *
 * # Safety
 * `v` must be valid for `n` reads and `out` a valid pointer.
 */
enum OvpStatus ovp_saturation_profile(const double *v, size_t n, struct OvpSaturation *out);

/**
 * ROC-AUC of `scores` against 0/1 `labels`, both of length `n`.
 *
 * # Safety
 * `scores` and `labels` must be valid for `n` reads and `out` a valid pointer.
 */
enum OvpStatus ovp_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Raw size over DEFLATE-compressed size of `bytes[0..n]`.
 *
 * # Safety
 * `bytes` must be valid for `n` reads and `out` a valid pointer.
 */
enum OvpStatus ovp_compressibility(const uint8_t *bytes, size_t n, double *out);

/**
 * Loads a model directory written by `train`. On success `*out` owns a new handle.
 *
 * # Safety
 * `dir` must be a nul-terminated string and `out` a valid pointer.
 */
enum OvpStatus ovp_model_load(const char *dir, struct OvpModel **out);

/**
 * Feature count the model expects; 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t ovp_model_input_dim(const struct OvpModel *m);

/**
 * Overflow probabilities for a row-major `rows x cols` feature matrix,
 * written to `scores[0..rows]`.
 *
 * # Safety
 * `m` must be a live handle, `x` valid for `rows * cols` reads and
 * `scores` valid for `rows` writes.
 */
enum OvpStatus ovp_model_predict(const struct OvpModel *m,
                                 const double *x,
                                 size_t rows,
                                 size_t cols,
                                 double *scores);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void ovp_model_free(struct OvpModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OVERFLOW_PROBE_H */
