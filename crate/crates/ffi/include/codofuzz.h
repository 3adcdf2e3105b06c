#ifndef CODOFUZZ_H
#define CODOFUZZ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CdfStatus {
  CDF_STATUS_OK = 0,
  CDF_STATUS_NULL_POINTER = 1,
  CDF_STATUS_INVALID_ARGUMENT = 2,
  CDF_STATUS_BUFFER_TOO_SMALL = 3,
  CDF_STATUS_IO = 4,
  CDF_STATUS_TRANSPORT = 5,
  CDF_STATUS_PROTOCOL = 6,
  CDF_STATUS_PANIC = 7,
} CdfStatus;

/**
 * Co-domain coverage grid.
 */
typedef struct CdfCoverage CdfCoverage;

/**
 * A loaded classifier.
 */
typedef struct CdfOracle CdfOracle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *cdf_last_error_message(void);

/**
 * # Safety
 * `out` must be valid for a write.
 */
enum CdfStatus cdf_bin_index(double confidence, size_t n_bins, size_t *out);

/**
 * # Safety
 * `out` must be valid for a write.
 */
enum CdfStatus cdf_coverage_new(size_t n_classes,
                                size_t n_bins,
                                uint32_t cap,
                                struct CdfCoverage **out);

/**
 * # Safety
 * `cov` must come from [`cdf_coverage_new`] and not be used afterwards.
 */
void cdf_coverage_free(struct CdfCoverage *cov);

/**
 * Feeds one probability vector; `increased` is set to 1 if a cell count grew.
 *
 * # Safety
 * `cov` must be a live handle, `probs` must hold `len` values and
 * `increased` must be valid for a write.
 */
enum CdfStatus cdf_coverage_update(struct CdfCoverage *cov,
                                   const double *probs,
                                   size_t len,
                                   uint8_t *increased);

/**
 * # Safety
 * `cov` must be a live handle and `out` valid for a write.
 */
enum CdfStatus cdf_coverage_count(const struct CdfCoverage *cov,
                                  size_t row,
                                  size_t col,
                                  uint32_t *out);

/**
 * # Safety
 * `cov` must be a live handle and `out` valid for a write.
 */
enum CdfStatus cdf_coverage_cdc(const struct CdfCoverage *cov,
                                bool exclude_infeasible,
                                double *out);

/**
 * # Safety
 * `cov` must be a live handle and `out` valid for a write.
 */
enum CdfStatus cdf_coverage_kcdc(const struct CdfCoverage *cov,
                                 bool exclude_infeasible,
                                 double *out);

/**
 * Opens a classifier from a descriptor such as `builtin:desk`,
 * `builtin:<model.json>`, `tcp:<host>:<port>` or `cmd:<command>`.
 *
 * # Safety
 * `descriptor` must be a nul-terminated string and `out` valid for a write.
 */
enum CdfStatus cdf_oracle_open(const char *descriptor, struct CdfOracle **out);

/**
 * # Safety
 * `oracle` must come from [`cdf_oracle_open`] and not be used afterwards.
 */
void cdf_oracle_free(struct CdfOracle *oracle);

/**
 * Number of classes and the expected `height x width x channels` input.
 *
 * # Safety
 * `oracle` must be a live handle; every out-pointer must be valid for a write.
 */
enum CdfStatus cdf_oracle_info(const struct CdfOracle *oracle,
                               size_t *n_classes,
                               size_t *height,
                               size_t *width,
                               size_t *channels);

/**
 * Probability vector for one row-major, channel-last image with pixels in [0, 1].
 *
 * # Safety
 * `pixels` must hold `len` values and `probs` room for `capacity` values.
 */
enum CdfStatus cdf_oracle_predict(const struct CdfOracle *oracle,
                                  const float *pixels,
                                  size_t len,
                                  double *probs,
                                  size_t capacity);

/**
 * # Safety
 * `logits` must hold `len` values and `probs` room for `len` values.
 */
enum CdfStatus cdf_softmax(const double *logits, size_t len, double *probs);

/**
 * Shannon entropy in nats of a probability vector.
 *
 * # Safety
 * `probs` must hold `len` values and `out` be valid for a write.
 */
enum CdfStatus cdf_entropy(const double *probs, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CODOFUZZ_H */
