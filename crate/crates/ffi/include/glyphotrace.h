#ifndef GLYPHOTRACE_H
#define GLYPHOTRACE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GtStatus {
  GT_STATUS_OK = 0,
  GT_STATUS_NULL_POINTER = 1,
  GT_STATUS_INVALID_ARGUMENT = 2,
  GT_STATUS_TOO_FEW_SAMPLES = 3,
  GT_STATUS_UNSUPPORTED_CHANNEL = 4,
  GT_STATUS_DEGENERATE_DATA = 5,
  GT_STATUS_DECODE_ERROR = 6,
  GT_STATUS_ENCODE_ERROR = 7,
  GT_STATUS_BUFFER_TOO_SMALL = 8,
  GT_STATUS_PANIC = 99,
} GtStatus;

typedef enum GtColor {
  GT_COLOR_NEGATIVE = 0,
  GT_COLOR_WARNING = 1,
  GT_COLOR_POSITIVE = 2,
} GtColor;

/**
 * Opaque calibration model.
 */
typedef struct GtModel GtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *gt_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *gt_last_error_message(void);

/**
 * Handheld sensor model (560 nm).
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GtStatus gt_model_handheld(struct GtModel **out);

/**
 * Laboratory spectrometer model (560 nm).
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GtStatus gt_model_lab(struct GtModel **out);

/**
 * Model from known coefficients.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GtStatus gt_model_new(uint16_t channel_nm,
                           double slope,
                           double intercept,
                           struct GtModel **out);

/**
 * Least-squares fit of `concentrations` on `reflectance` at `channel_nm`.
 *
 * # Safety
 * Both arrays must hold `n` values; `out` must be valid for writes.
 */
enum GtStatus gt_model_fit(const double *concentrations,
                           const double *reflectance,
                           size_t n,
                           uint16_t channel_nm,
                           struct GtModel **out);

/**
 * # Safety
 * `model` must come from this library; each out pointer may be NULL.
 * `r_squared` receives NaN for models built from published constants.
 */
enum GtStatus gt_model_coefficients(const struct GtModel *model,
                                    uint16_t *channel_nm,
                                    double *slope,
                                    double *intercept,
                                    double *r_squared);

/**
 * # Safety
 * `model` must come from this library; `out` must be valid for writes.
 */
enum GtStatus gt_model_predict(const struct GtModel *model, double reflectance, double *out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. NULL is
 * ignored.
 */
void gt_model_free(struct GtModel *model);

/**
 * Traffic-light color of `value` for the given band edges.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GtStatus gt_classify(double value,
                          double negative_upper,
                          double positive_lower,
                          enum GtColor *out);

/**
 * Decodes a test uplink into a JSON object written to `*out_json`.
 *
 * # Safety
 * `bytes` must hold `len` bytes; `out_json` must be valid for writes. The
 * string is released with [`gt_string_free`].
 */
enum GtStatus gt_uplink_decode_json(const uint8_t *bytes, size_t len, char **out_json);

/**
 * Encodes a test record given as JSON into an uplink payload. On
 * `BufferTooSmall`, `*written` holds the size needed.
 *
 * # Safety
 * `record_json` must be NUL-terminated; `buf` must hold `cap` bytes;
 * `written` must be valid for writes.
 */
enum GtStatus gt_uplink_encode_json(const char *record_json,
                                    uint8_t *buf,
                                    size_t cap,
                                    size_t *written);

/**
 * Downlink payload that triggers a test.
 *
 * # Safety
 * As for [`gt_uplink_encode_json`].
 */
enum GtStatus gt_downlink_encode_manual_test(uint8_t *buf, size_t cap, size_t *written);

/**
 * Downlink payload that replaces the device's band edges.
 *
 * # Safety
 * As for [`gt_uplink_encode_json`].
 */
enum GtStatus gt_downlink_encode_set_policy(double negative_upper,
                                            double positive_lower,
                                            uint32_t version,
                                            uint8_t *buf,
                                            size_t cap,
                                            size_t *written);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. NULL is
 * ignored.
 */
void gt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLYPHOTRACE_H */
