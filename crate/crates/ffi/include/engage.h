#ifndef ENGAGE_H
#define ENGAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EngageStatus {
  ENGAGE_STATUS_OK = 0,
  /**
   * Stream is still filling its first window; no score was produced.
   */
  ENGAGE_STATUS_WARMING_UP = 1,
  ENGAGE_STATUS_NULL_POINTER = 2,
  ENGAGE_STATUS_INVALID_ARGUMENT = 3,
  ENGAGE_STATUS_IO = 4,
  ENGAGE_STATUS_CORRUPT_CHECKPOINT = 5,
  ENGAGE_STATUS_SHAPE_MISMATCH = 6,
  ENGAGE_STATUS_NUMERIC = 7,
  ENGAGE_STATUS_DEGENERATE_INPUT = 8,
  ENGAGE_STATUS_BACKBONE = 9,
  ENGAGE_STATUS_PANIC = 10,
} EngageStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct EngageModel EngageModel;

/**
 * A streaming scorer with its own window buffer.
 */
typedef struct EngageStream EngageStream;

typedef struct EngageLatency {
  size_t count;
  double p50_ms;
  double p95_ms;
  double max_ms;
  double throughput_fps;
} EngageLatency;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *engage_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *engage_version(void);

/**
 * Loads the best parameters from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum EngageStatus engage_model_load(const char *path, struct EngageModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`engage_model_load`] not yet freed.
 */
void engage_model_free(struct EngageModel *model);

/**
 * Feature dimension the model expects (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t engage_model_input_dim(const struct EngageModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t engage_model_hidden_dim(const struct EngageModel *model);

/**
 * Scores one window. `features` holds `w * dim` floats, one frame per row.
 *
 * # Safety
 * `model` must be a live handle, `features` must point to `w * dim`
 * floats and `out` must be writable.
 */
enum EngageStatus engage_model_predict(const struct EngageModel *model,
                                       const float *features,
                                       size_t w,
                                       size_t dim,
                                       double *out);

/**
 * Creates a stream of window length `w` over `model`, embedding frames
 * with the seeded mock backbone at the model's input dimension.
 *
 * # Safety
 * `model` must be a live handle and `out` writable. The stream keeps its
 * own reference; the model handle may be freed afterwards.
 */
enum EngageStatus engage_stream_new(const struct EngageModel *model,
                                    size_t w,
                                    uint64_t mock_seed,
                                    struct EngageStream **out);

/**
 * # Safety
 * `stream` must be null or a handle from [`engage_stream_new`] not yet freed.
 */
void engage_stream_free(struct EngageStream *stream);

/**
 * Pushes an interleaved 8-bit RGB frame. Returns `Ok` with a score once
 * the window is full and `WarmingUp` before that.
 *
 * # Safety
 * `stream` must be a live handle, `rgb` must point to
 * `width * height * 3` bytes and `out_score` must be writable.
 */
enum EngageStatus engage_stream_push_rgb(struct EngageStream *stream,
                                         const uint8_t *rgb,
                                         size_t width,
                                         size_t height,
                                         double *out_score);

/**
 * Pushes a precomputed feature vector of the model's input dimension.
 *
 * # Safety
 * `stream` must be a live handle, `features` must point to `dim` floats
 * and `out_score` must be writable.
 */
enum EngageStatus engage_stream_push_features(struct EngageStream *stream,
                                              const float *features,
                                              size_t dim,
                                              double *out_score);

/**
 * Latency statistics over all pushes so far.
 *
 * # Safety
 * `stream` must be a live handle and `out` writable.
 */
enum EngageStatus engage_stream_latency(const struct EngageStream *stream,
                                        struct EngageLatency *out);

/**
 * Spearman rank correlation with a two-sided p-value.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles; `rho` and `p_value` must be
 * writable (`p_value` may be null).
 */
enum EngageStatus engage_spearman(const double *a,
                                  const double *b,
                                  size_t n,
                                  double *rho,
                                  double *p_value);

/**
 * Area under the ROC curve; `truths[i]` is nonzero for positives.
 *
 * # Safety
 * `predictions` and `truths` must point to `n` elements; `auc` must be
 * writable.
 */
enum EngageStatus engage_roc_auc(const double *predictions,
                                 const uint8_t *truths,
                                 size_t n,
                                 double *auc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENGAGE_H */
