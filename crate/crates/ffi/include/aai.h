#ifndef AAI_H
#define AAI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum AaiStatus {
  AAI_STATUS_OK = 0,
  AAI_STATUS_NULL_POINTER = 1,
  AAI_STATUS_INVALID_ARGUMENT = 2,
  // File system or WAV errors.
  AAI_STATUS_IO = 3,
  // Signal content that cannot be processed.
  AAI_STATUS_DATA = 4,
  AAI_STATUS_CHECKPOINT = 5,
  AAI_STATUS_DIVERGENCE = 6,
  // A Rust panic was caught at the boundary.
  AAI_STATUS_PANIC = 7,
} AaiStatus;

// Accumulates true/estimated EGG comparisons over utterances.
typedef struct AaiMetricsHandle AaiMetricsHandle;

// A trained speech-to-EGG model.
typedef struct AaiModelHandle AaiModelHandle;

// Detection scores: rates in percent, identification accuracy in ms.
typedef struct AaiDetection {
  double idr;
  double mr;
  double far;
  double ida_ms;
} AaiDetection;

// Dataset summary. Quotients and HNR are NaN when nothing was measurable.
typedef struct AaiMetrics {
  struct AaiDetection gci;
  struct AaiDetection goi;
  double cq_true;
  double cq_est;
  double oq_true;
  double oq_est;
  double sq_true;
  double sq_est;
  double hnr_true;
  double hnr_est;
  uint64_t skipped_cycles;
} AaiMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call on the same thread.
const char *aai_last_error(void);

// Library version as a static NUL-terminated string.
const char *aai_version(void);

// Load the model from a training checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AaiStatus aai_model_load(const char *path, struct AaiModelHandle **out);

// # Safety
// `model` must come from [`aai_model_load`] and not be used afterwards.
void aai_model_free(struct AaiModelHandle *model);

// Analysis window length in samples.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum AaiStatus aai_model_window_len(const struct AaiModelHandle *model, uintptr_t *out);

// Estimate an EGG from `len` speech samples. `out` receives `len` samples.
// `stride` 1 averages every window.
//
// # Safety
// `speech` and `out` must each point to `len` doubles.
enum AaiStatus aai_infer(const struct AaiModelHandle *model,
                         const double *speech,
                         uintptr_t len,
                         double rate,
                         uintptr_t stride,
                         double *out);

// # Safety
// `out` must be a valid pointer.
enum AaiStatus aai_metrics_new(struct AaiMetricsHandle **out);

// # Safety
// `metrics` must come from [`aai_metrics_new`] and not be used afterwards.
void aai_metrics_free(struct AaiMetricsHandle *metrics);

// Add one utterance: reference and estimated EGG at the same rate.
//
// # Safety
// `reference` and `estimate` must point to `ref_len` and `est_len` doubles.
enum AaiStatus aai_metrics_add(struct AaiMetricsHandle *metrics,
                               const double *reference,
                               uintptr_t ref_len,
                               const double *estimate,
                               uintptr_t est_len,
                               double rate);

// Summarize everything added so far. Fails when no reference cycles were
// seen.
//
// # Safety
// `metrics` must be a live handle and `out` a valid pointer.
enum AaiStatus aai_metrics_report(const struct AaiMetricsHandle *metrics, struct AaiMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AAI_H */
