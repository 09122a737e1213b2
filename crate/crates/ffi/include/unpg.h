#ifndef UNPG_H
#define UNPG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UnpgStatus {
  UNPG_STATUS_OK = 0,
  UNPG_STATUS_NULL_POINTER = 1,
  UNPG_STATUS_INVALID_ARGUMENT = 2,
  UNPG_STATUS_CONFIG_INVALID = 3,
  UNPG_STATUS_NON_FINITE = 4,
  UNPG_STATUS_DATA_ERROR = 5,
  UNPG_STATUS_PANIC = 6,
} UnpgStatus;

// Training session created by [`unpg_trainer_new`].
typedef struct UnpgTrainer UnpgTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null. The
// pointer stays valid until the next call into this library on the same thread.
const char *unpg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *unpg_version(void);

// Mean unified loss over `n_pos` anchors sharing `neg`.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum UnpgStatus unpg_unified_loss(const double *pos,
                                  size_t n_pos,
                                  const double *neg,
                                  size_t n_neg,
                                  double gamma,
                                  double *out_loss);

// Unified loss with per-anchor classification negatives and shared metric
// negatives. `cl_neg` is row-major, `n_pos` rows of `n_cl_per_anchor`.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum UnpgStatus unpg_unified_loss_unpg(const double *pos,
                                       size_t n_pos,
                                       const double *cl_neg,
                                       size_t n_cl_per_anchor,
                                       const double *ml_neg,
                                       size_t n_ml,
                                       double gamma,
                                       double *out_loss);

// Box-and-whisker noise filter: `out_mask[k]` is 1 if `sims[k]` is kept.
//
// # Safety
// `sims` and `out_mask` must reference arrays of length `n`.
enum UnpgStatus unpg_filter_noise(const double *sims,
                                  size_t n,
                                  double whisker_r,
                                  uint8_t *out_mask);

// TAR at each FAR target, written to `out_tar[0..n_far]`.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum UnpgStatus unpg_tar_at_far(const double *pos,
                                size_t n_pos,
                                const double *neg,
                                size_t n_neg,
                                const double *far_targets,
                                size_t n_far,
                                double *out_tar);

// Best-threshold verification accuracy and the threshold achieving it.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum UnpgStatus unpg_verification_accuracy(const double *pos,
                                           size_t n_pos,
                                           const double *neg,
                                           size_t n_neg,
                                           double *out_accuracy,
                                           double *out_threshold);

// Histogram-intersection count of the two score lists over `[-1, 1]`.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum UnpgStatus unpg_overlap_count(const double *pos,
                                   size_t n_pos,
                                   const double *neg,
                                   size_t n_neg,
                                   size_t num_bins,
                                   uint64_t *out_count);

// Creates a trainer from a JSON document `{"data": {...}, "train": {...}}`
// using the same fields as the run config. Release with [`unpg_trainer_free`].
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum UnpgStatus unpg_trainer_new(const char *config_json, struct UnpgTrainer **out);

// Runs one optimization step and reports its mean loss. Fails with
// `InvalidArgument` once the schedule is exhausted.
//
// # Safety
// `trainer` must come from [`unpg_trainer_new`] and not be freed.
enum UnpgStatus unpg_trainer_step(struct UnpgTrainer *trainer, double *out_loss);

// Steps taken so far and the schedule length.
//
// # Safety
// `trainer` must be live; the outputs must be writable.
enum UnpgStatus unpg_trainer_progress(const struct UnpgTrainer *trainer,
                                      uint64_t *out_steps_done,
                                      uint64_t *out_total_steps);

// Evaluates the current embeddings and returns the metrics report as a
// JSON string, to be released with [`unpg_string_free`]. `eval_json` may be
// null for the default evaluation settings.
//
// # Safety
// `trainer` must be live; `eval_json` null or NUL-terminated; `out_json` writable.
enum UnpgStatus unpg_trainer_metrics_json(const struct UnpgTrainer *trainer,
                                          const char *eval_json,
                                          char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer obtained from this library, freed once.
void unpg_string_free(char *s);

// Releases a trainer. Null is ignored.
//
// # Safety
// `trainer` must be null or a live handle, freed once.
void unpg_trainer_free(struct UnpgTrainer *trainer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNPG_H */
