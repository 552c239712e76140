#ifndef BPSFAIR_H
#define BPSFAIR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Bumped on any incompatible change to this interface.
 */
#define BPSF_ABI_VERSION 1

typedef enum BpsfStatus {
  BPSF_STATUS_OK = 0,
  BPSF_STATUS_NULL_POINTER = 1,
  BPSF_STATUS_INVALID_ARGUMENT = 2,
  BPSF_STATUS_UNDEFINED_MEASURE = 3,
  BPSF_STATUS_FORMAT = 4,
  BPSF_STATUS_IO = 5,
  BPSF_STATUS_STATE = 6,
  BPSF_STATUS_PANIC = 7,
} BpsfStatus;

typedef enum BpsfDenominatorMode {
  BPSF_DENOMINATOR_MODE_AS_WRITTEN = 0,
  BPSF_DENOMINATOR_MODE_RATE = 1,
} BpsfDenominatorMode;

/*
 Index of each measure in [`BpsfReport`] arrays.
 */
typedef enum BpsfMeasure {
  BPSF_MEASURE_FPR = 0,
  BPSF_MEASURE_FNR = 1,
  BPSF_MEASURE_TPR = 2,
  BPSF_MEASURE_TNR = 3,
  BPSF_MEASURE_ACC = 4,
  BPSF_MEASURE_STP = 5,
} BpsfMeasure;

typedef struct BpsfModel BpsfModel;

typedef struct BpsfObjective BpsfObjective;

/*
 Per-measure results, indexed by [`BpsfMeasure`]. Undefined values are NaN.
 */
typedef struct BpsfReport {
  double bps[6];
  double group0[6];
  double group1[6];
  double population[6];
} BpsfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t bpsf_abi_version(void);

/*
 Message for the last failed call on this thread (empty after a success).
 The pointer stays valid until the next call into this library on the
 same thread.
 */
const char *bpsf_last_error(void);

/*
 `100 * min / max` of two non-negative values.
 */
enum BpsfStatus bpsf_bps_binary(double m0, double m1, double *out);

/*
 Hard measures and BPS from `n` predictions (0/1), labels (0/1) and
 group ids. With exactly two groups `bps` is pairwise; otherwise each
 group is scored against the population value.
 */
enum BpsfStatus bpsf_bps_report(const uint8_t *predictions,
                                const uint8_t *labels,
                                const int64_t *groups,
                                uintptr_t n,
                                struct BpsfReport *out);

/*
 Builds an objective from `n_terms` strings of the form
 `measure:variant:alpha:k[:beta]`, e.g. `FPR:sigmoided:0.05:4`.
 */
enum BpsfStatus bpsf_objective_new(const char *const *terms,
                                   uintptr_t n_terms,
                                   enum BpsfDenominatorMode mode,
                                   struct BpsfObjective **out);

/*
 Objective value over `n` samples; when `grad` is non-null it receives
 `d total / d prob_i`. Groups must be 0 or 1 when terms are present.
 */
enum BpsfStatus bpsf_objective_eval(const struct BpsfObjective *objective,
                                    const double *probs,
                                    const uint8_t *labels,
                                    const int64_t *groups,
                                    uintptr_t n,
                                    double *total,
                                    double *grad);

void bpsf_objective_free(struct BpsfObjective *objective);

/*
 Loads a model file written by `bpsfair train`.
 */
enum BpsfStatus bpsf_model_load(const char *path, struct BpsfModel **out);

/*
 Number of encoded input features the model expects.
 */
enum BpsfStatus bpsf_model_input_dim(const struct BpsfModel *model, uintptr_t *out);

/*
 Eval-mode probabilities for a row-major `n_rows x n_cols` matrix of
 already-encoded features; `probs` receives `n_rows` values.
 */
enum BpsfStatus bpsf_model_predict(const struct BpsfModel *model,
                                   const double *x,
                                   uintptr_t n_rows,
                                   uintptr_t n_cols,
                                   double *probs);

void bpsf_model_free(struct BpsfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BPSFAIR_H */
