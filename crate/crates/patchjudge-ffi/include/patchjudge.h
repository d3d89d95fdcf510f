/* C interface for the patchjudge classifier.
 *
 * Load a model directory produced by `patchjudge train`, feed it
 * unified diffs, and read back class probabilities. Handles are not
 * synchronized; use each PjModel from one thread at a time. Error
 * strings are per-thread and stay valid until the next call into the
 * library from that thread.
 */

#ifndef PATCHJUDGE_H
#define PATCHJUDGE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Opaque model handle. */
typedef struct PjModel PjModel;

typedef enum PjStatus {
  PJ_OK = 0,
  PJ_NULL_ARGUMENT = 1,
  PJ_INVALID_UTF8 = 2,
  PJ_LOAD_FAILED = 3,
  PJ_MALFORMED_DIFF = 4,
  PJ_PREDICT_FAILED = 5,
  PJ_PANIC = 6,
} PjStatus;

#define PJ_LABEL_CORRECT 0
#define PJ_LABEL_OVERFITTING 1

/* label is PJ_LABEL_CORRECT or PJ_LABEL_OVERFITTING; the two
 * probabilities sum to 1. */
typedef struct PjPrediction {
  int32_t label;
  double p_correct;
  double p_overfitting;
} PjPrediction;

/* Static version string, e.g. "0.1.0". */
const char *pj_version(void);

/* Message for the most recent failure on the calling thread; empty
 * string when the last call succeeded. */
const char *pj_last_error(void);

/* Loads a model directory (params.pjt1 + model.meta + vocab.txt).
 * Returns NULL on failure; see pj_last_error. Free the handle with
 * pj_model_free. */
PjModel *pj_model_load(const char *dir);

/* Releases a handle from pj_model_load. NULL is a no-op. */
void pj_model_free(PjModel *model);

/* Classifies one unified diff (NUL-terminated UTF-8). On PJ_OK,
 * *out holds the prediction; on any other status *out is untouched
 * and pj_last_error explains. */
PjStatus pj_predict(const PjModel *model, const char *diff, PjPrediction *out);

#ifdef __cplusplus
}
#endif

#endif /* PATCHJUDGE_H */
