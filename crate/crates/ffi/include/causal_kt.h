#ifndef CAUSAL_KT_H
#define CAUSAL_KT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every fallible function.
typedef enum CktStatus {
  CKT_STATUS_OK = 0,
  CKT_STATUS_NULL_POINTER = 1,
  CKT_STATUS_INVALID_ARGUMENT = 2,
  CKT_STATUS_IO = 3,
  CKT_STATUS_PARSE = 4,
  CKT_STATUS_NUMERICAL = 5,
  CKT_STATUS_BUFFER_TOO_SMALL = 6,
  CKT_STATUS_PANIC = 7,
} CktStatus;

// Opaque handle to a trained model loaded from a checkpoint.
typedef struct CktModel CktModel;

// Precision, recall and F1 of a predicted graph.
typedef struct CktScore {
  double precision;
  double recall;
  double f1;
} CktScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null when
// the last call succeeded. Valid until the next library call on the thread.
const char *ckt_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ckt_version(void);

// Loads a checkpoint written by `causal-kt train`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
enum CktStatus ckt_model_load(const char *path, struct CktModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from `ckt_model_load` and not be used afterwards.
void ckt_model_free(struct CktModel *model);

// Number of skills the model was trained on.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum CktStatus ckt_model_num_skills(const struct CktModel *model, size_t *out);

// Writes the prerequisite graph thresholded at `kappa` into `out`
// (`len >= C * C`, row-major, indices in the model's dense skill order).
//
// # Safety
// `model` must be a live handle; `out` must be valid for `len` bytes.
enum CktStatus ckt_model_extract_adjacency(const struct CktModel *model,
                                           double kappa,
                                           uint8_t *out,
                                           size_t len);

// Writes the hard causal ordering: `out[i]` is the position of skill `i`.
//
// # Safety
// `model` must be a live handle; `out` must be valid for `len` entries.
enum CktStatus ckt_model_ordering(const struct CktModel *model, size_t *out, size_t len);

// Copies the original id of dense skill `index` into `buf` as a
// NUL-terminated string. `required`, when non-null, receives the buffer size
// needed including the terminator, so callers can size a retry after
// `BufferTooSmall`.
//
// # Safety
// `model` must be a live handle; `buf` must be valid for `len` bytes.
enum CktStatus ckt_model_skill_id(const struct CktModel *model,
                                  size_t index,
                                  char *buf,
                                  size_t len,
                                  size_t *required);

// Sinkhorn normalization of an `n x n` row-major logit matrix into `out`.
//
// # Safety
// `logits` and `out` must each be valid for `n * n` doubles.
enum CktStatus ckt_sinkhorn(const double *logits,
                            size_t n,
                            double temperature,
                            size_t unroll,
                            double *out);

// Pairwise structural precision, recall and F1 of `pred` against `truth`.
//
// # Safety
// `pred` and `truth` must each be valid for `n * n` bytes; `out` must be valid.
enum CktStatus ckt_structural_f1(const uint8_t *pred,
                                 const uint8_t *truth,
                                 size_t n,
                                 struct CktScore *out);

// Tests whether an adjacency matrix is acyclic. When it is and `order` is
// non-null, a topological order (prerequisites first) is written there.
//
// # Safety
// `adj` must be valid for `n * n` bytes, `is_dag` must be valid, and a
// non-null `order` must be valid for `n` entries.
enum CktStatus ckt_is_dag(const uint8_t *adj, size_t n, bool *is_dag, size_t *order);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAUSAL_KT_H */
