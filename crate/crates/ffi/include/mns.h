#ifndef MNS_H
#define MNS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum MnsStatus {
  MNS_STATUS_OK = 0,
  MNS_STATUS_NULL_POINTER = 1,
  MNS_STATUS_INVALID_INPUT = 2,
  MNS_STATUS_IO = 3,
  MNS_STATUS_FORMAT = 4,
  MNS_STATUS_PARSE = 5,
  MNS_STATUS_NON_FINITE = 6,
  MNS_STATUS_DIVERGED = 7,
  MNS_STATUS_DEGENERATE_CLASS = 8,
  MNS_STATUS_BUFFER_TOO_SMALL = 9,
  MNS_STATUS_PANIC = 10,
} MnsStatus;

// Trained classifier.
typedef struct MnsModel MnsModel;

// Row-stochastic transition matrix.
typedef struct MnsTransition MnsTransition;

// Inputs of the generalization bound. `frobenius` points to `depth` values.
typedef struct MnsBoundInputs {
  double input_bound;
  size_t classes;
  size_t depth;
  const double *frobenius;
  double loss_bound;
  double delta;
  uint64_t pairs;
} MnsBoundInputs;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mns_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mns_version(void);

// Symmetric noise matrix: `1 - rho` on the diagonal, `rho / (classes - 1)` elsewhere.
//
// # Safety
// `out` must be a valid pointer to write a handle to.
enum MnsStatus mns_transition_symmetric(size_t classes, double rho, struct MnsTransition **out);

// Build a matrix from `classes * classes` row-major values.
//
// # Safety
// `data` must point to `classes * classes` doubles; `out` must be writable.
enum MnsStatus mns_transition_from_rows(const double *data,
                                        size_t classes,
                                        struct MnsTransition **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MnsStatus mns_transition_load(const char *path, struct MnsTransition **out);

// # Safety
// `t` must be a live handle and `path` a NUL-terminated string.
enum MnsStatus mns_transition_save(const struct MnsTransition *t, const char *path);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `t` must be null or a live handle.
size_t mns_transition_classes(const struct MnsTransition *t);

// Copy the matrix row-major into `out` (`len >= classes * classes`).
//
// # Safety
// `t` must be a live handle; `out` must point to `len` writable doubles.
enum MnsStatus mns_transition_values(const struct MnsTransition *t, double *out, size_t len);

// `‖truth − estimate‖₁ / ‖truth‖₁`.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum MnsStatus mns_estimation_error(const struct MnsTransition *truth,
                                    const struct MnsTransition *estimate,
                                    double *out);

// # Safety
// `t` must be null or a handle not yet freed.
void mns_transition_free(struct MnsTransition *t);

// Load a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MnsStatus mns_model_load(const char *path, struct MnsModel **out);

// # Safety
// `m` must be a live handle and `path` a NUL-terminated string.
enum MnsStatus mns_model_save(const struct MnsModel *m, const char *path);

// # Safety
// `m` must be null or a live handle.
size_t mns_model_num_classes(const struct MnsModel *m);

// # Safety
// `m` must be null or a live handle.
size_t mns_model_input_dim(const struct MnsModel *m);

// Number of weight layers.
//
// # Safety
// `m` must be null or a live handle.
size_t mns_model_depth(const struct MnsModel *m);

// Class posteriors for `rows` inputs of width `cols`, row-major, into `out`
// (`len >= rows * num_classes`).
//
// # Safety
// `x` must point to `rows * cols` doubles and `out` to `len` writable doubles.
enum MnsStatus mns_model_predict_proba(const struct MnsModel *m,
                                       const double *x,
                                       size_t rows,
                                       size_t cols,
                                       double *out,
                                       size_t len);

// Frobenius norm of each weight matrix (`len >= depth`).
//
// # Safety
// `m` must be a live handle; `out` must point to `len` writable doubles.
enum MnsStatus mns_model_frobenius_norms(const struct MnsModel *m, double *out, size_t len);

// # Safety
// `m` must be null or a handle not yet freed.
void mns_model_free(struct MnsModel *m);

// Pair loss on posteriors `g1`, `g2` (each `classes` long) with similarity
// label `s` (0 or 1). A null `t` gives the uncorrected loss, otherwise the
// posteriors pass through `Tᵀ` first. Gradients with respect to the logits
// are written to `grad1` / `grad2` when those are non-null.
//
// # Safety
// `g1`, `g2` must point to `classes` doubles; non-null gradient pointers to
// `classes` writable doubles; `t` null or live.
enum MnsStatus mns_pair_loss(const double *g1,
                             const double *g2,
                             size_t classes,
                             const struct MnsTransition *t,
                             double s,
                             double *loss,
                             double *grad1,
                             double *grad2);

// Evaluate the generalization bound.
//
// # Safety
// `inputs` must be valid with `frobenius` pointing to `depth` doubles; `out` writable.
enum MnsStatus mns_generalization_bound(const struct MnsBoundInputs *inputs, double *out);

// Run one experiment from a TOML configuration and return its JSON report
// in `*report_json` (release with [`mns_string_free`]).
//
// # Safety
// `config_toml` must be a NUL-terminated string; `report_json` writable.
enum MnsStatus mns_run_experiment(const char *config_toml, char **report_json);

// Release a string returned by this library.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void mns_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MNS_H */
