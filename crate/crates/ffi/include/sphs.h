/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SPHS_H
#define SPHS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call. `SPHS_STATUS_OK` is zero.
 */
typedef enum SphsStatus {
  SPHS_STATUS_OK = 0,
  SPHS_STATUS_NULL_POINTER = 1,
  SPHS_STATUS_INVALID_UTF8 = 2,
  SPHS_STATUS_PARSE = 3,
  SPHS_STATUS_SHAPE = 4,
  SPHS_STATUS_STRUCTURE = 5,
  SPHS_STATUS_NOT_PSD = 6,
  SPHS_STATUS_NON_FINITE = 7,
  SPHS_STATUS_PRECONDITION_FAILED = 8,
  SPHS_STATUS_INFEASIBLE = 9,
  SPHS_STATUS_NUMERICAL_DIVERGENCE = 10,
  SPHS_STATUS_CALLBACK = 11,
  SPHS_STATUS_RESOURCE_LIMIT = 12,
  SPHS_STATUS_SINGULAR_COUPLING = 13,
  SPHS_STATUS_IO = 14,
  SPHS_STATUS_MISSING_STORAGE = 15,
  SPHS_STATUS_BUFFER_TOO_SMALL = 16,
  SPHS_STATUS_PANIC = 99,
} SphsStatus;

/**
 * A stochastic linear system, optionally with a storage matrix.
 */
typedef struct SphsSystem SphsSystem;

/**
 * Relative tolerance and absolute floor of every numerical decision.
 */
typedef struct SphsTolerance {
  double rel_tol;
  double abs_floor;
} SphsTolerance;

/**
 * Outcome of [`sphs_certify`].
 */
typedef struct SphsPassivity {
  bool lmi_ok;
  double lmi_max_eig;
  bool diffusion_ok;
  bool pathwise_lmi_ok;
  bool passive;
  bool local_supermartingale;
  bool supermartingale;
  bool stochastically_passive;
} SphsPassivity;

/**
 * Outcome of [`sphs_observability`].
 */
typedef struct SphsObservability {
  bool observable;
  size_t rank;
  size_t unobservable_dim;
} SphsObservability;

/**
 * Scalar diagnostics of [`sphs_storage`]; `Q_min` goes to a caller buffer.
 */
typedef struct SphsStorage {
  bool converged;
  bool positive_definite;
  double riccati_residual;
  double lmi_margin;
  double horizon;
  double last_relative_change;
} SphsStorage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Default tolerance: relative 1e-9, floor 1e-12.
 */
struct SphsTolerance sphs_tolerance_default(void);

/**
 * Message of the last failure on this thread, or null. Valid until the next call.
 */
const char *sphs_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sphs_string_free(char *s);

/**
 * Parses a system document. Port-Hamiltonian documents are compiled and keep their `Q`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SphsStatus sphs_system_from_json(const char *json, struct SphsSystem **out);

/**
 * Serializes a system (with its `Q`, if set) to JSON.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum SphsStatus sphs_system_to_json(const struct SphsSystem *sys, char **out);

/**
 * Releases a system handle. Null is ignored.
 *
 * # Safety
 * `sys` must come from this library and not have been freed.
 */
void sphs_system_free(struct SphsSystem *sys);

/**
 * State, input and noise dimensions. Any output pointer may be null.
 *
 * # Safety
 * `sys` must be a live handle; non-null outputs must be valid.
 */
enum SphsStatus sphs_system_dims(const struct SphsSystem *sys, size_t *d, size_t *n, size_t *k);

/**
 * Sets the storage matrix from `d*d` row-major values after validating it.
 *
 * # Safety
 * `sys` must be a live handle and `q` must point to `len` doubles.
 */
enum SphsStatus sphs_system_set_q(struct SphsSystem *sys,
                                  const double *q,
                                  size_t len,
                                  struct SphsTolerance tol);

/**
 * Certifies the four passivity notions for the stored `Q`.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum SphsStatus sphs_certify(const struct SphsSystem *sys,
                             struct SphsTolerance tol,
                             struct SphsPassivity *out);

/**
 * Decides observability.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum SphsStatus sphs_observability(const struct SphsSystem *sys,
                                   struct SphsTolerance tol,
                                   struct SphsObservability *out);

/**
 * Port-Hamiltonian parameters for the stored `Q`, as JSON.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum SphsStatus sphs_extract_phs(const struct SphsSystem *sys,
                                 struct SphsTolerance tol,
                                 char **out);

/**
 * Minimal storage by value iteration. `q_out` receives `d*d` row-major values.
 *
 * # Safety
 * `sys` must be a live handle, `q_out` must hold `q_len` doubles and `out` be valid.
 */
enum SphsStatus sphs_storage(const struct SphsSystem *sys,
                             double step,
                             double max_horizon,
                             double convergence_tol,
                             struct SphsTolerance tol,
                             double *q_out,
                             size_t q_len,
                             struct SphsStorage *out);

/**
 * Monte Carlo ensemble under zero control, returned as CSV.
 *
 * # Safety
 * `sys` must be a live handle, `x0` must hold `d` doubles and `out` be valid.
 */
enum SphsStatus sphs_simulate_csv(const struct SphsSystem *sys,
                                  double t_end,
                                  double dt,
                                  size_t n_paths,
                                  uint64_t seed,
                                  const double *x0,
                                  bool parallel,
                                  char **out);

/**
 * Couples two systems with `{"K": ..., "n_hat": ...}`. Storage matrices combine block-diagonally.
 *
 * # Safety
 * Both handles must be live, `coupling_json` NUL-terminated and `out` valid.
 */
enum SphsStatus sphs_interconnect(const struct SphsSystem *first,
                                  const struct SphsSystem *second,
                                  const char *coupling_json,
                                  struct SphsTolerance tol,
                                  struct SphsSystem **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHS_H */
