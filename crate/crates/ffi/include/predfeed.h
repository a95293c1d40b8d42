#ifndef PREDFEED_H
#define PREDFEED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_ARGUMENT = 2,
  PF_STATUS_DIMENSION_MISMATCH = 3,
  PF_STATUS_NOT_CONVERGED = 4,
  PF_STATUS_NON_FINITE = 5,
  PF_STATUS_UNKNOWN_SYSTEM = 6,
  PF_STATUS_IO = 7,
  PF_STATUS_FORMAT = 8,
  PF_STATUS_CHECKSUM = 9,
  PF_STATUS_PANIC = 10,
  PF_STATUS_OTHER = 11,
} PfStatus;

// A predictor implementation.
typedef struct PfPredictor PfPredictor;

// A built-in plant with its feedback laws and delays.
typedef struct PfSystem PfSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t pf_last_error(char *buf, uintptr_t len);

// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum PfStatus pf_system_new(const char *name, struct PfSystem **out);

// # Safety
// `system` must come from `pf_system_new` and not be used afterwards.
void pf_system_free(struct PfSystem *system);

// State dimension, input count and largest delay.
//
// # Safety
// All pointers must be valid.
enum PfStatus pf_system_dims(const struct PfSystem *system,
                             uintptr_t *state_dim,
                             uintptr_t *input_dim,
                             double *max_delay);

// `kind`: 0 fixed point (trapezoid), 1 fixed point (cubic), 2 ODE oracle.
//
// # Safety
// `out` must be a valid pointer.
enum PfStatus pf_predictor_new(uint32_t kind, struct PfPredictor **out);

// Loads one model file per stage, in stage order.
//
// # Safety
// `paths` must hold `count` NUL-terminated strings; `out` must be valid.
enum PfStatus pf_predictor_load(const char *const *paths,
                                uintptr_t count,
                                struct PfPredictor **out);

// # Safety
// `predictor` must come from a `pf_predictor_*` constructor and not be used afterwards.
void pf_predictor_free(struct PfPredictor *predictor);

// Chained predictions `P_1..P_m` of `state` at the newest history sample.
//
// `history` is row-major `m × len`: row `j` holds input `j` at times
// `t_now − (len − 1 − k) dt`. It must cover the largest delay plus two
// samples. `out` receives `m × n` values.
//
// # Safety
// Handles must be valid; buffers must have the stated lengths.
enum PfStatus pf_predict(const struct PfSystem *system,
                         const struct PfPredictor *predictor,
                         const double *state,
                         uintptr_t state_len,
                         const double *history,
                         uintptr_t len,
                         double dt,
                         double t_now,
                         double *out,
                         uintptr_t out_len);

// Closed loop from `x0` with zero initial inputs and no measurement noise.
// Writes the summed `|X| dt` residual and the final `Γ`.
//
// # Safety
// Handles must be valid; `x0` must hold `state_len` values.
enum PfStatus pf_simulate(const struct PfSystem *system,
                          const struct PfPredictor *predictor,
                          const double *x0,
                          uintptr_t state_len,
                          double dt,
                          double horizon,
                          double *residual,
                          double *gamma_final);

// Operator Lipschitz bound: writes `C_P`, `Ξ` and `C_κ`.
//
// # Safety
// `c_kappa` must hold `m` values; output pointers must be valid.
enum PfStatus pf_lipschitz_bound(double c_f,
                                 const double *c_kappa,
                                 uintptr_t m,
                                 double x_bar,
                                 double u_bar,
                                 double phi_bar,
                                 double *c_p,
                                 double *xi,
                                 double *c_kappa_total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREDFEED_H */
