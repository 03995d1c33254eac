#ifndef LKFSYN_H
#define LKFSYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum LkfStatus {
  LKF_STATUS_OK = 0,
  LKF_STATUS_NULL_POINTER = 1,
  LKF_STATUS_INVALID_ARGUMENT = 2,
  LKF_STATUS_DIMENSION_MISMATCH = 3,
  LKF_STATUS_PARSE = 4,
  LKF_STATUS_SINGULAR_MATRIX = 5,
  LKF_STATUS_QUADRATURE_MISMATCH = 6,
  LKF_STATUS_INFEASIBLE = 7,
  LKF_STATUS_NUMERICAL_TROUBLE = 8,
  LKF_STATUS_VALIDATION_FAILED = 9,
  LKF_STATUS_NON_FINITE_STATE = 10,
  LKF_STATUS_BUFFER_TOO_SMALL = 11,
  LKF_STATUS_INTERNAL = 12,
  LKF_STATUS_PANIC = 13,
} LkfStatus;

/*
 A synthesized controller with its certificate.
 */
typedef struct LkfController LkfController;

/*
 The closed-form inverse of an [`LkfOperator`].
 */
typedef struct LkfInverse LkfInverse;

/*
 A separable kernel operator.
 */
typedef struct LkfOperator LkfOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *lkf_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *lkf_last_error(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a string from this library that was not yet freed.
 */
void lkf_string_free(char *s);

/*
 Builds `𝒫` from `P` (n×n), `H` (n×q), `Γ` (q×q) and `s_degree + 1`
 coefficients of `S` (m×m each), where `q = (degree + 1)·m`.

 # Safety
 Each array must hold the number of doubles implied by the dimensions.
 */
enum LkfStatus lkf_operator_new(size_t n,
                                size_t m,
                                size_t degree,
                                double r,
                                const double *p,
                                const double *h,
                                const double *gamma,
                                const double *s_coeffs,
                                size_t s_degree,
                                struct LkfOperator **out);

/*
 Builds `𝒫` from the JSON form used by the command-line tool.

 # Safety
 `json` must be a NUL-terminated string.
 */
enum LkfStatus lkf_operator_from_json(const char *json, struct LkfOperator **out);

/*
 # Safety
 `op` must be null or a live handle from this library.
 */
void lkf_operator_free(struct LkfOperator *op);

/*
 Writes `n` and `m`.

 # Safety
 `op` must be a live handle; `n` and `m` writable.
 */
enum LkfStatus lkf_operator_dims(const struct LkfOperator *op, size_t *n, size_t *m);

/*
 `⟨z, 𝒫z⟩` for `ψ` (n values) and polynomial `φ` given by `phi_degree + 1`
 m-vectors.

 # Safety
 Arrays must hold the stated number of doubles; `out` must be writable.
 */
enum LkfStatus lkf_operator_value(const struct LkfOperator *op,
                                  const double *psi,
                                  const double *phi_coeffs,
                                  size_t phi_degree,
                                  double *out);

/*
 Residual norms of the three boundary conditions for `C` (m×n) and `D`
 (m×m), written to `out[0..3]`.

 # Safety
 `c`, `d` must hold m·n and m·m doubles; `out` three.
 */
enum LkfStatus lkf_operator_invariance_residual(const struct LkfOperator *op,
                                                const double *c,
                                                const double *d,
                                                double *out);

/*
 Inverts `𝒫` with a `quad_nodes`-point Gauss rule (0 for the default).

 # Safety
 `op` must be a live handle; `out` writable.
 */
enum LkfStatus lkf_operator_invert(const struct LkfOperator *op,
                                   size_t quad_nodes,
                                   struct LkfInverse **out);

/*
 # Safety
 `inv` must be null or a live handle from this library.
 */
void lkf_inverse_free(struct LkfInverse *inv);

/*
 Copies `P̂` (n×n), `Ĥ` (n×q) and `Γ̂` (q×q). Null buffers are skipped;
 each length is in doubles.

 # Safety
 Non-null buffers must hold the stated number of doubles.
 */
enum LkfStatus lkf_inverse_data(const struct LkfInverse *inv,
                                double *p_hat,
                                size_t p_len,
                                double *h_hat,
                                size_t h_len,
                                double *gamma_hat,
                                size_t gamma_len);

/*
 Largest `‖𝒫̂𝒫z − z‖ / ‖z‖` over `samples` seeded random states.

 # Safety
 Handles must be live; `out` writable.
 */
enum LkfStatus lkf_composition_residual(const struct LkfOperator *op,
                                        const struct LkfInverse *inv,
                                        size_t samples,
                                        uint64_t seed,
                                        double *out);

/*
 Synthesizes a controller for a problem in the command-line JSON form.
 With `constant_s` nonzero the multiplier `S` is restricted to a constant.

 # Safety
 `problem_json` must be a NUL-terminated string; `out` writable.
 */
enum LkfStatus lkf_synthesize_json(const char *problem_json,
                                   int32_t constant_s,
                                   struct LkfController **out);

/*
 # Safety
 `ctl` must be null or a live handle from this library.
 */
void lkf_controller_free(struct LkfController *ctl);

/*
 Writes state, delayed-channel and input dimensions.

 # Safety
 `ctl` must be live; outputs writable.
 */
enum LkfStatus lkf_controller_dims(const struct LkfController *ctl,
                                   size_t *n,
                                   size_t *m,
                                   size_t *p);

/*
 Margin `ε` of the certificate.

 # Safety
 `ctl` must be live; `out` writable.
 */
enum LkfStatus lkf_controller_eps(const struct LkfController *ctl, double *out);

/*
 Copies `K₀` (p×n).

 # Safety
 `out` must hold `len` doubles.
 */
enum LkfStatus lkf_controller_k0(const struct LkfController *ctl, double *out, size_t len);

/*
 Copies `K₁` (p×m).

 # Safety
 `out` must hold `len` doubles.
 */
enum LkfStatus lkf_controller_k1(const struct LkfController *ctl, double *out, size_t len);

/*
 Evaluates `K₂(s)` (p×m) for `s` in `[-r, 0]`.

 # Safety
 `out` must hold `len` doubles.
 */
enum LkfStatus lkf_controller_k2_at(const struct LkfController *ctl,
                                    double s,
                                    double *out,
                                    size_t len);

/*
 Gains and certificate as JSON; release with [`lkf_string_free`].

 # Safety
 `ctl` must be live; `out` writable.
 */
enum LkfStatus lkf_controller_to_json(const struct LkfController *ctl, char **out);

/*
 Simulates a plant given in the command-line JSON form and returns the
 trajectory as CSV; release with [`lkf_string_free`].

 # Safety
 `input_json` must be a NUL-terminated string; `out` writable.
 */
enum LkfStatus lkf_simulate_json(const char *input_json, double dt, double t_end, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LKFSYN_H */
