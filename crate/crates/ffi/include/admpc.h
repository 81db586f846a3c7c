/*
 * C interface to the admpc solver: load a scenario, solve single steps to
 * certified global optimality, and run receding-horizon simulations.
 *
 * Every function that can fail returns an AdmpcStatus; on any status other
 * than ADMPC_STATUS_OK a human-readable message is available from
 * admpc_last_error() on the same thread. Handles returned through out
 * parameters are owned by the caller and must be released with the matching
 * *_free function.
 */

#ifndef ADMPC_H
#define ADMPC_H

/* Generated by cbindgen from the admpc-ffi crate. Do not edit by hand. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Serialization format for simulation traces.
typedef enum {
  // One row per accepted step plus a terminal-state row.
  ADMPC_FORMAT_CSV = 0,
  // Full diagnostics: per-step certificates, sign vectors, timings.
  ADMPC_FORMAT_JSON = 1,
} AdmpcFormat;

// Which admissible region a state belongs to.
typedef enum {
  // Only the plus region admits the state.
  ADMPC_REGION_PLUS = 0,
  // Only the minus region admits the state.
  ADMPC_REGION_MINUS = 1,
  // The state satisfies both region descriptions.
  ADMPC_REGION_BOTH = 2,
  // Neither region admits the state; a solve from it would fail.
  ADMPC_REGION_NEITHER = 3,
} AdmpcRegion;

// Outcome of a call. Values mirror the exit codes of the `admpc` binary so
// scripts and C callers can share error tables.
typedef enum {
  // The call succeeded.
  ADMPC_STATUS_OK = 0,
  // Any failure without a dedicated code: i/o, dimension mismatches,
  // invalid arguments, numerical guards, internal panics.
  ADMPC_STATUS_ERROR = 1,
  // The scenario text failed to parse or validate.
  ADMPC_STATUS_SCHEMA = 2,
  // No uniform sign vector exists for the condensed family; the problem
  // is outside the class this solver certifies.
  ADMPC_STATUS_NOT_ODNP = 3,
  // The initial state lies in neither admissible region.
  ADMPC_STATUS_NEITHER_REGION = 4,
  // The cone solver terminated without an optimality certificate.
  ADMPC_STATUS_SOLVER_FAILURE = 5,
  // A required pointer argument was null.
  ADMPC_STATUS_NULL_POINTER = 6,
  // A string argument was not valid UTF-8.
  ADMPC_STATUS_INVALID_UTF8 = 7,
  // A caller-provided output buffer is shorter than the data; the
  // required length is reported through `admpc_last_error`.
  ADMPC_STATUS_BUFFER_TOO_SMALL = 8,
} AdmpcStatus;

// An opaque prepared scenario: dynamics, costs, constraints, the uniform
// sign vector, and the admissible regions, ready for repeated solves.
typedef struct AdmpcScenario AdmpcScenario;

// An opaque single-solve result: the recovered control sequence, the
// certified objective, and the exactness certificate.
typedef struct AdmpcSolution AdmpcSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the library version as a static NUL-terminated string.
const char *admpc_version(void);

// Returns the message of the most recent failure on the calling thread, or
// an empty string if none occurred. The pointer stays valid until the next
// failing call on the same thread.
const char *admpc_last_error(void);

// Loads and prepares a scenario from `name_or_path`: an existing TOML file
// path, or the name of a built-in scenario (`example1`, `double_integrator`,
// `microgrid`). On success writes a new handle to `out`.
//
// # Safety
// `name_or_path` must be a NUL-terminated string and `out` a valid pointer;
// the returned handle must be released with `admpc_scenario_free`.
AdmpcStatus admpc_scenario_load(const char *name_or_path, AdmpcScenario **out);

// Loads and prepares a scenario from an in-memory TOML document. On success
// writes a new handle to `out`.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer; the
// returned handle must be released with `admpc_scenario_free`.
AdmpcStatus admpc_scenario_from_toml(const char *text, AdmpcScenario **out);

// Releases a scenario handle. Passing null is a no-op.
//
// # Safety
// `handle` must be null or a pointer obtained from a scenario constructor,
// and must not be used afterwards.
void admpc_scenario_free(AdmpcScenario *handle);

// Number of states of the underlying system, or 0 for a null handle.
//
// # Safety
// `handle` must be null or a valid scenario handle.
size_t admpc_scenario_state_dim(const AdmpcScenario *handle);

// Number of controls of the underlying system, or 0 for a null handle.
//
// # Safety
// `handle` must be null or a valid scenario handle.
size_t admpc_scenario_control_dim(const AdmpcScenario *handle);

// Prediction horizon (number of control stages), or 0 for a null handle.
//
// # Safety
// `handle` must be null or a valid scenario handle.
size_t admpc_scenario_horizon(const AdmpcScenario *handle);

// Receding-horizon round count the scenario file asked for, or 0 for a
// null handle.
//
// # Safety
// `handle` must be null or a valid scenario handle.
size_t admpc_scenario_default_steps(const AdmpcScenario *handle);

// Length of the uniform sign vector (horizon times control dimension), or
// 0 for a null handle.
//
// # Safety
// `handle` must be null or a valid scenario handle.
size_t admpc_scenario_sign_len(const AdmpcScenario *handle);

// Copies the uniform sign vector (entries +1 or -1) into `out`, which must
// hold at least `admpc_scenario_sign_len` entries.
//
// # Safety
// `handle` must be a valid scenario handle and `out` must point to at
// least `len` writable `int8_t` slots.
AdmpcStatus admpc_scenario_sign_vector(const AdmpcScenario *handle, int8_t *out, size_t len);

// Copies the scenario's initial state into `out`, which must hold at least
// `admpc_scenario_state_dim` entries.
//
// # Safety
// `handle` must be a valid scenario handle and `out` must point to at
// least `len` writable doubles.
AdmpcStatus admpc_scenario_initial_state(const AdmpcScenario *handle, double *out, size_t len);

// Overrides the cone-solver termination settings for subsequent solves on
// this handle. Tolerances must be positive and `max_iter` at least 1.
//
// # Safety
// `handle` must be a valid scenario handle.
AdmpcStatus admpc_scenario_set_solver(AdmpcScenario *handle,
                                      double feas_tol,
                                      double gap_tol,
                                      uint32_t max_iter);

// Classifies a state against the admissible regions without solving.
// Returns `ADMPC_REGION_NEITHER` for a null handle, a null state, or a
// state of the wrong length.
//
// # Safety
// `handle` must be null or a valid scenario handle; `x0` must be null or
// point to `x0_len` readable doubles.
AdmpcRegion admpc_scenario_classify(const AdmpcScenario *handle, const double *x0, size_t x0_len);

// Solves one instance from `x0` (or from the scenario's own initial state
// when `x0` is null) and writes a solution handle to `out`. The solution
// carries the recovered control sequence and its exactness certificate;
// `admpc_solution_exact` reports whether the relaxation was provably tight.
//
// # Safety
// `handle` must be a valid scenario handle; `x0` must be null or point to
// `x0_len` readable doubles; `out` must be a valid pointer. The returned
// handle must be released with `admpc_solution_free`.
AdmpcStatus admpc_solve(const AdmpcScenario *handle,
                        const double *x0,
                        size_t x0_len,
                        AdmpcSolution **out);

// Releases a solution handle. Passing null is a no-op.
//
// # Safety
// `handle` must be null or a pointer obtained from `admpc_solve`, and must
// not be used afterwards.
void admpc_solution_free(AdmpcSolution *handle);

// Length of the stacked control sequence (horizon times control
// dimension), or 0 for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
size_t admpc_solution_control_len(const AdmpcSolution *handle);

// Copies the stacked control sequence `(u(0), ..., u(N-1))` into `out`,
// which must hold at least `admpc_solution_control_len` entries.
//
// # Safety
// `handle` must be a valid solution handle and `out` must point to at
// least `len` writable doubles.
AdmpcStatus admpc_solution_control(const AdmpcSolution *handle, double *out, size_t len);

// Length of the stacked predicted-state vector `(x(0), ..., x(N))`, or 0
// for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
size_t admpc_solution_predicted_len(const AdmpcSolution *handle);

// Copies the stacked predicted states under the recovered controls into
// `out`, which must hold at least `admpc_solution_predicted_len` entries.
//
// # Safety
// `handle` must be a valid solution handle and `out` must point to at
// least `len` writable doubles.
AdmpcStatus admpc_solution_predicted(const AdmpcSolution *handle, double *out, size_t len);

// Certified objective value of the solve (the relaxation bound, which the
// recovered point matches within the certificate gap when exact). Returns
// NaN for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
double admpc_solution_objective(const AdmpcSolution *handle);

// True when the recovered point is feasible within tolerance and its
// objective matches the relaxation bound, i.e. the answer is certified
// globally optimal. False for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
bool admpc_solution_exact(const AdmpcSolution *handle);

// Gap between the recovered point's objective and the relaxation bound.
// Returns NaN for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
double admpc_solution_gap(const AdmpcSolution *handle);

// Worst constraint violation of the recovered point (0 when feasible).
// Returns NaN for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
double admpc_solution_max_violation(const AdmpcSolution *handle);

// Lower bound on the optimal value established by the relaxation. Returns
// NaN for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
double admpc_solution_bound(const AdmpcSolution *handle);

// Interior-point iterations the solve took, or 0 for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
uint32_t admpc_solution_iterations(const AdmpcSolution *handle);

// Which admissible region the initial state was classified into. Returns
// `ADMPC_REGION_NEITHER` for a null handle (a successful solve never
// classifies a state as neither).
//
// # Safety
// `handle` must be null or a valid solution handle.
AdmpcRegion admpc_solution_region(const AdmpcSolution *handle);

// Wall-clock time of the solve in milliseconds, or NaN for a null handle.
//
// # Safety
// `handle` must be null or a valid solution handle.
double admpc_solution_solve_ms(const AdmpcSolution *handle);

// Runs `steps` receding-horizon rounds from the scenario's initial state
// and writes the serialized trace to `out` as a heap string. When a round
// fails, the rounds completed so far are still serialized and written, and
// the failure's status is returned with its message in
// `admpc_last_error`; callers therefore get both the partial trace and the
// reason the run stopped.
//
// # Safety
// `handle` must be a valid scenario handle and `out` a valid pointer. The
// returned string must be released with `admpc_string_free`.
AdmpcStatus admpc_simulate(const AdmpcScenario *handle,
                           size_t steps,
                           AdmpcFormat format,
                           char **out);

// Releases a string returned by this library. Passing null is a no-op.
//
// # Safety
// `text` must be null or a pointer obtained from a function of this
// library that documents `admpc_string_free`, and must not be used
// afterwards.
void admpc_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADMPC_H */
