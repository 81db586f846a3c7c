//! C interface to the certified MPC solver.
//!
//! The surface is a handful of opaque handles plus status codes. A scenario
//! loads from a TOML file, a built-in name, or an in-memory string and is
//! prepared once (assembly, condensation, sign-vector search, admissible
//! regions); solves and simulations then run against the prepared handle.
//! Every fallible call returns an [`AdmpcStatus`], and a per-thread message
//! buffer readable through [`admpc_last_error`] carries the details of the
//! most recent failure on that thread.
//!
//! The matching C header is generated into `include/admpc.h` at build time.

use std::any::Any;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;

use admpc::error::Error;
use admpc::odnp::{classify_state, RegionLabel};
use admpc::scenario;
use admpc::sim::{receding_horizon, solve_step, PreparedScenario, StepSolution};

/// Outcome of a call. Values mirror the exit codes of the `admpc` binary so
/// scripts and C callers can share error tables.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmpcStatus {
    /// The call succeeded.
    Ok = 0,
    /// Any failure without a dedicated code: i/o, dimension mismatches,
    /// invalid arguments, numerical guards, internal panics.
    Error = 1,
    /// The scenario text failed to parse or validate.
    Schema = 2,
    /// No uniform sign vector exists for the condensed family; the problem
    /// is outside the class this solver certifies.
    NotOdnp = 3,
    /// The initial state lies in neither admissible region.
    NeitherRegion = 4,
    /// The cone solver terminated without an optimality certificate.
    SolverFailure = 5,
    /// A required pointer argument was null.
    NullPointer = 6,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 7,
    /// A caller-provided output buffer is shorter than the data; the
    /// required length is reported through `admpc_last_error`.
    BufferTooSmall = 8,
}

/// Which admissible region a state belongs to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmpcRegion {
    /// Only the plus region admits the state.
    Plus = 0,
    /// Only the minus region admits the state.
    Minus = 1,
    /// The state satisfies both region descriptions.
    Both = 2,
    /// Neither region admits the state; a solve from it would fail.
    Neither = 3,
}

/// Serialization format for simulation traces.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmpcFormat {
    /// One row per accepted step plus a terminal-state row.
    Csv = 0,
    /// Full diagnostics: per-step certificates, sign vectors, timings.
    Json = 1,
}

/// An opaque prepared scenario: dynamics, costs, constraints, the uniform
/// sign vector, and the admissible regions, ready for repeated solves.
pub struct AdmpcScenario {
    prep: PreparedScenario,
}

/// An opaque single-solve result: the recovered control sequence, the
/// certified objective, and the exactness certificate.
pub struct AdmpcSolution {
    step: StepSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl std::fmt::Display) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> AdmpcStatus {
    match err {
        Error::Schema(_) => AdmpcStatus::Schema,
        Error::NotOdnp(_) => AdmpcStatus::NotOdnp,
        Error::NeitherRegion { .. } => AdmpcStatus::NeitherRegion,
        Error::SolverFailure(_) => AdmpcStatus::SolverFailure,
        _ => AdmpcStatus::Error,
    }
}

fn fail(err: &Error) -> AdmpcStatus {
    set_error(err);
    status_of(err)
}

fn panic_text(payload: Box<dyn Any + Send>) -> String {
    if let Some(text) = payload.downcast_ref::<&str>() {
        (*text).to_string()
    } else if let Some(text) = payload.downcast_ref::<String>() {
        text.clone()
    } else {
        "unknown panic payload".to_string()
    }
}

/// Runs `body`, converting a panic into `AdmpcStatus::Error` instead of
/// unwinding across the C boundary.
fn guarded<F: FnOnce() -> AdmpcStatus>(body: F) -> AdmpcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            set_error(format!("internal panic: {}", panic_text(payload)));
            AdmpcStatus::Error
        }
    }
}

/// Reads a required C string argument into `&str`.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, AdmpcStatus> {
    if ptr.is_null() {
        set_error("string argument is null");
        return Err(AdmpcStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        AdmpcStatus::InvalidUtf8
    })
}

fn boxed_scenario(prep: PreparedScenario, out: *mut *mut AdmpcScenario) -> AdmpcStatus {
    let handle = Box::new(AdmpcScenario { prep });
    unsafe { *out = Box::into_raw(handle) };
    AdmpcStatus::Ok
}

fn prepare(file: scenario::ScenarioFile, out: *mut *mut AdmpcScenario) -> AdmpcStatus {
    let sc = match file.to_scenario() {
        Ok(sc) => sc,
        Err(err) => return fail(&err),
    };
    match PreparedScenario::new(sc) {
        Ok(prep) => boxed_scenario(prep, out),
        Err(err) => fail(&err),
    }
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn admpc_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Returns the message of the most recent failure on the calling thread, or
/// an empty string if none occurred. The pointer stays valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn admpc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads and prepares a scenario from `name_or_path`: an existing TOML file
/// path, or the name of a built-in scenario (`example1`, `double_integrator`,
/// `microgrid`). On success writes a new handle to `out`.
///
/// # Safety
/// `name_or_path` must be a NUL-terminated string and `out` a valid pointer;
/// the returned handle must be released with `admpc_scenario_free`.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_load(
    name_or_path: *const c_char,
    out: *mut *mut AdmpcScenario,
) -> AdmpcStatus {
    if out.is_null() {
        set_error("output handle pointer is null");
        return AdmpcStatus::NullPointer;
    }
    let name_or_path = match read_str(name_or_path) {
        Ok(text) => text,
        Err(status) => return status,
    };
    guarded(|| match scenario::resolve(name_or_path) {
        Ok(file) => prepare(file, out),
        Err(err) => fail(&err),
    })
}

/// Loads and prepares a scenario from an in-memory TOML document. On success
/// writes a new handle to `out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer; the
/// returned handle must be released with `admpc_scenario_free`.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_from_toml(
    text: *const c_char,
    out: *mut *mut AdmpcScenario,
) -> AdmpcStatus {
    if out.is_null() {
        set_error("output handle pointer is null");
        return AdmpcStatus::NullPointer;
    }
    let text = match read_str(text) {
        Ok(text) => text,
        Err(status) => return status,
    };
    guarded(|| match scenario::load_str(text) {
        Ok(file) => prepare(file, out),
        Err(err) => fail(&err),
    })
}

/// Releases a scenario handle. Passing null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer obtained from a scenario constructor,
/// and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_free(handle: *mut AdmpcScenario) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of states of the underlying system, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_state_dim(handle: *const AdmpcScenario) -> usize {
    handle
        .as_ref()
        .map_or(0, |h| h.prep.scenario.system.n_x())
}

/// Number of controls of the underlying system, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_control_dim(handle: *const AdmpcScenario) -> usize {
    handle
        .as_ref()
        .map_or(0, |h| h.prep.scenario.system.n_u())
}

/// Prediction horizon (number of control stages), or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_horizon(handle: *const AdmpcScenario) -> usize {
    handle.as_ref().map_or(0, |h| h.prep.scenario.horizon)
}

/// Receding-horizon round count the scenario file asked for, or 0 for a
/// null handle.
///
/// # Safety
/// `handle` must be null or a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_default_steps(handle: *const AdmpcScenario) -> usize {
    handle.as_ref().map_or(0, |h| h.prep.scenario.steps)
}

/// Length of the uniform sign vector (horizon times control dimension), or
/// 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_sign_len(handle: *const AdmpcScenario) -> usize {
    handle.as_ref().map_or(0, |h| h.prep.sigma().len())
}

/// Copies the uniform sign vector (entries +1 or -1) into `out`, which must
/// hold at least `admpc_scenario_sign_len` entries.
///
/// # Safety
/// `handle` must be a valid scenario handle and `out` must point to at
/// least `len` writable `int8_t` slots.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_sign_vector(
    handle: *const AdmpcScenario,
    out: *mut i8,
    len: usize,
) -> AdmpcStatus {
    let Some(h) = handle.as_ref() else {
        set_error("scenario handle is null");
        return AdmpcStatus::NullPointer;
    };
    if out.is_null() {
        set_error("output buffer is null");
        return AdmpcStatus::NullPointer;
    }
    let signs = h.prep.sigma().as_slice();
    if len < signs.len() {
        set_error(format!(
            "sign buffer holds {len} entries but {} are required",
            signs.len()
        ));
        return AdmpcStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(signs.as_ptr(), out, signs.len());
    AdmpcStatus::Ok
}

/// Copies the scenario's initial state into `out`, which must hold at least
/// `admpc_scenario_state_dim` entries.
///
/// # Safety
/// `handle` must be a valid scenario handle and `out` must point to at
/// least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_initial_state(
    handle: *const AdmpcScenario,
    out: *mut f64,
    len: usize,
) -> AdmpcStatus {
    let Some(h) = handle.as_ref() else {
        set_error("scenario handle is null");
        return AdmpcStatus::NullPointer;
    };
    if out.is_null() {
        set_error("output buffer is null");
        return AdmpcStatus::NullPointer;
    }
    let x0 = &h.prep.scenario.x0;
    if len < x0.len() {
        set_error(format!(
            "state buffer holds {len} entries but {} are required",
            x0.len()
        ));
        return AdmpcStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(x0.as_slice().as_ptr(), out, x0.len());
    AdmpcStatus::Ok
}

/// Overrides the cone-solver termination settings for subsequent solves on
/// this handle. Tolerances must be positive and `max_iter` at least 1.
///
/// # Safety
/// `handle` must be a valid scenario handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_set_solver(
    handle: *mut AdmpcScenario,
    feas_tol: f64,
    gap_tol: f64,
    max_iter: u32,
) -> AdmpcStatus {
    let Some(h) = handle.as_mut() else {
        set_error("scenario handle is null");
        return AdmpcStatus::NullPointer;
    };
    if !(feas_tol > 0.0 && feas_tol.is_finite() && gap_tol > 0.0 && gap_tol.is_finite()) {
        set_error("solver tolerances must be positive and finite");
        return AdmpcStatus::Error;
    }
    if max_iter == 0 {
        set_error("max_iter must be at least 1");
        return AdmpcStatus::Error;
    }
    h.prep.scenario.solver.feas_tol = feas_tol;
    h.prep.scenario.solver.gap_tol = gap_tol;
    h.prep.scenario.solver.max_iter = max_iter as usize;
    AdmpcStatus::Ok
}

/// Classifies a state against the admissible regions without solving.
/// Returns `ADMPC_REGION_NEITHER` for a null handle, a null state, or a
/// state of the wrong length.
///
/// # Safety
/// `handle` must be null or a valid scenario handle; `x0` must be null or
/// point to `x0_len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn admpc_scenario_classify(
    handle: *const AdmpcScenario,
    x0: *const f64,
    x0_len: usize,
) -> AdmpcRegion {
    let Some(h) = handle.as_ref() else {
        return AdmpcRegion::Neither;
    };
    if x0.is_null() || x0_len != h.prep.scenario.system.n_x() {
        return AdmpcRegion::Neither;
    }
    let state = DVector::from_column_slice(std::slice::from_raw_parts(x0, x0_len));
    match classify_state(&state, h.prep.regions()) {
        RegionLabel::Plus => AdmpcRegion::Plus,
        RegionLabel::Minus => AdmpcRegion::Minus,
        RegionLabel::Both => AdmpcRegion::Both,
        RegionLabel::Neither => AdmpcRegion::Neither,
    }
}

/// Solves one instance from `x0` (or from the scenario's own initial state
/// when `x0` is null) and writes a solution handle to `out`. The solution
/// carries the recovered control sequence and its exactness certificate;
/// `admpc_solution_exact` reports whether the relaxation was provably tight.
///
/// # Safety
/// `handle` must be a valid scenario handle; `x0` must be null or point to
/// `x0_len` readable doubles; `out` must be a valid pointer. The returned
/// handle must be released with `admpc_solution_free`.
#[no_mangle]
pub unsafe extern "C" fn admpc_solve(
    handle: *const AdmpcScenario,
    x0: *const f64,
    x0_len: usize,
    out: *mut *mut AdmpcSolution,
) -> AdmpcStatus {
    let Some(h) = handle.as_ref() else {
        set_error("scenario handle is null");
        return AdmpcStatus::NullPointer;
    };
    if out.is_null() {
        set_error("output handle pointer is null");
        return AdmpcStatus::NullPointer;
    }
    let state = if x0.is_null() {
        h.prep.scenario.x0.clone()
    } else {
        let n_x = h.prep.scenario.system.n_x();
        if x0_len != n_x {
            set_error(format!(
                "initial state has length {x0_len} but the system has {n_x} states"
            ));
            return AdmpcStatus::Error;
        }
        DVector::from_column_slice(std::slice::from_raw_parts(x0, x0_len))
    };
    guarded(|| match solve_step(&h.prep, &state) {
        Ok(step) => {
            let handle = Box::new(AdmpcSolution { step });
            *out = Box::into_raw(handle);
            AdmpcStatus::Ok
        }
        Err(err) => fail(&err),
    })
}

/// Releases a solution handle. Passing null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer obtained from `admpc_solve`, and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_free(handle: *mut AdmpcSolution) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Length of the stacked control sequence (horizon times control
/// dimension), or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_control_len(handle: *const AdmpcSolution) -> usize {
    handle.as_ref().map_or(0, |h| h.step.u.len())
}

/// Copies the stacked control sequence `(u(0), ..., u(N-1))` into `out`,
/// which must hold at least `admpc_solution_control_len` entries.
///
/// # Safety
/// `handle` must be a valid solution handle and `out` must point to at
/// least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_control(
    handle: *const AdmpcSolution,
    out: *mut f64,
    len: usize,
) -> AdmpcStatus {
    let Some(h) = handle.as_ref() else {
        set_error("solution handle is null");
        return AdmpcStatus::NullPointer;
    };
    if out.is_null() {
        set_error("output buffer is null");
        return AdmpcStatus::NullPointer;
    }
    let u = &h.step.u;
    if len < u.len() {
        set_error(format!(
            "control buffer holds {len} entries but {} are required",
            u.len()
        ));
        return AdmpcStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(u.as_slice().as_ptr(), out, u.len());
    AdmpcStatus::Ok
}

/// Length of the stacked predicted-state vector `(x(0), ..., x(N))`, or 0
/// for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_predicted_len(handle: *const AdmpcSolution) -> usize {
    handle.as_ref().map_or(0, |h| h.step.predicted.len())
}

/// Copies the stacked predicted states under the recovered controls into
/// `out`, which must hold at least `admpc_solution_predicted_len` entries.
///
/// # Safety
/// `handle` must be a valid solution handle and `out` must point to at
/// least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_predicted(
    handle: *const AdmpcSolution,
    out: *mut f64,
    len: usize,
) -> AdmpcStatus {
    let Some(h) = handle.as_ref() else {
        set_error("solution handle is null");
        return AdmpcStatus::NullPointer;
    };
    if out.is_null() {
        set_error("output buffer is null");
        return AdmpcStatus::NullPointer;
    }
    let predicted = &h.step.predicted;
    if len < predicted.len() {
        set_error(format!(
            "prediction buffer holds {len} entries but {} are required",
            predicted.len()
        ));
        return AdmpcStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(predicted.as_slice().as_ptr(), out, predicted.len());
    AdmpcStatus::Ok
}

/// Certified objective value of the solve (the relaxation bound, which the
/// recovered point matches within the certificate gap when exact). Returns
/// NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_objective(handle: *const AdmpcSolution) -> f64 {
    handle.as_ref().map_or(f64::NAN, |h| h.step.objective)
}

/// True when the recovered point is feasible within tolerance and its
/// objective matches the relaxation bound, i.e. the answer is certified
/// globally optimal. False for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_exact(handle: *const AdmpcSolution) -> bool {
    handle.as_ref().is_some_and(|h| h.step.certificate.exact)
}

/// Gap between the recovered point's objective and the relaxation bound.
/// Returns NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_gap(handle: *const AdmpcSolution) -> f64 {
    handle.as_ref().map_or(f64::NAN, |h| h.step.certificate.gap)
}

/// Worst constraint violation of the recovered point (0 when feasible).
/// Returns NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_max_violation(handle: *const AdmpcSolution) -> f64 {
    handle
        .as_ref()
        .map_or(f64::NAN, |h| h.step.certificate.max_violation)
}

/// Lower bound on the optimal value established by the relaxation. Returns
/// NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_bound(handle: *const AdmpcSolution) -> f64 {
    handle
        .as_ref()
        .map_or(f64::NAN, |h| h.step.certificate.relaxation_objective)
}

/// Interior-point iterations the solve took, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_iterations(handle: *const AdmpcSolution) -> u32 {
    handle.as_ref().map_or(0, |h| h.step.iterations as u32)
}

/// Which admissible region the initial state was classified into. Returns
/// `ADMPC_REGION_NEITHER` for a null handle (a successful solve never
/// classifies a state as neither).
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_region(handle: *const AdmpcSolution) -> AdmpcRegion {
    match handle.as_ref().map(|h| h.step.region) {
        Some(RegionLabel::Plus) => AdmpcRegion::Plus,
        Some(RegionLabel::Minus) => AdmpcRegion::Minus,
        Some(RegionLabel::Both) => AdmpcRegion::Both,
        Some(RegionLabel::Neither) | None => AdmpcRegion::Neither,
    }
}

/// Wall-clock time of the solve in milliseconds, or NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a valid solution handle.
#[no_mangle]
pub unsafe extern "C" fn admpc_solution_solve_ms(handle: *const AdmpcSolution) -> f64 {
    handle.as_ref().map_or(f64::NAN, |h| h.step.solve_ms)
}

/// Runs `steps` receding-horizon rounds from the scenario's initial state
/// and writes the serialized trace to `out` as a heap string. When a round
/// fails, the rounds completed so far are still serialized and written, and
/// the failure's status is returned with its message in
/// `admpc_last_error`; callers therefore get both the partial trace and the
/// reason the run stopped.
///
/// # Safety
/// `handle` must be a valid scenario handle and `out` a valid pointer. The
/// returned string must be released with `admpc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn admpc_simulate(
    handle: *const AdmpcScenario,
    steps: usize,
    format: AdmpcFormat,
    out: *mut *mut c_char,
) -> AdmpcStatus {
    let Some(h) = handle.as_ref() else {
        set_error("scenario handle is null");
        return AdmpcStatus::NullPointer;
    };
    if out.is_null() {
        set_error("output string pointer is null");
        return AdmpcStatus::NullPointer;
    }
    guarded(|| {
        let traj = receding_horizon(&h.prep, steps);
        let text = match format {
            AdmpcFormat::Csv => traj.to_csv(),
            AdmpcFormat::Json => {
                let value = traj.to_json();
                let mut rendered = serde_json::to_string_pretty(&value)
                    .expect("trajectory JSON always serializes");
                rendered.push('\n');
                rendered
            }
        };
        let text = CString::new(text.replace('\0', " ")).unwrap_or_default();
        *out = text.into_raw();
        match &traj.failure {
            None => AdmpcStatus::Ok,
            Some(failure) => {
                set_error(format!("step {}: {}", failure.step, failure.error));
                status_of(&failure.error)
            }
        }
    })
}

/// Releases a string returned by this library. Passing null is a no-op.
///
/// # Safety
/// `text` must be null or a pointer obtained from a function of this
/// library that documents `admpc_string_free`, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn admpc_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
