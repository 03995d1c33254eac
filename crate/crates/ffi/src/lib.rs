//! C ABI for `lkfsyn`.
//!
//! Objects cross the boundary as opaque handles. Each constructor writes a
//! handle through an out-pointer and each handle has a matching `*_free`.
//! Every fallible call returns an [`LkfStatus`]; on failure
//! [`lkf_last_error`] describes it until the next call on the same thread.
//!
//! Matrices are dense, row-major `double` arrays. Polynomial coefficients are
//! stored lowest degree first, one matrix after another.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lkfsyn::cli::SimulationInput;
use lkfsyn::ddesim::{simulate, StateFeedback};
use lkfsyn::lkoperator::{
    composition_residual, invariance_residual, BoundaryData, InverseKernelOperator, SeparableKernelOperator,
    SeparableOperatorJson, StateFunction,
};
use lkfsyn::polyalg::{gauss_rule, Interval, PolyMat1, DEFAULT_QUAD_NODES};
use lkfsyn::synthesis::{synthesize, SynthesisOptions, SynthesisOutcome, SynthesisProblemJson};
use lkfsyn::LkError;
use nalgebra::{DMatrix, DVector};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LkfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Parse = 4,
    SingularMatrix = 5,
    QuadratureMismatch = 6,
    Infeasible = 7,
    NumericalTrouble = 8,
    ValidationFailed = 9,
    NonFiniteState = 10,
    BufferTooSmall = 11,
    Internal = 12,
    Panic = 13,
}

/// A separable kernel operator.
pub struct LkfOperator(SeparableKernelOperator);

/// The closed-form inverse of an [`LkfOperator`].
pub struct LkfInverse(InverseKernelOperator);

/// A synthesized controller with its certificate.
pub struct LkfController(SynthesisOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &LkError) -> LkfStatus {
    match err {
        LkError::InvalidArgument(_) | LkError::IntervalMismatch(..) | LkError::WrongVariableCount(_) => {
            LkfStatus::InvalidArgument
        }
        LkError::DimensionMismatch { .. } | LkError::BasisMismatch { .. } | LkError::DegreeTooLow { .. } => {
            LkfStatus::DimensionMismatch
        }
        LkError::Parse(_) => LkfStatus::Parse,
        LkError::SingularMatrix { .. } => LkfStatus::SingularMatrix,
        LkError::QuadratureMismatch { .. } => LkfStatus::QuadratureMismatch,
        LkError::Infeasible(_) => LkfStatus::Infeasible,
        LkError::NumericalTrouble(_) => LkfStatus::NumericalTrouble,
        LkError::ValidationFailed { .. } => LkfStatus::ValidationFailed,
        LkError::NonFiniteState { .. } => LkfStatus::NonFiniteState,
        LkError::UnknownHandle(_) | LkError::Io(_) => LkfStatus::Internal,
    }
}

enum Fail {
    Lk(LkError),
    Null(&'static str),
    Buffer { need: usize, got: usize },
}

impl From<LkError> for Fail {
    fn from(e: LkError) -> Self {
        Fail::Lk(e)
    }
}

type FfiResult = std::result::Result<(), Fail>;

/// Runs `f`, recording errors and containing panics.
fn guard(f: impl FnOnce() -> FfiResult) -> LkfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LkfStatus::Ok
        }
        Ok(Err(Fail::Lk(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            LkfStatus::NullPointer
        }
        Ok(Err(Fail::Buffer { need, got })) => {
            set_error(&format!("buffer holds {got} values, {need} needed"));
            LkfStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic");
            LkfStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> std::result::Result<&'a T, Fail> {
    // SAFETY: callers pass pointers obtained from this library or valid C objects.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn read_slice<'a>(p: *const f64, len: usize, what: &'static str) -> std::result::Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn read_matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> std::result::Result<DMatrix<f64>, Fail> {
    Ok(DMatrix::from_row_slice(rows, cols, read_slice(p, rows * cols, what)?))
}

fn read_str<'a>(p: *const c_char, what: &'static str) -> std::result::Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Fail::Lk(LkError::Parse(format!("{what} is not UTF-8: {e}"))))
}

fn write_matrix(m: &DMatrix<f64>, out: *mut f64, len: usize) -> FfiResult {
    let need = m.len();
    if len < need {
        return Err(Fail::Buffer { need, got: len });
    }
    if out.is_null() {
        return Err(Fail::Null("output buffer"));
    }
    // SAFETY: `out` holds at least `len ≥ need` doubles.
    let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
    for (k, v) in m.transpose().iter().enumerate() {
        dst[k] = *v;
    }
    Ok(())
}

fn write_out<T>(out: *mut T, value: T, what: &'static str) -> FfiResult {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { out.write(value) };
    Ok(())
}

fn write_string(out: *mut *mut c_char, s: String) -> FfiResult {
    let c = CString::new(s).map_err(|e| Fail::Lk(LkError::Parse(e.to_string())))?;
    write_out(out, c.into_raw(), "string out-pointer")
}

fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lkf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lkf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lkf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds `𝒫` from `P` (n×n), `H` (n×q), `Γ` (q×q) and `s_degree + 1`
/// coefficients of `S` (m×m each), where `q = (degree + 1)·m`.
///
/// # Safety
/// Each array must hold the number of doubles implied by the dimensions.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lkf_operator_new(
    n: usize,
    m: usize,
    degree: usize,
    r: f64,
    p: *const f64,
    h: *const f64,
    gamma: *const f64,
    s_coeffs: *const f64,
    s_degree: usize,
    out: *mut *mut LkfOperator,
) -> LkfStatus {
    guard(|| {
        let iv = Interval::new(r)?;
        let q = (degree + 1) * m;
        let s_all = read_slice(s_coeffs, (s_degree + 1) * m * m, "S coefficients")?;
        let s = s_all.chunks(m * m).map(|c| DMatrix::from_row_slice(m, m, c)).collect();
        let op = SeparableKernelOperator::new(
            read_matrix(p, n, n, "P")?,
            read_matrix(h, n, q, "H")?,
            read_matrix(gamma, q, q, "Gamma")?,
            PolyMat1::new(m, m, s, iv)?,
            degree,
        )?;
        write_out(out, Box::into_raw(Box::new(LkfOperator(op))), "operator out-pointer")
    })
}

/// Builds `𝒫` from the JSON form used by the command-line tool.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lkf_operator_from_json(json: *const c_char, out: *mut *mut LkfOperator) -> LkfStatus {
    guard(|| {
        let parsed: SeparableOperatorJson =
            serde_json::from_str(read_str(json, "json")?).map_err(|e| LkError::Parse(e.to_string()))?;
        let op = parsed.into_operator()?;
        write_out(out, Box::into_raw(Box::new(LkfOperator(op))), "operator out-pointer")
    })
}

/// # Safety
/// `op` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn lkf_operator_free(op: *mut LkfOperator) {
    free_box(op);
}

/// Writes `n` and `m`.
///
/// # Safety
/// `op` must be a live handle; `n` and `m` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_operator_dims(op: *const LkfOperator, n: *mut usize, m: *mut usize) -> LkfStatus {
    guard(|| {
        let op = non_null(op, "operator")?;
        write_out(n, op.0.n(), "n")?;
        write_out(m, op.0.m(), "m")
    })
}

/// `⟨z, 𝒫z⟩` for `ψ` (n values) and polynomial `φ` given by `phi_degree + 1`
/// m-vectors.
///
/// # Safety
/// Arrays must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_operator_value(
    op: *const LkfOperator,
    psi: *const f64,
    phi_coeffs: *const f64,
    phi_degree: usize,
    out: *mut f64,
) -> LkfStatus {
    guard(|| {
        let op = &non_null(op, "operator")?.0;
        let (n, m) = (op.n(), op.m());
        let psi = DVector::from_column_slice(read_slice(psi, n, "psi")?);
        let coeffs = read_slice(phi_coeffs, (phi_degree + 1) * m, "phi coefficients")?
            .chunks(m)
            .map(|c| DMatrix::from_column_slice(m, 1, c))
            .collect();
        let z = StateFunction::polynomial(psi, PolyMat1::new(m, 1, coeffs, op.interval())?)?;
        let rule = gauss_rule(DEFAULT_QUAD_NODES, op.interval());
        write_out(out, op.value(&z, &rule)?, "value")
    })
}

/// Residual norms of the three boundary conditions for `C` (m×n) and `D`
/// (m×m), written to `out[0..3]`.
///
/// # Safety
/// `c`, `d` must hold m·n and m·m doubles; `out` three.
#[no_mangle]
pub unsafe extern "C" fn lkf_operator_invariance_residual(
    op: *const LkfOperator,
    c: *const f64,
    d: *const f64,
    out: *mut f64,
) -> LkfStatus {
    guard(|| {
        let op = &non_null(op, "operator")?.0;
        let (n, m) = (op.n(), op.m());
        let bd = BoundaryData::new(read_matrix(c, m, n, "C")?, read_matrix(d, m, m, "D")?)?;
        let (a, b, e) = invariance_residual(&op.to_kernel()?, &bd)?;
        write_matrix(&DMatrix::from_row_slice(1, 3, &[a, b, e]), out, 3)
    })
}

/// Inverts `𝒫` with a `quad_nodes`-point Gauss rule (0 for the default).
///
/// # Safety
/// `op` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_operator_invert(op: *const LkfOperator, quad_nodes: usize, out: *mut *mut LkfInverse) -> LkfStatus {
    guard(|| {
        let op = &non_null(op, "operator")?.0;
        let nodes = if quad_nodes == 0 { DEFAULT_QUAD_NODES } else { quad_nodes };
        let inv = lkfsyn::lkoperator::invert_separable(op, &gauss_rule(nodes, op.interval()))?;
        write_out(out, Box::into_raw(Box::new(LkfInverse(inv))), "inverse out-pointer")
    })
}

/// # Safety
/// `inv` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn lkf_inverse_free(inv: *mut LkfInverse) {
    free_box(inv);
}

/// Copies `P̂` (n×n), `Ĥ` (n×q) and `Γ̂` (q×q). Null buffers are skipped;
/// each length is in doubles.
///
/// # Safety
/// Non-null buffers must hold the stated number of doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lkf_inverse_data(
    inv: *const LkfInverse,
    p_hat: *mut f64,
    p_len: usize,
    h_hat: *mut f64,
    h_len: usize,
    gamma_hat: *mut f64,
    gamma_len: usize,
) -> LkfStatus {
    guard(|| {
        let inv = &non_null(inv, "inverse")?.0;
        for (m, buf, len) in [(&inv.p_hat, p_hat, p_len), (&inv.h_hat, h_hat, h_len), (&inv.gamma_hat, gamma_hat, gamma_len)] {
            if !buf.is_null() {
                write_matrix(m, buf, len)?;
            }
        }
        Ok(())
    })
}

/// Largest `‖𝒫̂𝒫z − z‖ / ‖z‖` over `samples` seeded random states.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_composition_residual(
    op: *const LkfOperator,
    inv: *const LkfInverse,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> LkfStatus {
    guard(|| {
        let op = &non_null(op, "operator")?.0;
        let inv = &non_null(inv, "inverse")?.0;
        let rule = inv.rule().clone();
        write_out(out, composition_residual(op, inv, samples.max(1), &rule, seed)?, "residual")
    })
}

/// Synthesizes a controller for a problem in the command-line JSON form.
/// With `constant_s` nonzero the multiplier `S` is restricted to a constant.
///
/// # Safety
/// `problem_json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_synthesize_json(problem_json: *const c_char, constant_s: i32, out: *mut *mut LkfController) -> LkfStatus {
    guard(|| {
        let parsed: SynthesisProblemJson =
            serde_json::from_str(read_str(problem_json, "problem_json")?).map_err(|e| LkError::Parse(e.to_string()))?;
        let prob = parsed.into_problem()?;
        let opts = SynthesisOptions { constant_s: constant_s != 0, ..SynthesisOptions::default() };
        let outcome = synthesize(&prob, &opts)?;
        write_out(out, Box::into_raw(Box::new(LkfController(outcome))), "controller out-pointer")
    })
}

/// # Safety
/// `ctl` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_free(ctl: *mut LkfController) {
    free_box(ctl);
}

/// Writes state, delayed-channel and input dimensions.
///
/// # Safety
/// `ctl` must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_dims(ctl: *const LkfController, n: *mut usize, m: *mut usize, p: *mut usize) -> LkfStatus {
    guard(|| {
        let g = &non_null(ctl, "controller")?.0.gains;
        write_out(n, g.k0.ncols(), "n")?;
        write_out(m, g.k1.ncols(), "m")?;
        write_out(p, g.k0.nrows(), "p")
    })
}

/// Margin `ε` of the certificate.
///
/// # Safety
/// `ctl` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_eps(ctl: *const LkfController, out: *mut f64) -> LkfStatus {
    guard(|| write_out(out, non_null(ctl, "controller")?.0.certificate.eps, "eps"))
}

/// Copies `K₀` (p×n).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_k0(ctl: *const LkfController, out: *mut f64, len: usize) -> LkfStatus {
    guard(|| write_matrix(&non_null(ctl, "controller")?.0.gains.k0, out, len))
}

/// Copies `K₁` (p×m).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_k1(ctl: *const LkfController, out: *mut f64, len: usize) -> LkfStatus {
    guard(|| write_matrix(&non_null(ctl, "controller")?.0.gains.k1, out, len))
}

/// Evaluates `K₂(s)` (p×m) for `s` in `[-r, 0]`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_k2_at(ctl: *const LkfController, s: f64, out: *mut f64, len: usize) -> LkfStatus {
    guard(|| {
        let o = &non_null(ctl, "controller")?.0;
        let iv = o.certificate.separable.interval();
        if !(iv.lower()..=0.0).contains(&s) {
            return Err(LkError::InvalidArgument(format!("s = {s} outside [{}, 0]", iv.lower())).into());
        }
        write_matrix(&o.gains.k2_at(s)?, out, len)
    })
}

/// Gains and certificate as JSON; release with [`lkf_string_free`].
///
/// # Safety
/// `ctl` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_controller_to_json(ctl: *const LkfController, out: *mut *mut c_char) -> LkfStatus {
    guard(|| {
        let o = &non_null(ctl, "controller")?.0;
        let value = serde_json::json!({
            "gains": o.gains.to_json(),
            "certificate": o.certificate.to_json(),
            "solve": o.solve,
            "validation": o.validation,
        });
        write_string(out, value.to_string())
    })
}

/// Simulates a plant given in the command-line JSON form and returns the
/// trajectory as CSV; release with [`lkf_string_free`].
///
/// # Safety
/// `input_json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lkf_simulate_json(input_json: *const c_char, dt: f64, t_end: f64, out: *mut *mut c_char) -> LkfStatus {
    guard(|| {
        let input: SimulationInput =
            serde_json::from_str(read_str(input_json, "input_json")?).map_err(|e| LkError::Parse(e.to_string()))?;
        let plant = input.plant()?;
        let init = input.initial_state(&plant)?;
        let controller = input.controller.as_ref().map(|c| c as &dyn StateFeedback);
        let traj = simulate(&plant, controller, &init, t_end, dt)?;
        write_string(out, traj.to_csv())
    })
}
