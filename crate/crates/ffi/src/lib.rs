//! C ABI over `pararelax`.
//!
//! Objects are opaque handles created by `pr_*_new`/`pr_*_approximate`-style
//! functions and released with the matching `pr_*_free`. Every fallible call
//! returns a [`PrStatus`]; the message of the most recent failure on the
//! calling thread is available from [`pr_last_error`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pararelax::cli::{relax_problem, Technique};
use pararelax::emit::{self, ModelFormat, RelaxedModel};
use pararelax::expr::{ExprError, FactoredProblem, ProblemEnvelope};
use pararelax::functions::{parse_function, FunctionError};
use pararelax::lut::{self, LutError};
use pararelax::para::{self, ParaError};
use pararelax::pwl::{self, PwlError};
use pararelax::{Interval, ParaApproximation, PwlApproximation, Side, UnivariateFunction};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DomainError = 3,
    ComputationFailed = 4,
    ParseError = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrSide {
    Under = 0,
    Over = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrTechnique {
    Para = 0,
    Pwl = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrFormat {
    LpText = 0,
    Json = 1,
}

/// A univariate function.
pub struct PrFunction(UnivariateFunction);
/// A PARA approximation.
pub struct PrPara(ParaApproximation);
/// A shifted PWL relaxation.
pub struct PrPwl(PwlApproximation);
/// A reformulated problem.
pub struct PrProblem(FactoredProblem);
/// A relaxed model.
pub struct PrModel(RelaxedModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(PrStatus, String);

impl Failure {
    fn new(status: PrStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<FunctionError> for Failure {
    fn from(e: FunctionError) -> Self {
        Failure(PrStatus::DomainError, e.to_string())
    }
}

impl From<ParaError> for Failure {
    fn from(e: ParaError) -> Self {
        let status = match e {
            ParaError::Function(_) | ParaError::DegenerateDomain(_) => PrStatus::DomainError,
            ParaError::InvalidInput(_) => PrStatus::InvalidArgument,
            _ => PrStatus::ComputationFailed,
        };
        Failure(status, e.to_string())
    }
}

impl From<PwlError> for Failure {
    fn from(e: PwlError) -> Self {
        let status = match e {
            PwlError::Function(_) | PwlError::OutOfDomain { .. } => PrStatus::DomainError,
            PwlError::InvalidInput(_) => PrStatus::InvalidArgument,
            _ => PrStatus::ComputationFailed,
        };
        Failure(status, e.to_string())
    }
}

impl From<ExprError> for Failure {
    fn from(e: ExprError) -> Self {
        Failure(PrStatus::ParseError, e.to_string())
    }
}

impl From<LutError> for Failure {
    fn from(e: LutError) -> Self {
        Failure(PrStatus::DomainError, e.to_string())
    }
}

impl From<pararelax::cli::CliError> for Failure {
    fn from(e: pararelax::cli::CliError) -> Self {
        let status = match e.exit_code() {
            pararelax::cli::EXIT_INPUT => PrStatus::InvalidArgument,
            _ => PrStatus::ComputationFailed,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `body`, records failures and converts panics.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            PrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PrStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(PrStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(PrStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(PrStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(PrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn interval(lo: f64, hi: f64) -> Result<Interval, Failure> {
    Interval::new(lo, hi).map_err(|e| Failure::new(PrStatus::InvalidArgument, e.to_string()))
}

fn side(s: PrSide) -> Side {
    match s {
        PrSide::Under => Side::Under,
        PrSide::Over => Side::Over,
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Functions

/// Creates a function from a name: `sin`, `cos`, `exp`, `ln`, `const0`,
/// optionally prefixed by `-`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_function_new(name: *const c_char, out: *mut *mut PrFunction) -> PrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let f = parse_function(c_str(name, "name")?)
            .map_err(|e| Failure::new(PrStatus::InvalidArgument, e.to_string()))?;
        *out = boxed(PrFunction(f));
        Ok(())
    })
}

/// Applies `x -> scale * x + shift` to the argument.
///
/// # Safety
/// `f` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_function_with_pre(f: *mut PrFunction, scale: f64, shift: f64) -> PrStatus {
    guard(|| {
        let f = out_ptr(f, "f")?;
        f.0 = f.0.with_pre(scale, shift);
        Ok(())
    })
}

/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_function_eval(f: *const PrFunction, x: f64, out: *mut f64) -> PrStatus {
    guard(|| {
        let f = handle(f, "f")?;
        *out_ptr(out, "out")? = f.0.evaluate(x)?;
        Ok(())
    })
}

/// # Safety
/// `f` must be NULL or a handle from [`pr_function_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_function_free(f: *mut PrFunction) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

// ---------------------------------------------------------------------------
// PARA approximations

/// Runs the outer loop on `[lo, hi]`. `lambda` is the shrink factor in (0, 1).
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_para_approximate(
    f: *const PrFunction,
    lo: f64,
    hi: f64,
    eps: f64,
    s: PrSide,
    lambda: f64,
    out: *mut *mut PrPara,
) -> PrStatus {
    guard(|| {
        let f = handle(f, "f")?;
        let out = out_ptr(out, "out")?;
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Failure::new(PrStatus::InvalidArgument, format!("lambda {lambda} outside (0, 1)")));
        }
        let a = para::approximate(&f.0, &interval(lo, hi)?, eps, side(s), lambda)?;
        *out = boxed(PrPara(a));
        Ok(())
    })
}

/// Uniform constructive approximation with Lipschitz bound `lipschitz`.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_para_construct(
    f: *const PrFunction,
    lo: f64,
    hi: f64,
    eps: f64,
    lipschitz: f64,
    out: *mut *mut PrPara,
) -> PrStatus {
    guard(|| {
        let f = handle(f, "f")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(PrPara(para::uniform_construct(&f.0, &interval(lo, hi)?, eps, lipschitz)?));
        Ok(())
    })
}

/// Number of parabolas.
///
/// # Safety
/// `a` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_para_len(a: *const PrPara) -> usize {
    a.as_ref().map_or(0, |a| a.0.len())
}

/// Coefficients `p(x) = a x^2 + b x + c` and the piece `[t_lo, t_hi]` of
/// parabola `index`. Any output pointer may be NULL.
///
/// # Safety
/// `approx` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_para_piece(
    approx: *const PrPara,
    index: usize,
    a: *mut f64,
    b: *mut f64,
    c: *mut f64,
    t_lo: *mut f64,
    t_hi: *mut f64,
) -> PrStatus {
    guard(|| {
        let approx = handle(approx, "approx")?;
        let piece = approx.0.pieces.get(index).ok_or_else(|| {
            Failure::new(PrStatus::OutOfRange, format!("piece {index} of {}", approx.0.len()))
        })?;
        for (p, v) in [
            (a, piece.parabola.a),
            (b, piece.parabola.b),
            (c, piece.parabola.c),
            (t_lo, piece.domain.lo),
            (t_hi, piece.domain.hi),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Envelope value (max of the parabolas under, min over).
///
/// # Safety
/// `approx` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_para_envelope(approx: *const PrPara, x: f64, out: *mut f64) -> PrStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(approx, "approx")?.0.envelope(x);
        Ok(())
    })
}

/// Sampled verification; `pass` receives 1 or 0, `worst_relative` the
/// largest violation relative to `1 + |f|`.
///
/// # Safety
/// `approx` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_para_verify(
    approx: *const PrPara,
    samples: usize,
    pass: *mut c_int,
    worst_relative: *mut f64,
) -> PrStatus {
    guard(|| {
        let approx = handle(approx, "approx")?;
        let r = para::verify(&approx.0, &approx.0.function, samples);
        *out_ptr(pass, "pass")? = c_int::from(r.pass);
        *out_ptr(worst_relative, "worst_relative")? = r.worst_relative;
        Ok(())
    })
}

/// # Safety
/// `a` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_para_free(a: *mut PrPara) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

// ---------------------------------------------------------------------------
// PWL relaxations

/// Shifted interpolant with `f - eps <= w <= f` on `[lo, hi]`.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_pwl_relax(f: *const PrFunction, lo: f64, hi: f64, eps: f64, out: *mut *mut PrPwl) -> PrStatus {
    guard(|| {
        let f = handle(f, "f")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(PrPwl(pwl::relax_shift(&f.0, &interval(lo, hi)?, eps)?));
        Ok(())
    })
}

/// Number of linear pieces.
///
/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_pwl_pieces(p: *const PrPwl) -> usize {
    p.as_ref().map_or(0, |p| p.0.pieces())
}

/// Breakpoint `index` (0..=pieces) and its shifted value.
///
/// # Safety
/// `p` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_pwl_breakpoint(p: *const PrPwl, index: usize, t: *mut f64, value: *mut f64) -> PrStatus {
    guard(|| {
        let p = handle(p, "p")?;
        let tk = *p.0.breakpoints.get(index).ok_or_else(|| {
            Failure::new(PrStatus::OutOfRange, format!("breakpoint {index} of {}", p.0.breakpoints.len()))
        })?;
        if let Some(t) = t.as_mut() {
            *t = tk;
        }
        if let Some(v) = value.as_mut() {
            *v = p.0.values[index] - p.0.shift;
        }
        Ok(())
    })
}

/// Value of the shifted interpolant.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_pwl_eval(p: *const PrPwl, x: f64, out: *mut f64) -> PrStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(p, "p")?.0.interpolate(x)?;
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_pwl_free(p: *mut PrPwl) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---------------------------------------------------------------------------
// Look-up-table rounding

/// Rounds `[lo, hi]` outward to the look-up-table grid of `name`
/// (`sin`, `cos`, `exp` or `ln`).
///
/// # Safety
/// `name` must be a NUL-terminated string; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_round_bounds(
    name: *const c_char,
    lo: f64,
    hi: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> PrStatus {
    guard(|| {
        let kind = c_str(name, "name")?
            .parse()
            .map_err(|e: FunctionError| Failure::new(PrStatus::InvalidArgument, e.to_string()))?;
        let r = lut::round_bounds(kind, &interval(lo, hi)?)?;
        *out_ptr(out_lo, "out_lo")? = r.lo;
        *out_ptr(out_hi, "out_hi")? = r.hi;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Problems and relaxed models

/// Parses and reformulates a JSON problem.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_problem_from_json(json: *const c_char, out: *mut *mut PrProblem) -> PrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let problem = ProblemEnvelope::from_json(c_str(json, "json")?)?.reformulate()?;
        *out = boxed(PrProblem(problem));
        Ok(())
    })
}

/// Number of univariate constraints after reformulation.
///
/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_problem_univariate_count(p: *const PrProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.univariate.len())
}

/// # Safety
/// `p` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_problem_free(p: *mut PrProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Builds the PARA or PWL relaxation of a problem.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_relax(
    problem: *const PrProblem,
    technique: PrTechnique,
    eps: f64,
    lambda: f64,
    out: *mut *mut PrModel,
) -> PrStatus {
    guard(|| {
        let problem = handle(problem, "problem")?;
        let out = out_ptr(out, "out")?;
        let t = match technique {
            PrTechnique::Para => Technique::Para,
            PrTechnique::Pwl => Technique::Pwl,
        };
        *out = boxed(PrModel(relax_problem(&problem.0, t, eps, lambda, None)?));
        Ok(())
    })
}

/// Variable, binary and row counts of a model. Any output may be NULL.
///
/// # Safety
/// `m` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_model_sizes(
    m: *const PrModel,
    variables: *mut usize,
    binaries: *mut usize,
    rows: *mut usize,
) -> PrStatus {
    guard(|| {
        let m = &handle(m, "m")?.0;
        let s = m.size_summary();
        for (p, v) in [(variables, m.variables.len()), (binaries, s.added_binaries), (rows, m.rows.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Serialises a model; free the result with [`pr_string_free`].
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_model_write(m: *const PrModel, format: PrFormat, out: *mut *mut c_char) -> PrStatus {
    guard(|| {
        let m = handle(m, "m")?;
        let out = out_ptr(out, "out")?;
        let fmt = match format {
            PrFormat::LpText => ModelFormat::LpText,
            PrFormat::Json => ModelFormat::Json,
        };
        let text = emit::write_model(&m.0, fmt);
        *out = CString::new(text)
            .map_err(|_| Failure::new(PrStatus::ComputationFailed, "model text contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_model_free(m: *mut PrModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
