//! C ABI for the seagle variance-component test.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns a
//! [`SeagleStatus`]; on failure `seagle_last_error_message` describes the
//! error for the calling thread. Matrices are column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use seagle::pvalue::{self, PvalueMethod, PvalueOptions, PvalueSource, WeightedChiSq};
use seagle::reml::EmConfig;
use seagle::vctest::{run_test, TestInput, VcTestResult};
use seagle::SeagleError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeagleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    RankDeficient = 4,
    NotPositiveDefinite = 5,
    NumericalFailure = 6,
    Panic = 7,
    Other = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeaglePvalueSource {
    Davies = 0,
    Liu = 1,
    Degenerate = 2,
}

/// Which p-values to compute: 0 Davies, 1 Liu, 2 both.
pub const SEAGLE_METHOD_DAVIES: i32 = 0;
pub const SEAGLE_METHOD_LIU: i32 = 1;
pub const SEAGLE_METHOD_BOTH: i32 = 2;

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SeagleConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub floor: f64,
    pub method: i32,
    pub davies_acc: f64,
    pub davies_lim: usize,
}

/// Validated test input (phenotype, design, environment column, genotypes).
pub struct SeagleInput(TestInput);

/// Outcome of one test.
pub struct SeagleResult(VcTestResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &SeagleError) -> SeagleStatus {
    match err {
        SeagleError::ParameterDomain { .. } | SeagleError::Config(_) => {
            SeagleStatus::InvalidArgument
        }
        SeagleError::Shape { .. } => SeagleStatus::ShapeMismatch,
        SeagleError::RankDeficient { .. } => SeagleStatus::RankDeficient,
        SeagleError::Conditioning { .. } => SeagleStatus::NotPositiveDefinite,
        SeagleError::Numerical { .. } => SeagleStatus::NumericalFailure,
        _ => SeagleStatus::Other,
    }
}

/// Run `f`, converting errors and panics into a status plus message.
fn guarded<F: FnOnce() -> Result<(), (SeagleStatus, String)>>(f: F) -> SeagleStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SeagleStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SeagleStatus::Panic
        }
    }
}

fn lift(e: SeagleError) -> (SeagleStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SeagleStatus, String) {
    (SeagleStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(
    p: *const f64,
    len: usize,
    what: &str,
) -> Result<&'a [f64], (SeagleStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn checked_len(a: usize, b: usize) -> Result<usize, (SeagleStatus, String)> {
    a.checked_mul(b).ok_or_else(|| {
        (
            SeagleStatus::InvalidArgument,
            "matrix size overflows".to_string(),
        )
    })
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next seagle call on the same thread.
#[no_mangle]
pub extern "C" fn seagle_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn seagle_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn seagle_config_default() -> SeagleConfig {
    let em = EmConfig::default();
    let pv = PvalueOptions::default();
    SeagleConfig {
        rel_tol: em.rel_tol,
        max_iter: em.max_iter,
        floor: em.floor,
        method: SEAGLE_METHOD_BOTH,
        davies_acc: pv.davies_acc,
        davies_lim: pv.davies_lim,
    }
}

/// Copy and validate a test input. `x` is `n x p` and `g` is `n x l`, both
/// column-major; `env_col` indexes the environment column of `x`.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seagle_input_new(
    y: *const f64,
    n: usize,
    x: *const f64,
    p: usize,
    env_col: usize,
    g: *const f64,
    l: usize,
    out: *mut *mut SeagleInput,
) -> SeagleStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let y = slice(y, n, "y")?;
        let x = slice(x, checked_len(n, p)?, "x")?;
        let g = slice(g, checked_len(n, l)?, "g")?;
        let input = TestInput::new(
            DVector::from_column_slice(y),
            DMatrix::from_column_slice(n, p, x),
            env_col,
            DMatrix::from_column_slice(n, l, g),
        )
        .map_err(lift)?;
        *out = Box::into_raw(Box::new(SeagleInput(input)));
        Ok(())
    })
}

/// # Safety
/// `input` must come from `seagle_input_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn seagle_input_free(input: *mut SeagleInput) {
    if !input.is_null() {
        drop(Box::from_raw(input));
    }
}

fn options(cfg: &SeagleConfig) -> Result<(EmConfig, PvalueOptions), (SeagleStatus, String)> {
    let method = match cfg.method {
        SEAGLE_METHOD_DAVIES => PvalueMethod::Davies,
        SEAGLE_METHOD_LIU => PvalueMethod::Liu,
        SEAGLE_METHOD_BOTH => PvalueMethod::Both,
        m => {
            return Err((
                SeagleStatus::InvalidArgument,
                format!("unknown p-value method {m}"),
            ))
        }
    };
    let em = EmConfig {
        rel_tol: cfg.rel_tol,
        max_iter: cfg.max_iter,
        floor: cfg.floor,
        ..EmConfig::default()
    };
    em.validate().map_err(lift)?;
    Ok((
        em,
        PvalueOptions {
            method,
            davies_acc: cfg.davies_acc,
            davies_lim: cfg.davies_lim,
        },
    ))
}

/// Fit the null model and run the interaction test. A null `config` means
/// defaults.
///
/// # Safety
/// `input` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seagle_run_test(
    input: *const SeagleInput,
    config: *const SeagleConfig,
    out: *mut *mut SeagleResult,
) -> SeagleStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let input = input.as_ref().ok_or_else(|| null("input"))?;
        let cfg = config
            .as_ref()
            .copied()
            .unwrap_or_else(|| seagle_config_default());
        let (em, pv) = options(&cfg)?;
        let res = run_test(&input.0, &em, &pv).map_err(lift)?;
        *out = Box::into_raw(Box::new(SeagleResult(res)));
        Ok(())
    })
}

/// # Safety
/// `result` must come from `seagle_run_test` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_free(result: *mut SeagleResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

unsafe fn with_result<T>(
    r: *const SeagleResult,
    missing: T,
    f: impl FnOnce(&VcTestResult) -> T,
) -> T {
    match r.as_ref() {
        Some(r) => f(&r.0),
        None => missing,
    }
}

/// Test statistic `T`; NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_statistic(result: *const SeagleResult) -> f64 {
    with_result(result, f64::NAN, |r| r.statistic)
}

/// Headline p-value (Davies, else Liu, 1 if degenerate).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_p_value(result: *const SeagleResult) -> f64 {
    with_result(result, f64::NAN, |r| r.p_value)
}

/// Davies p-value, NaN if not computed or failed.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_p_davies(result: *const SeagleResult) -> f64 {
    with_result(result, f64::NAN, |r| r.p_davies.unwrap_or(f64::NAN))
}

/// Liu p-value, NaN if not computed.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_p_liu(result: *const SeagleResult) -> f64 {
    with_result(result, f64::NAN, |r| r.p_liu.unwrap_or(f64::NAN))
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_p_source(result: *const SeagleResult) -> SeaglePvalueSource {
    with_result(result, SeaglePvalueSource::Degenerate, |r| {
        match r.p_source {
            PvalueSource::Davies => SeaglePvalueSource::Davies,
            PvalueSource::Liu => SeaglePvalueSource::Liu,
            PvalueSource::Degenerate => SeaglePvalueSource::Degenerate,
        }
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_tau_hat(result: *const SeagleResult) -> f64 {
    with_result(result, f64::NAN, |r| r.tau_hat)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_sigma_hat(result: *const SeagleResult) -> f64 {
    with_result(result, f64::NAN, |r| r.sigma_hat)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_em_iterations(result: *const SeagleResult) -> usize {
    with_result(result, 0, |r| r.n_iter)
}

/// 1 if EM converged, 0 otherwise.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_converged(result: *const SeagleResult) -> i32 {
    with_result(result, 0, |r| r.converged as i32)
}

/// Number of retained eigenvalue weights.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_num_lambdas(result: *const SeagleResult) -> usize {
    with_result(result, 0, |r| r.lambdas.len())
}

/// Copy the weights (nonincreasing) into `buf`, which must hold at least
/// `seagle_result_num_lambdas` values.
///
/// # Safety
/// `result` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn seagle_result_lambdas(
    result: *const SeagleResult,
    buf: *mut f64,
    len: usize,
) -> SeagleStatus {
    guarded(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let lambdas = &r.0.lambdas;
        if len < lambdas.len() {
            return Err((
                SeagleStatus::ShapeMismatch,
                format!("buffer holds {len} values, need {}", lambdas.len()),
            ));
        }
        if !lambdas.is_empty() {
            if buf.is_null() {
                return Err(null("buf"));
            }
            std::slice::from_raw_parts_mut(buf, lambdas.len()).copy_from_slice(lambdas);
        }
        Ok(())
    })
}

unsafe fn weights(lambdas: *const f64, k: usize) -> Result<WeightedChiSq, (SeagleStatus, String)> {
    WeightedChiSq::new(slice(lambdas, k, "lambdas")?.to_vec()).map_err(lift)
}

/// `P(Q > q)` for `Q = sum lambda_j chi2_1` by Davies' method. `status_out`,
/// if non-null, receives the integration status code (0 = ok).
///
/// # Safety
/// `lambdas` must hold `k` values; `p_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seagle_pvalue_davies(
    q: f64,
    lambdas: *const f64,
    k: usize,
    acc: f64,
    lim: usize,
    p_out: *mut f64,
    status_out: *mut i32,
) -> SeagleStatus {
    guarded(|| {
        let p_out = p_out.as_mut().ok_or_else(|| null("p_out"))?;
        let d = pvalue::pvalue_davies(q, &weights(lambdas, k)?, acc, lim).map_err(lift)?;
        *p_out = d.p;
        if let Some(s) = status_out.as_mut() {
            *s = d.status.code();
        }
        Ok(())
    })
}

/// `P(Q > q)` by Liu's moment-matching approximation.
///
/// # Safety
/// `lambdas` must hold `k` values; `p_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seagle_pvalue_liu(
    q: f64,
    lambdas: *const f64,
    k: usize,
    p_out: *mut f64,
) -> SeagleStatus {
    guarded(|| {
        let p_out = p_out.as_mut().ok_or_else(|| null("p_out"))?;
        *p_out = pvalue::pvalue_liu(q, &weights(lambdas, k)?).map_err(lift)?;
        Ok(())
    })
}
