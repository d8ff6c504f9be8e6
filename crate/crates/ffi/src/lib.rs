//! C interface to the kicked-rotor library.
//!
//! Objects are opaque handles created by `*_new`/constructor calls and
//! released with the matching `*_free`. Every fallible call returns a
//! [`QpkrStatus`]; on failure `qpkr_last_error()` describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qpkr::crit::{fit_critical, universality_report, CriticalFitConfig, NuEstimate, XiPoint};
use qpkr::engine::{run_ensemble, EnsembleConfig, GridConfig, ObservableSeries};
use qpkr::model::{kick_amplitude, ControlPoint, ParameterSet};
use qpkr::scaling::Branch;
use qpkr::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpkrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Range = 4,
    Degenerate = 5,
    NonConvergence = 6,
    GridOverflow = 7,
    Manifest = 8,
    Io = 9,
    Parse = 10,
    Panic = 11,
}

/// Observable columns of an ensemble series.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpkrColumn {
    P2 = 0,
    P2Err = 1,
    Pi0 = 2,
    Pi0Err = 3,
}

/// Opaque parameter set.
pub struct QpkrParams(ParameterSet);

/// Opaque ensemble-averaged series.
pub struct QpkrSeries(ObservableSeries);

/// Result of a critical fit `1/ξ = α|q − q_c|^ν + β`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QpkrCriticalFit {
    pub q_c: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub q_c_err: f64,
    pub nu_err: f64,
    pub chi2_per_dof: f64,
    pub n_points: usize,
}

/// Weighted mean of exponents.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QpkrWeightedMean {
    pub mean: f64,
    pub mean_err: f64,
    pub spread: f64,
    pub chi2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> QpkrStatus {
    match e {
        Error::Config(_) => QpkrStatus::Config,
        Error::Range(_) => QpkrStatus::Range,
        Error::GridOverflow { .. } => QpkrStatus::GridOverflow,
        Error::Degenerate(_) => QpkrStatus::Degenerate,
        Error::NonConvergence { .. } => QpkrStatus::NonConvergence,
        Error::Manifest(_) => QpkrStatus::Manifest,
        Error::Io { .. } => QpkrStatus::Io,
        Error::Parse(_) => QpkrStatus::Parse,
    }
}

struct Failure(QpkrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QpkrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(QpkrStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QpkrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            QpkrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QpkrStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qpkr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qpkr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in parameter set `A`..`I`.
///
/// # Safety
/// `label` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpkr_params_preset(
    label: *const c_char,
    out: *mut *mut QpkrParams,
) -> QpkrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ps = ParameterSet::preset(c_str(label, "label")?)?;
        *out = Box::into_raw(Box::new(QpkrParams(ps)));
        Ok(())
    })
}

/// Parameter set from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpkr_params_from_toml(
    text: *const c_char,
    out: *mut *mut QpkrParams,
) -> QpkrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ps = ParameterSet::from_toml(c_str(text, "text")?)?;
        *out = Box::into_raw(Box::new(QpkrParams(ps)));
        Ok(())
    })
}

/// # Safety
/// `params` must come from a constructor above, or be null.
#[no_mangle]
pub unsafe extern "C" fn qpkr_params_free(params: *mut QpkrParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpkr_params_set_kicks(
    params: *mut QpkrParams,
    n_kicks: usize,
) -> QpkrStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        if n_kicks == 0 {
            return Err(invalid("n_kicks must be at least 1"));
        }
        p.0.n_kicks = n_kicks;
        Ok(())
    })
}

/// Effective Planck constant of the set, NaN for a null handle.
///
/// # Safety
/// `params` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn qpkr_params_kbar(params: *const QpkrParams) -> f64 {
    params.as_ref().map_or(f64::NAN, |p| p.0.kbar)
}

/// Kick strength `K·[1 + ε cos(ω₂n + φ₂) cos(ω₃n + φ₃)]`.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpkr_kick_amplitude(
    params: *const QpkrParams,
    k: f64,
    eps: f64,
    n: u64,
    out: *mut f64,
) -> QpkrStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = kick_amplitude(&p.0, k, eps, n);
        Ok(())
    })
}

/// Ensemble run at one control point. `grid_m = 0` selects the default
/// lattice; `random_phases` is a boolean.
///
/// # Safety
/// `params` must be a live handle, `times` must hold `n_times` values and
/// `out` must be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qpkr_run_ensemble(
    params: *const QpkrParams,
    k: f64,
    eps: f64,
    times: *const usize,
    n_times: usize,
    n_realizations: usize,
    seed: u64,
    random_phases: c_int,
    grid_m: usize,
    out: *mut *mut QpkrSeries,
) -> QpkrStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let times = slice(times, n_times, "times")?;
        let mut cfg = EnsembleConfig::new(n_realizations, seed);
        cfg.random_phases = random_phases != 0;
        if grid_m > 0 {
            cfg.grid = GridConfig {
                max_m: grid_m,
                ..GridConfig::default()
            };
        }
        let obs = run_ensemble(&p.0, ControlPoint::new(k, eps), k, times, &cfg)?;
        *out = Box::into_raw(Box::new(QpkrSeries(obs)));
        Ok(())
    })
}

/// Number of recorded times, 0 for a null handle.
///
/// # Safety
/// `series` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn qpkr_series_len(series: *const QpkrSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.times.len())
}

/// Copy the recording times into `buf`, which must hold `len` values.
///
/// # Safety
/// `series` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn qpkr_series_times(
    series: *const QpkrSeries,
    buf: *mut usize,
    len: usize,
) -> QpkrStatus {
    guard(|| {
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        let src = &s.0.times;
        if len < src.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, {} needed",
                src.len()
            )));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Copy one observable column into `buf`, which must hold `len` values.
///
/// # Safety
/// `series` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn qpkr_series_column(
    series: *const QpkrSeries,
    column: QpkrColumn,
    buf: *mut f64,
    len: usize,
) -> QpkrStatus {
    guard(|| {
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        let src = match column {
            QpkrColumn::P2 => &s.0.p2,
            QpkrColumn::P2Err => &s.0.p2_err,
            QpkrColumn::Pi0 => &s.0.pi0,
            QpkrColumn::Pi0Err => &s.0.pi0_err,
        };
        if len < src.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, {} needed",
                src.len()
            )));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// # Safety
/// `series` must come from `qpkr_run_ensemble`, or be null.
#[no_mangle]
pub unsafe extern "C" fn qpkr_series_free(series: *mut QpkrSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Inverse-variance weighted mean of `n ≥ 2` exponents.
///
/// # Safety
/// `nu` and `sigma` must hold `n` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpkr_weighted_mean(
    nu: *const f64,
    sigma: *const f64,
    n: usize,
    out: *mut QpkrWeightedMean,
) -> QpkrStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let nu = slice(nu, n, "nu")?;
        let sigma = slice(sigma, n, "sigma")?;
        let fits: Vec<NuEstimate> = nu
            .iter()
            .zip(sigma)
            .enumerate()
            .map(|(i, (&nu, &sigma))| NuEstimate {
                label: i.to_string(),
                nu,
                sigma,
            })
            .collect();
        let r = universality_report(&fits)?;
        *out = QpkrWeightedMean {
            mean: r.mean,
            mean_err: r.mean_err,
            spread: r.spread,
            chi2: r.chi2,
        };
        Ok(())
    })
}

/// Fit the critical law to `n` points `(q, ξ, σ(ln ξ))`; `localized[i]`
/// is nonzero on the localized side. The search starts from `q_c0`.
///
/// # Safety
/// The four arrays must hold `n` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qpkr_fit_critical(
    q: *const f64,
    xi: *const f64,
    ln_xi_err: *const f64,
    localized: *const c_int,
    n: usize,
    q_c0: f64,
    out: *mut QpkrCriticalFit,
) -> QpkrStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (q, xi) = (slice(q, n, "q")?, slice(xi, n, "xi")?);
        let (err, loc) = (
            slice(ln_xi_err, n, "ln_xi_err")?,
            slice(localized, n, "localized")?,
        );
        let points: Vec<XiPoint> = (0..n)
            .map(|i| XiPoint {
                q: q[i],
                xi: xi[i],
                ln_xi_err: err[i],
                branch: if loc[i] != 0 {
                    Branch::Localized
                } else {
                    Branch::Diffusive
                },
                isolated: false,
            })
            .collect();
        let cfg = CriticalFitConfig {
            fit_diffusive_shift: false,
            ..Default::default()
        };
        let f = fit_critical(&points, q_c0, &cfg)?;
        *out = QpkrCriticalFit {
            q_c: f.q_c,
            nu: f.nu,
            alpha: f.alpha,
            beta: f.beta_cutoff,
            q_c_err: f.q_c_err,
            nu_err: f.nu_err,
            chi2_per_dof: f.chi2_per_dof,
            n_points: f.n_points,
        };
        Ok(())
    })
}
