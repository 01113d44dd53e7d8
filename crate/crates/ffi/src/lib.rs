//! C interface to the threshold classifier.
//!
//! Every function returns an [`EpStatus`]. On failure the message is kept
//! per thread and read back with [`ep_last_error_message`]. Panics never
//! cross the boundary; they surface as [`EpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ep_critical::model::{radial_to_characteristic, CharData, ModelParams, RadialProfile, Reason, Verdict};
use ep_critical::threshold::{ClassificationReport, Classifier, MarginPolicy};
use ep_critical::EpError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    /// Bad profile, radius or point.
    InvalidInput = 3,
    /// Quadrature, root finding, integration or envelope failure.
    Numerical = 4,
    Config = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpVerdict {
    Global = 0,
    Breakdown = 1,
    Marginal = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpReason {
    ZeroDensity = 0,
    RhoZeroGlobalBranch = 1,
    Equilibrium = 2,
    AZeroSignCondition = 3,
    KappaOutsideWindow = 4,
    NonnegativeA = 5,
    EnvelopeContainment = 6,
    EnvelopeViolation = 7,
}

/// One classified characteristic. Absent quantities are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EpResult {
    pub verdict: EpVerdict,
    pub reason: EpReason,
    pub margin: f64,
    pub tc_estimate: f64,
    pub a0: f64,
    pub kappa: f64,
}

/// Opaque model parameters.
pub struct EpParams(ModelParams);

/// Opaque configured classifier.
pub struct EpClassifier(Classifier);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &EpError) -> EpStatus {
    match e {
        EpError::InvalidParams(_) => EpStatus::InvalidParams,
        EpError::InvalidProfile(_) | EpError::RadiusOutOfRange { .. } | EpError::Domain(_) | EpError::ZeroDensity(_) => {
            EpStatus::InvalidInput
        }
        EpError::QuadratureTolerance { .. } | EpError::Root(_) | EpError::Integration(_) | EpError::Envelope(_) => {
            EpStatus::Numerical
        }
        EpError::Config(_) | EpError::Io(_) => EpStatus::Config,
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (EpStatus, String)>) -> EpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            EpStatus::Panic
        }
    }
}

fn lift<T>(r: ep_critical::Result<T>) -> Result<T, (EpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (EpStatus, String) {
    (EpStatus::NullPointer, format!("{what} is null"))
}

fn verdict(v: Verdict) -> EpVerdict {
    match v {
        Verdict::Global => EpVerdict::Global,
        Verdict::Breakdown => EpVerdict::Breakdown,
        Verdict::Marginal => EpVerdict::Marginal,
    }
}

fn reason(r: Reason) -> EpReason {
    match r {
        Reason::ZeroDensity => EpReason::ZeroDensity,
        Reason::RhoZeroGlobalBranch => EpReason::RhoZeroGlobalBranch,
        Reason::Equilibrium => EpReason::Equilibrium,
        Reason::AZeroSignCondition => EpReason::AZeroSignCondition,
        Reason::KappaOutsideWindow => EpReason::KappaOutsideWindow,
        Reason::NonnegativeA => EpReason::NonnegativeA,
        Reason::EnvelopeContainment => EpReason::EnvelopeContainment,
        Reason::EnvelopeViolation => EpReason::EnvelopeViolation,
    }
}

fn run_one(c: &Classifier, d: &CharData) -> Result<EpResult, (EpStatus, String)> {
    let a = lift(c.assess(d))?;
    let rep = ClassificationReport::new(d, &a);
    Ok(EpResult {
        verdict: verdict(rep.verdict),
        reason: reason(rep.reason),
        margin: rep.margin,
        tc_estimate: rep.tc_estimate.unwrap_or(f64::NAN),
        a0: rep.a0.unwrap_or(f64::NAN),
        kappa: rep.kappa.unwrap_or(f64::NAN),
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Validates `(k, c, n)` and writes a new handle to `out`.
///
/// # Safety
/// `out` must be null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ep_params_new(k: f64, c: f64, n: u32, out: *mut *mut EpParams) -> EpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = lift(ModelParams::new(k, c, n))?;
        *out = Box::into_raw(Box::new(EpParams(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`ep_params_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ep_params_free(p: *mut EpParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Classifier for `params` with Marginal band `margin` (relative). Critical
/// time estimates are skipped when `estimate_tc` is false.
///
/// # Safety
/// `params` must be a live handle; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ep_classifier_new(
    params: *const EpParams,
    margin: f64,
    estimate_tc: bool,
    out: *mut *mut EpClassifier,
) -> EpStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = lift(MarginPolicy::new(margin))?;
        let mut c = Classifier::new(params.0).with_margin(m);
        if !estimate_tc {
            c = c.without_tc();
        }
        *out = Box::into_raw(Box::new(EpClassifier(c)));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle from [`ep_classifier_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ep_classifier_free(c: *mut EpClassifier) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Classifies the characteristic through radius `r` with `u0`, `phi0r`,
/// `u0r` and `rho0` given there.
///
/// # Safety
/// `c` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ep_classify_point(
    c: *const EpClassifier,
    r: f64,
    u0: f64,
    phi0r: f64,
    u0r: f64,
    rho0: f64,
    out: *mut EpResult,
) -> EpStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("classifier"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = lift(CharData::from_point(r, u0, phi0r, u0r, rho0, &c.0.params))?;
        *out = run_one(&c.0, &d)?;
        Ok(())
    })
}

/// Classifies a sampled radial profile `(r, rho0, u0)` of `len` rows at the
/// `n_radii` radii in `radii`, writing `n_radii` results to `out`.
///
/// # Safety
/// `r`, `rho0`, `u0` must point to `len` doubles, `radii` to `n_radii`
/// doubles and `out` to room for `n_radii` results.
#[no_mangle]
pub unsafe extern "C" fn ep_classify_profile(
    c: *const EpClassifier,
    r: *const f64,
    rho0: *const f64,
    u0: *const f64,
    len: usize,
    radii: *const f64,
    n_radii: usize,
    out: *mut EpResult,
) -> EpStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("classifier"))?;
        for (p, what) in [(r, "r"), (rho0, "rho0"), (u0, "u0"), (radii, "radii")] {
            if p.is_null() {
                return Err(null(what));
            }
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let slice = |p: *const f64, n| std::slice::from_raw_parts(p, n).to_vec();
        let prof = lift(RadialProfile::new(slice(r, len), slice(rho0, len), slice(u0, len)))?;
        let betas = std::slice::from_raw_parts(radii, n_radii);
        let results = std::slice::from_raw_parts_mut(out, n_radii);
        for (slot, &beta) in results.iter_mut().zip(betas) {
            let d = lift(radial_to_characteristic(&prof, beta, &c.0.params))?;
            *slot = run_one(&c.0, &d)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_distinct_statuses() {
        assert_eq!(status_of(&EpError::InvalidParams(String::new())), EpStatus::InvalidParams);
        assert_eq!(status_of(&EpError::Root(String::new())), EpStatus::Numerical);
        assert_eq!(status_of(&EpError::RadiusOutOfRange { beta: 0.0, min: 1.0, max: 2.0 }), EpStatus::InvalidInput);
    }

    #[test]
    fn panics_become_a_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, EpStatus::Panic);
        let msg = unsafe { std::ffi::CStr::from_ptr(ep_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }
}
