//! C ABI over `ovb_iv`.
//!
//! Objects are opaque handles created by `ovb_*_new`/`ovb_*_from_*` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`OvbStatus`]; on failure [`ovb_last_error`] holds a message for the
//! calling thread. Strings returned by the library are released with
//! [`ovb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ovb_iv::crossfit::crossfit_median;
use ovb_iv::identify::theta_bounds;
use ovb_iv::inference::{bound_pair_stats, ci_report, one_sided_ci, BoundTarget, CiOptions};
use ovb_iv::learners::{LearnerKind, LearnerSpec};
use ovb_iv::model::{ThetaBounds, ThetaSet};
use ovb_iv::sensitivity::bound_set;
use ovb_iv::{Dataset, Error, SensitivityConfig, ShortEstimates};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Validation = 3,
    MissingColumn = 4,
    Numerical = 5,
    Solver = 6,
    Config = 7,
    Io = 8,
    Parse = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvbEstimand {
    Late = 0,
    Latt = 1,
    Plivm = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvbLearner {
    RandomForest = 0,
    Ridge = 1,
    SaturatedCells = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvbTarget {
    Lambda = 0,
    Gamma = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvbThetaSetKind {
    /// `[a, b]`.
    Interval = 0,
    /// `(-inf, a] U [b, inf)`.
    UnionOfRays = 1,
    WholeLine = 2,
    Undefined = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OvbFitOptions {
    pub estimand: OvbEstimand,
    pub learner: OvbLearner,
    pub k_folds: usize,
    /// Sample splits combined by the median method.
    pub reps: usize,
    pub seed: u64,
    /// Trees per forest; ignored by the other learners.
    pub trees: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OvbSensitivity {
    pub c_alpha: f64,
    pub c_y: f64,
    pub c_d: f64,
    pub rho_y: f64,
    pub rho_d: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OvbSummary {
    pub n: usize,
    pub lambda_s: f64,
    pub gamma_s: f64,
    /// NaN when `gamma_s` is zero.
    pub theta_s: f64,
    pub se_lambda: f64,
    pub se_gamma: f64,
    pub se_theta: f64,
    pub v_s2: f64,
    pub sigma_ys2: f64,
    pub sigma_ds2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OvbThetaSet {
    pub kind: OvbThetaSetKind,
    pub a: f64,
    pub b: f64,
    /// The gamma bounds contain zero.
    pub first_stage_failure: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OvbBounds {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub theta: OvbThetaSet,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OvbInterval {
    pub lo: f64,
    pub hi: f64,
}

/// Opaque dataset handle.
pub struct OvbDataset {
    inner: Dataset,
}

/// Opaque handle to short-version estimates.
pub struct OvbEstimates {
    inner: ShortEstimates,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OvbStatus {
    match e {
        Error::InvalidInput(_) | Error::BenchmarkUndefined(_) => OvbStatus::InvalidInput,
        Error::Validation(_) => OvbStatus::Validation,
        Error::MissingColumn(_) => OvbStatus::MissingColumn,
        Error::SingularSystem { .. } | Error::EmptyCell(_) | Error::WidthMismatch { .. } | Error::EmptyArm { .. } => {
            OvbStatus::Numerical
        }
        Error::Solver(_) => OvbStatus::Solver,
        Error::Config(_) => OvbStatus::Config,
        Error::Io(_) => OvbStatus::Io,
        Error::Csv(_) | Error::Json(_) => OvbStatus::Parse,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OvbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OvbStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            OvbStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            OvbStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidInput(format!("{what} is not valid UTF-8"))))
}

fn sensitivity(s: &OvbSensitivity) -> Result<SensitivityConfig, Fail> {
    Ok(SensitivityConfig::new(s.c_alpha, s.c_y, s.c_d, s.rho_y, s.rho_d)?)
}

fn theta_out(t: &ThetaBounds) -> OvbThetaSet {
    let (kind, a, b) = match t.set {
        ThetaSet::Interval { lo, hi } => (OvbThetaSetKind::Interval, lo, hi),
        ThetaSet::UnionOfRays { left_hi, right_lo } => (OvbThetaSetKind::UnionOfRays, left_hi, right_lo),
        ThetaSet::WholeLine => (OvbThetaSetKind::WholeLine, f64::NEG_INFINITY, f64::INFINITY),
        ThetaSet::Undefined => (OvbThetaSetKind::Undefined, f64::NAN, f64::NAN),
    };
    OvbThetaSet {
        kind,
        a,
        b,
        first_stage_failure: t.first_stage_failure,
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ovb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ovb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ovb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a CSV with columns `y`, `d`, `z` and covariates.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovb_dataset_from_csv(path: *const c_char, out: *mut *mut OvbDataset) -> OvbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ds = Dataset::from_csv_path(c_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(OvbDataset { inner: ds }));
        Ok(())
    })
}

/// Builds a dataset from arrays; `x` is row-major `n x p`, covariates are
/// named `x1..xp`.
///
/// # Safety
/// `y`, `d`, `z` must point to `n` values, `x` to `n * p` values (or be
/// NULL when `p == 0`), and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ovb_dataset_new(
    n: usize,
    p: usize,
    y: *const f64,
    d: *const f64,
    z: *const f64,
    x: *const f64,
    out: *mut *mut OvbDataset,
) -> OvbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if y.is_null() || d.is_null() || z.is_null() {
            return Err(Fail::Null("y, d and z"));
        }
        if p > 0 && x.is_null() {
            return Err(Fail::Null("x"));
        }
        let col = |ptr: *const f64| std::slice::from_raw_parts(ptr, n).to_vec();
        let xs = if p > 0 { std::slice::from_raw_parts(x, n * p) } else { &[] };
        let xm = nalgebra::DMatrix::from_row_slice(n, p, xs);
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let ds = Dataset::new(col(y), col(d), col(z), xm, names)?;
        *out = Box::into_raw(Box::new(OvbDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ovb_dataset_free(ds: *mut OvbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ovb_dataset_rows(ds: *const OvbDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

#[no_mangle]
pub extern "C" fn ovb_fit_options_default() -> OvbFitOptions {
    OvbFitOptions {
        estimand: OvbEstimand::Late,
        learner: OvbLearner::RandomForest,
        k_folds: ovb_iv::crossfit::DEFAULT_FOLDS,
        reps: ovb_iv::crossfit::DEFAULT_REPS,
        seed: 0,
        trees: LearnerSpec::default().trees,
    }
}

/// Cross-fitted short estimates.
///
/// # Safety
/// `ds`, `opts` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ovb_estimate(
    ds: *const OvbDataset,
    opts: *const OvbFitOptions,
    out: *mut *mut OvbEstimates,
) -> OvbStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let o = deref(opts, "options")?;
        let out = out_ref(out, "out")?;
        let estimand = match o.estimand {
            OvbEstimand::Late => ovb_iv::Estimand::Late,
            OvbEstimand::Latt => ovb_iv::Estimand::Latt,
            OvbEstimand::Plivm => ovb_iv::Estimand::Plivm,
        };
        let spec = LearnerSpec {
            kind: match o.learner {
                OvbLearner::RandomForest => LearnerKind::RandomForest,
                OvbLearner::Ridge => LearnerKind::Ridge,
                OvbLearner::SaturatedCells => LearnerKind::SaturatedCells,
            },
            trees: o.trees,
            ..LearnerSpec::default()
        };
        let res = crossfit_median(&ds.inner, estimand, &spec, o.k_folds, o.reps, o.seed)?;
        *out = Box::into_raw(Box::new(OvbEstimates { inner: res.estimates }));
        Ok(())
    })
}

/// # Safety
/// `est` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ovb_estimates_free(est: *mut OvbEstimates) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// # Safety
/// `est` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ovb_estimates_summary(est: *const OvbEstimates, out: *mut OvbSummary) -> OvbStatus {
    guard(|| {
        let e = &deref(est, "estimates")?.inner;
        *out_ref(out, "out")? = OvbSummary {
            n: e.n,
            lambda_s: e.lambda_s,
            gamma_s: e.gamma_s,
            theta_s: e.theta_s.unwrap_or(f64::NAN),
            se_lambda: e.se_lambda(),
            se_gamma: e.se_gamma(),
            se_theta: e.se_theta().unwrap_or(f64::NAN),
            v_s2: e.v_s2,
            sigma_ys2: e.sigma_ys2,
            sigma_ds2: e.sigma_ds2,
        };
        Ok(())
    })
}

/// Serializes the estimates (without per-observation scores) to JSON.
///
/// # Safety
/// `est` and `out` must be valid; free `*out` with [`ovb_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ovb_estimates_to_json(est: *const OvbEstimates, out: *mut *mut c_char) -> OvbStatus {
    guard(|| {
        let e = &deref(est, "estimates")?.inner;
        let out = out_ref(out, "out")?;
        let mut lean = e.clone();
        lean.scores.clear();
        let text = serde_json::to_string(&lean).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovb_estimates_from_json(json: *const c_char, out: *mut *mut OvbEstimates) -> OvbStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let out = out_ref(out, "out")?;
        let e: ShortEstimates = serde_json::from_str(text).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(OvbEstimates { inner: e }));
        Ok(())
    })
}

/// Bounds on lambda, gamma and the identified set for theta.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ovb_bounds(
    est: *const OvbEstimates,
    sens: *const OvbSensitivity,
    out: *mut OvbBounds,
) -> OvbStatus {
    guard(|| {
        let e = &deref(est, "estimates")?.inner;
        let cfg = sensitivity(deref(sens, "sensitivity")?)?;
        let b = bound_set(e, &cfg);
        *out_ref(out, "out")? = OvbBounds {
            lambda_lo: b.lambda_lo,
            lambda_hi: b.lambda_hi,
            gamma_lo: b.gamma_lo,
            gamma_hi: b.gamma_hi,
            theta: theta_out(&b.theta),
        };
        Ok(())
    })
}

/// Identified set for theta from literal bounds on lambda and gamma.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ovb_theta_set(
    lambda_lo: f64,
    lambda_hi: f64,
    gamma_lo: f64,
    gamma_hi: f64,
    out: *mut OvbThetaSet,
) -> OvbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if !(lambda_lo <= lambda_hi && gamma_lo <= gamma_hi) {
            return Err(Error::InvalidInput("bounds must be ordered and not NaN".into()).into());
        }
        *out = theta_out(&theta_bounds(lambda_lo, lambda_hi, gamma_lo, gamma_hi));
        Ok(())
    })
}

/// `[lower_tau, upper_{1-tau}]` CI for the lambda or gamma bounds.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ovb_bound_ci(
    est: *const OvbEstimates,
    sens: *const OvbSensitivity,
    target: OvbTarget,
    tau: f64,
    out: *mut OvbInterval,
) -> OvbStatus {
    guard(|| {
        let e = &deref(est, "estimates")?.inner;
        let cfg = sensitivity(deref(sens, "sensitivity")?)?;
        let out = out_ref(out, "out")?;
        let t = match target {
            OvbTarget::Lambda => BoundTarget::Lambda,
            OvbTarget::Gamma => BoundTarget::Gamma,
        };
        let s = bound_pair_stats(e, &cfg, t)?;
        let ci = one_sided_ci(s.point_lo, s.point_hi, s.se_lo, s.se_hi, tau)?;
        *out = OvbInterval { lo: ci.lo, hi: ci.hi };
        Ok(())
    })
}

/// Full CI report (bound CIs, inverted theta CI, conventional CIs,
/// shrinkage CIs and the phi curve) as JSON.
///
/// # Safety
/// All pointers must be valid; free `*out` with [`ovb_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ovb_ci_report_json(
    est: *const OvbEstimates,
    sens: *const OvbSensitivity,
    tau: f64,
    stoye_tau: f64,
    out: *mut *mut c_char,
) -> OvbStatus {
    guard(|| {
        let e = &deref(est, "estimates")?.inner;
        let cfg = sensitivity(deref(sens, "sensitivity")?)?;
        let out = out_ref(out, "out")?;
        let opts = CiOptions {
            tau,
            stoye_tau,
            ..CiOptions::default()
        };
        let report = ci_report(e, &cfg, &opts)?;
        let text = serde_json::to_string(&report).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}
