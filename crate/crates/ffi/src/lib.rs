//! C ABI for `bmimap`.
//!
//! Every fallible function returns a [`BmimapStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be read with [`bmimap_last_error_message`]. Charts are opaque handles
//! created by `bmimap_chart_*` and released with [`bmimap_chart_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};

use bmimap::analytical::{self, DEFAULT_MAX_ITER, DEFAULT_TOL};
use bmimap::charts::{self, LmsChart, Sex};
use bmimap::optimizer::{self, OptimConfig};
use bmimap::sampler::{self, AgeKind, Demographics, MappedAggregate, RngSeed};
use bmimap::trialdata::AggregateOutcome;
use bmimap::{transforms, Error, PercentileMoments, Scale};

/// Result code of every fallible call. `BMIMAP_STATUS_OK` is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmimapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Domain = 4,
    Boundary = 5,
    Infeasible = 6,
    NonConvergence = 7,
    Range = 8,
    Sampling = 9,
    InvalidBase = 10,
    StepRejected = 11,
    UnknownChart = 12,
    Io = 13,
    Parse = 14,
    Panic = 99,
}

impl From<&Error> for BmimapStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => BmimapStatus::Domain,
            Error::Boundary(_) => BmimapStatus::Boundary,
            Error::Infeasible(_) => BmimapStatus::Infeasible,
            Error::NonConvergence { .. } => BmimapStatus::NonConvergence,
            Error::Parse { .. } => BmimapStatus::Parse,
            Error::Range { .. } => BmimapStatus::Range,
            Error::Sampling(_) => BmimapStatus::Sampling,
            Error::Validation(_) => BmimapStatus::Validation,
            Error::InvalidBase { .. } => BmimapStatus::InvalidBase,
            Error::StepRejected(_) => BmimapStatus::StepRejected,
            Error::UnknownChart(_) => BmimapStatus::UnknownChart,
            Error::Io(_) => BmimapStatus::Io,
        }
    }
}

/// Opaque reference chart.
pub struct BmimapChart(LmsChart);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmimapLms {
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// A normal zBMI distribution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmimapZDist {
    pub m_z: f64,
    pub s_z: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmimapDemographics {
    pub mean_age_months: f64,
    pub sd_age_months: f64,
    /// Proportion of males in `[0, 1]`.
    pub prop_male: f64,
}

/// Age distribution of sampled participants, passed as `int32_t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmimapAgeKind {
    Normal = 0,
    Uniform = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmimapOptimConfig {
    pub delta_step: f64,
    pub delta_tol: f64,
    pub n_max: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Mapped zBMI aggregate.
///
/// `mean`/`sd` are sample estimates. For the optimization method
/// `has_distribution` is true and `dist_mean`/`dist_sd` hold the fitted
/// distribution; otherwise they are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmimapMapped {
    pub mean: f64,
    pub sd: f64,
    pub n_samples: usize,
    pub converged: bool,
    pub iterations: usize,
    pub has_distribution: bool,
    pub dist_mean: f64,
    pub dist_sd: f64,
    /// NaN when the method does not truncate.
    pub truncated_fraction: f64,
    pub oscillating: bool,
}

impl From<MappedAggregate> for BmimapMapped {
    fn from(m: MappedAggregate) -> Self {
        BmimapMapped {
            mean: m.mean,
            sd: m.sd,
            n_samples: m.n_samples,
            converged: m.converged,
            iterations: m.iterations,
            has_distribution: m.dist_mean.is_some(),
            dist_mean: m.dist_mean.unwrap_or(f64::NAN),
            dist_sd: m.dist_sd.unwrap_or(f64::NAN),
            truncated_fraction: m.truncated_fraction.unwrap_or(f64::NAN),
            oscillating: m.oscillating,
        }
    }
}

impl From<BmimapOptimConfig> for OptimConfig {
    fn from(c: BmimapOptimConfig) -> Self {
        OptimConfig {
            delta_step: c.delta_step,
            delta_tol: c.delta_tol,
            n_max: c.n_max,
            n_samples: c.n_samples,
            seed: RngSeed(c.seed),
        }
    }
}

impl From<OptimConfig> for BmimapOptimConfig {
    fn from(c: OptimConfig) -> Self {
        BmimapOptimConfig {
            delta_step: c.delta_step,
            delta_tol: c.delta_tol,
            n_max: c.n_max,
            n_samples: c.n_samples,
            seed: c.seed.0,
        }
    }
}

fn parse_age_kind(k: i32) -> Result<AgeKind, Failure> {
    match k {
        k if k == BmimapAgeKind::Normal as i32 => Ok(AgeKind::Normal),
        k if k == BmimapAgeKind::Uniform as i32 => Ok(AgeKind::Uniform),
        other => Err(Error::Validation(format!("unknown age kind {other}")).into()),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Internal failure: a status plus its message.
struct Failure(BmimapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BmimapStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BmimapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BmimapStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            BmimapStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BmimapStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn chart_arg<'a>(p: *const BmimapChart) -> Result<&'a LmsChart, Failure> {
    p.as_ref().map(|c| &c.0).ok_or_else(|| null("chart"))
}

fn demographics(d: &BmimapDemographics, chart: &LmsChart) -> Result<Demographics, Failure> {
    Ok(Demographics::new(d.mean_age_months, d.sd_age_months, d.prop_male, chart.id())?)
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bmimap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bmimap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a handle to a bundled chart (`"cdc"` or `"who"`).
///
/// # Safety
/// `id` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_chart_bundled(id: *const c_char, out: *mut *mut BmimapChart) -> BmimapStatus {
    guard(|| {
        let id = str_arg(id, "id")?;
        let out = out_arg(out, "out")?;
        let chart = charts::bundled_chart(id).ok_or_else(|| Error::UnknownChart(id.to_string()))?;
        *out = Box::into_raw(Box::new(BmimapChart(chart)));
        Ok(())
    })
}

/// Loads and validates a chart CSV (`sex,age_months,lambda,mu,sigma`).
///
/// # Safety
/// `path` and `id` must be NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_chart_load_csv(
    path: *const c_char,
    id: *const c_char,
    out: *mut *mut BmimapChart,
) -> BmimapStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let id = str_arg(id, "id")?;
        let out = out_arg(out, "out")?;
        let file = File::open(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
        let chart = charts::load_chart(file, id)?;
        *out = Box::into_raw(Box::new(BmimapChart(chart)));
        Ok(())
    })
}

/// Releases a chart handle. NULL is ignored.
///
/// # Safety
/// `chart` must come from a `bmimap_chart_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bmimap_chart_free(chart: *mut BmimapChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

/// LMS parameters at `age_months` for `male` (true) or female.
///
/// # Safety
/// `chart` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_chart_lookup(
    chart: *const BmimapChart,
    age_months: f64,
    male: bool,
    out: *mut BmimapLms,
) -> BmimapStatus {
    guard(|| {
        let chart = chart_arg(chart)?;
        let out = out_arg(out, "out")?;
        let sex = if male { Sex::Male } else { Sex::Female };
        let p = chart.lookup(age_months, sex)?;
        *out = BmimapLms {
            lambda: p.lambda,
            mu: p.mu,
            sigma: p.sigma,
        };
        Ok(())
    })
}

/// Smallest z bound `-1/(lambda*sigma)` over the chart.
///
/// # Safety
/// `chart` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_chart_min_z_bound(chart: *const BmimapChart, out: *mut f64) -> BmimapStatus {
    guard(|| {
        let chart = chart_arg(chart)?;
        let out = out_arg(out, "out")?;
        *out = charts::min_z_bound(chart)?.bound;
        Ok(())
    })
}

/// zBMI of one BMI value.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_z_from_bmi(bmi: f64, lms: BmimapLms, out: *mut f64) -> BmimapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = transforms::z_from_bmi(bmi, lms.lambda, lms.mu, lms.sigma)?;
        Ok(())
    })
}

/// BMI of one zBMI value; fails with `InvalidBase` beyond the LMS bound.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_bmi_from_z(z: f64, lms: BmimapLms, out: *mut f64) -> BmimapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = transforms::bmi_from_z(z, lms.lambda, lms.mu, lms.sigma)?;
        Ok(())
    })
}

/// Caps `z` at 99% of the LMS bound when `lambda < 0`.
#[no_mangle]
pub extern "C" fn bmimap_truncate_z(z: f64, lms: BmimapLms) -> f64 {
    optimizer::truncate_z(z, lms.lambda, lms.sigma)
}

#[no_mangle]
pub extern "C" fn bmimap_optim_config_percentile_default(seed: u64) -> BmimapOptimConfig {
    OptimConfig::percentile_default(RngSeed(seed)).into()
}

#[no_mangle]
pub extern "C" fn bmimap_optim_config_bmi_default(seed: u64) -> BmimapOptimConfig {
    OptimConfig::bmi_default(RngSeed(seed)).into()
}

/// Closed-form mapping of percentile (mean, SD) on `[0, 1]` to zBMI.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_map_percentile_analytical(mean: f64, sd: f64, out: *mut BmimapZDist) -> BmimapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let obs = PercentileMoments::new(mean, sd)?;
        let (d, _) = analytical::map_percentile_to_z_analytical(&obs, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        *out = BmimapZDist { m_z: d.m_z, s_z: d.s_z };
        Ok(())
    })
}

/// Sampling mapping of percentile (mean, SD) on `[0, 1]` with `n` draws.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmimap_map_percentile_sampling(
    mean: f64,
    sd: f64,
    n: usize,
    seed: u64,
    out: *mut BmimapMapped,
) -> BmimapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let obs = PercentileMoments::new(mean, sd)?;
        *out = sampler::map_percentile_to_z_sampling(&obs, n, RngSeed(seed))?.into();
        Ok(())
    })
}

/// Optimization mapping of percentile (mean, SD) on `[0, 1]`.
///
/// A search that hits `n_max` is not an error: check `converged`.
///
/// # Safety
/// `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bmimap_map_percentile_optim(
    mean: f64,
    sd: f64,
    cfg: *const BmimapOptimConfig,
    out: *mut BmimapMapped,
) -> BmimapStatus {
    guard(|| {
        let cfg: OptimConfig = (*cfg.as_ref().ok_or_else(|| null("cfg"))?).into();
        let out = out_arg(out, "out")?;
        let obs = PercentileMoments::new(mean, sd)?;
        *out = optimizer::map_percentile_to_z_optim(&obs, &cfg)?.into();
        Ok(())
    })
}

/// Sampling mapping of BMI (mean, SD) in kg/m^2 against `chart`.
///
/// # Safety
/// `chart` must be a live handle; `demo` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bmimap_map_bmi_sampling(
    chart: *const BmimapChart,
    mean: f64,
    sd: f64,
    demo: *const BmimapDemographics,
    age_kind: i32,
    n: usize,
    seed: u64,
    out: *mut BmimapMapped,
) -> BmimapStatus {
    guard(|| {
        let chart = chart_arg(chart)?;
        let kind = parse_age_kind(age_kind)?;
        let demo = demographics(demo.as_ref().ok_or_else(|| null("demo"))?, chart)?;
        let out = out_arg(out, "out")?;
        let obs = AggregateOutcome::new(Scale::Bmi, mean, sd, None)?;
        *out = sampler::map_bmi_to_z_sampling(&obs, &demo, chart, n, kind, RngSeed(seed))?.into();
        Ok(())
    })
}

/// Optimization mapping of BMI (mean, SD) in kg/m^2 against `chart`.
///
/// # Safety
/// `chart` must be a live handle; `demo`, `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bmimap_map_bmi_optim(
    chart: *const BmimapChart,
    mean: f64,
    sd: f64,
    demo: *const BmimapDemographics,
    age_kind: i32,
    cfg: *const BmimapOptimConfig,
    out: *mut BmimapMapped,
) -> BmimapStatus {
    guard(|| {
        let chart = chart_arg(chart)?;
        let kind = parse_age_kind(age_kind)?;
        let demo = demographics(demo.as_ref().ok_or_else(|| null("demo"))?, chart)?;
        let cfg: OptimConfig = (*cfg.as_ref().ok_or_else(|| null("cfg"))?).into();
        let out = out_arg(out, "out")?;
        let obs = AggregateOutcome::new(Scale::Bmi, mean, sd, None)?;
        *out = optimizer::map_bmi_to_z_optim(&obs, &demo, chart, kind, &cfg)?.into();
        Ok(())
    })
}
