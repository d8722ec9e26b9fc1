//! C ABI over `homognet`.
//!
//! Datasets and models are opaque handles owned by the library and released
//! with the matching `*_free` function. Every fallible call returns an
//! [`HgStatus`]; on failure the message is available from
//! [`hg_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use homognet::experiments;
use homognet::nalgebra::DMatrix;
use homognet::model::{self, Dataset, ParallelModel};
use homognet::polar::{self, PolarOptions, Verdict};
use homognet::trainer::{self, TrainOptions};
use homognet::{bounds, Dims, Error, Family, GaugeSpec, TeacherSpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HgStatus {
    Ok = 0,
    NullPointer = 1,
    Argument = 2,
    Dimension = 3,
    NonFinite = 4,
    Constraint = 5,
    StalledDescent = 6,
    InfeasibleRegularizer = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HgFamily {
    MatrixSensing = 0,
    StructuredMatrixSensing = 1,
    TwoLayerLinear = 2,
    TwoLayerRelu = 3,
    MultiHeadAttention = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HgVerdict {
    CertifiedGlobal = 0,
    HeuristicStationaryGlobal = 1,
    NotOptimal = 2,
    Indeterminate = 3,
}

/// Family descriptor. `gauge_s` is read for structured sensing, `tokens` and
/// `temperature` for attention.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HgFamilySpec {
    pub family: HgFamily,
    pub m: usize,
    pub n: usize,
    pub tokens: usize,
    pub temperature: f64,
    pub gauge_s: f64,
}

pub struct HgDataset {
    inner: Dataset,
}

pub struct HgModel {
    inner: ParallelModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HgStatus {
    match e {
        Error::Dimension(_) => HgStatus::Dimension,
        Error::NonFinite { .. } => HgStatus::NonFinite,
        Error::InfeasibleRegularizer(_) => HgStatus::InfeasibleRegularizer,
        Error::Argument(_) => HgStatus::Argument,
        Error::Constraint(_) | Error::SandwichViolated(_) => HgStatus::Constraint,
        Error::StalledDescent { .. } => HgStatus::StalledDescent,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => HgStatus::Io,
    }
}

/// Run `f`, recording errors and converting panics.
fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> HgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgStatus::Ok,
        Ok(Err(e)) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            HgStatus::Panic
        }
    }
}

fn null_error(what: &str) -> HgStatus {
    set_error(format!("null pointer: {what}"));
    HgStatus::NullPointer
}

fn family_of(spec: &HgFamilySpec) -> Result<(Family, Dims), Error> {
    let f = match spec.family {
        HgFamily::MatrixSensing => Family::MatrixSensing,
        HgFamily::StructuredMatrixSensing => Family::StructuredMatrixSensing { gauge: GaugeSpec::SparseBall { s: spec.gauge_s } },
        HgFamily::TwoLayerLinear => Family::TwoLayerLinear,
        HgFamily::TwoLayerRelu => Family::TwoLayerRelu,
        HgFamily::MultiHeadAttention => Family::MultiHeadAttention { temperature: spec.temperature, tokens: spec.tokens },
    };
    f.validate()?;
    if spec.m == 0 || spec.n == 0 {
        return Err(Error::Argument("dimensions must be positive".into()));
    }
    Ok((f, Dims::new(spec.m, spec.n)))
}

fn verdict_of(v: Verdict) -> HgVerdict {
    match v {
        Verdict::CertifiedGlobal => HgVerdict::CertifiedGlobal,
        Verdict::HeuristicStationaryGlobal => HgVerdict::HeuristicStationaryGlobal,
        Verdict::NotOptimal => HgVerdict::NotOptimal,
        Verdict::Indeterminate => HgVerdict::Indeterminate,
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Sample `n_samples` pairs from a Gaussian teacher of rank `rank` and noise `sigma`.
///
/// # Safety
/// `spec` must point to a valid [`HgFamilySpec`] and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn hg_dataset_generate(
    spec: *const HgFamilySpec,
    rank: usize,
    sigma: f64,
    n_samples: usize,
    seed: u64,
    out: *mut *mut HgDataset,
) -> HgStatus {
    if spec.is_null() || out.is_null() {
        return null_error("spec or out");
    }
    let spec = *spec;
    guard(|| {
        let (family, dims) = family_of(&spec)?;
        let teacher = TeacherSpec::random(family, dims, rank, sigma, homognet::rng::derive_seed(seed, 1))?;
        let ds = experiments::generate(&family, &teacher, n_samples, homognet::rng::derive_seed(seed, 2))?;
        *out = Box::into_raw(Box::new(HgDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from [`hg_dataset_generate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_dataset_free(ds: *mut HgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn hg_dataset_len(ds: *const HgDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Width-growing training. Writes the model handle, the final polar value and its verdict.
///
/// # Safety
/// `ds` must be a live dataset handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_meta_train(
    ds: *const HgDataset,
    lambda: f64,
    max_width: usize,
    seed: u64,
    out_model: *mut *mut HgModel,
    out_polar: *mut f64,
    out_verdict: *mut HgVerdict,
) -> HgStatus {
    let (Some(ds), false, false, false) = (ds.as_ref(), out_model.is_null(), out_polar.is_null(), out_verdict.is_null()) else {
        return null_error("dataset or out pointer");
    };
    guard(|| {
        let opts = TrainOptions { max_width, seed, ..TrainOptions::default() };
        let d = &ds.inner;
        let (m, cert, _) = trainer::meta_train(d, d.family, d.dims, lambda, &opts)?;
        *out_model = Box::into_raw(Box::new(HgModel { inner: m }));
        *out_polar = cert.value;
        *out_verdict = verdict_of(cert.verdict);
        Ok(())
    })
}

/// Random model with each factor at `theta = init_scale`.
///
/// # Safety
/// `spec` must point to a valid [`HgFamilySpec`] and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn hg_model_random(
    spec: *const HgFamilySpec,
    width: usize,
    init_scale: f64,
    lambda: f64,
    seed: u64,
    out: *mut *mut HgModel,
) -> HgStatus {
    if spec.is_null() || out.is_null() {
        return null_error("spec or out");
    }
    let spec = *spec;
    guard(|| {
        let (family, dims) = family_of(&spec)?;
        let m = homognet::zoo::make_model(family, dims, width, init_scale, lambda, seed)?;
        *out = Box::into_raw(Box::new(HgModel { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a model handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_model_free(m: *mut HgModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live model handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn hg_model_width(m: *const HgModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.width())
}

/// Regularized empirical objective.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_model_objective(ds: *const HgDataset, m: *const HgModel, out: *mut f64) -> HgStatus {
    let (Some(ds), Some(m), false) = (ds.as_ref(), m.as_ref(), out.is_null()) else {
        return null_error("dataset, model or out");
    };
    guard(|| {
        *out = model::objective(&ds.inner, &m.inner)?;
        Ok(())
    })
}

/// Largest per-factor stationarity residual.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_model_max_residual(ds: *const HgDataset, m: *const HgModel, out: *mut f64) -> HgStatus {
    let (Some(ds), Some(m), false) = (ds.as_ref(), m.as_ref(), out.is_null()) else {
        return null_error("dataset, model or out");
    };
    guard(|| {
        *out = model::stationarity_residuals(&ds.inner, &m.inner)?.into_iter().fold(0.0, f64::max);
        Ok(())
    })
}

/// Polar value and verdict at the model's own lambda.
///
/// # Safety
/// Handles must be live; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_polar(ds: *const HgDataset, m: *const HgModel, out_value: *mut f64, out_verdict: *mut HgVerdict) -> HgStatus {
    let (Some(ds), Some(m), false, false) = (ds.as_ref(), m.as_ref(), out_value.is_null(), out_verdict.is_null()) else {
        return null_error("dataset, model or out");
    };
    guard(|| {
        let c = polar::polar(&ds.inner, &m.inner, &PolarOptions::default())?;
        *out_value = c.value;
        *out_verdict = verdict_of(c.verdict);
        Ok(())
    })
}

/// Total of the generalization bound report; `g_radius <= 0` selects the default schedule.
///
/// # Safety
/// Handles must be live; `out_total` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_bound_total(ds: *const HgDataset, m: *const HgModel, delta: f64, g_radius: f64, out_total: *mut f64) -> HgStatus {
    let (Some(ds), Some(m), false) = (ds.as_ref(), m.as_ref(), out_total.is_null()) else {
        return null_error("dataset, model or out");
    };
    guard(|| {
        let c = polar::polar(&ds.inner, &m.inner, &PolarOptions::default())?;
        let g = (g_radius > 0.0).then_some(g_radius);
        *out_total = bounds::bound_report(&ds.inner.family, &ds.inner, &m.inner, &c, delta, g)?.total;
        Ok(())
    })
}

/// Variational nuclear norm of a column-major `rows x cols` matrix at width `width`.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_nuclear_variational(data: *const f64, rows: usize, cols: usize, width: usize, out: *mut f64) -> HgStatus {
    if data.is_null() || out.is_null() {
        return null_error("data or out");
    }
    let slice = std::slice::from_raw_parts(data, rows * cols);
    guard(|| {
        let a = DMatrix::from_column_slice(rows, cols, slice);
        *out = bounds::nuclear_variational(&a, width, 2000)?.value;
        Ok(())
    })
}

/// Model as a JSON string; release with [`hg_string_free`].
///
/// # Safety
/// `m` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hg_model_to_json(m: *const HgModel, out: *mut *mut c_char) -> HgStatus {
    let (Some(m), false) = (m.as_ref(), out.is_null()) else {
        return null_error("model or out");
    };
    guard(|| {
        let s = m.inner.to_json()?;
        *out = CString::new(s).map_err(|e| Error::Argument(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
