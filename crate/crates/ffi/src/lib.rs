//! C ABI for the `ctxdrift` detectors.
//!
//! Batches and reports are opaque handles created and freed through this
//! API. Every fallible call returns a [`CtxdriftStatus`]; on failure a
//! message for the calling thread is available from
//! [`ctxdrift_last_error_message`]. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctxdrift::faer::Mat;
use ctxdrift::permutation::Method;
use ctxdrift::{CvConfig, DetectionReport, DetectorConfig, Error, SampleBatch};

pub const CTXDRIFT_METHOD_ADITT: u32 = 0;
pub const CTXDRIFT_METHOD_ADITE: u32 = 1;
pub const CTXDRIFT_METHOD_MMD: u32 = 2;
pub const CTXDRIFT_METHOD_MMD_SUB: u32 = 3;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxdriftStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    DegenerateData = 3,
    Numerical = 4,
    DegeneratePropensity = 5,
    ResampleFailure = 6,
    Input = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for CtxdriftStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => CtxdriftStatus::Config,
            Error::DegenerateData(_) => CtxdriftStatus::DegenerateData,
            Error::Numerical(_) => CtxdriftStatus::Numerical,
            Error::DegeneratePropensity { .. } => CtxdriftStatus::DegeneratePropensity,
            Error::ResampleFailure { .. } => CtxdriftStatus::ResampleFailure,
            Error::Input { .. } => CtxdriftStatus::Input,
            Error::Io(_) | Error::Json(_) => CtxdriftStatus::Io,
        }
    }
}

/// Opaque sample batch.
pub struct CtxdriftBatch(SampleBatch);

/// Opaque detection report.
pub struct CtxdriftReport(DetectionReport);

/// Detector settings. Bandwidths `<= 0` select the median heuristic.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CtxdriftConfig {
    /// One of the `CTXDRIFT_METHOD_*` constants.
    pub method: u32,
    pub n_perm: usize,
    pub holdout_fraction: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Nonzero: cross-validate both regularisers (5 folds).
    pub tune_lambda: u8,
    pub propensity_reg: f64,
    /// Nonzero: use the smoothed `(1 + #>=) / (1 + n_perm)` p-value.
    pub smoothed_p_value: u8,
    pub seed: u64,
    pub k_bandwidth: f64,
    pub l_bandwidth: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (CtxdriftStatus, String)>) -> CtxdriftStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtxdriftStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CtxdriftStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CtxdriftStatus, String) {
    (CtxdriftStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (CtxdriftStatus, String) {
    (CtxdriftStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ctxdrift_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

unsafe fn matrix(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Mat<f64>, (CtxdriftStatus, String)> {
    if rows * cols == 0 {
        return Ok(Mat::zeros(rows, cols));
    }
    if data.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(data, rows * cols);
    Ok(Mat::from_fn(rows, cols, |i, j| s[i * cols + j]))
}

/// Build a batch from row-major reference (`n0` rows) and deployment (`n1`
/// rows) arrays with `d` statistic and `q` context columns. Context pointers
/// may be null when `q == 0`.
///
/// # Safety
/// Non-null pointers must reference the stated number of doubles; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_batch_new(
    ref_statistics: *const f64,
    ref_contexts: *const f64,
    n0: usize,
    dep_statistics: *const f64,
    dep_contexts: *const f64,
    n1: usize,
    d: usize,
    q: usize,
    out: *mut *mut CtxdriftBatch,
) -> CtxdriftStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s0 = matrix(ref_statistics, n0, d, "ref_statistics")?;
        let c0 = matrix(ref_contexts, n0, q, "ref_contexts")?;
        let s1 = matrix(dep_statistics, n1, d, "dep_statistics")?;
        let c1 = matrix(dep_contexts, n1, q, "dep_contexts")?;
        let batch = SampleBatch::from_domains(s0.as_ref(), c0.as_ref(), s1.as_ref(), c1.as_ref()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CtxdriftBatch(batch)));
        Ok(())
    })
}

/// Number of rows in the batch (0 for null).
///
/// # Safety
/// `batch` must be null or a live handle from [`ctxdrift_batch_new`].
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_batch_len(batch: *const CtxdriftBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.len())
}

/// # Safety
/// `batch` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_batch_free(batch: *mut CtxdriftBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// Library defaults: ADiTT, 100 permutations, 25% holdout, lambda 1e-3,
/// median-heuristic bandwidths, seed 0.
#[no_mangle]
pub extern "C" fn ctxdrift_config_default() -> CtxdriftConfig {
    let d = DetectorConfig::default();
    CtxdriftConfig {
        method: CTXDRIFT_METHOD_ADITT,
        n_perm: d.n_perm,
        holdout_fraction: d.holdout_fraction,
        lambda0: d.lambda0,
        lambda1: d.lambda1,
        tune_lambda: 0,
        propensity_reg: d.propensity_reg,
        smoothed_p_value: 0,
        seed: d.seed,
        k_bandwidth: 0.0,
        l_bandwidth: 0.0,
    }
}

fn detector_config(c: &CtxdriftConfig) -> Result<DetectorConfig, (CtxdriftStatus, String)> {
    let method = match c.method {
        CTXDRIFT_METHOD_ADITT => Method::Aditt,
        CTXDRIFT_METHOD_ADITE => Method::Adite,
        CTXDRIFT_METHOD_MMD => Method::Mmd,
        CTXDRIFT_METHOD_MMD_SUB => Method::MmdSub,
        m => return Err((CtxdriftStatus::Config, format!("unknown method code {m}"))),
    };
    let bw = |b: f64| (b > 0.0).then_some(b);
    Ok(DetectorConfig {
        method,
        n_perm: c.n_perm,
        holdout_fraction: c.holdout_fraction,
        lambda0: c.lambda0,
        lambda1: c.lambda1,
        tune_lambda: (c.tune_lambda != 0).then(CvConfig::default),
        propensity_reg: c.propensity_reg,
        smoothed_p_value: c.smoothed_p_value != 0,
        seed: c.seed,
        k_bandwidth: bw(c.k_bandwidth),
        l_bandwidth: bw(c.l_bandwidth),
    })
}

/// Run the configured detector on `batch`.
///
/// # Safety
/// `batch` must be a live handle, `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_detect(
    batch: *const CtxdriftBatch,
    config: *const CtxdriftConfig,
    out: *mut *mut CtxdriftReport,
) -> CtxdriftStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let batch = batch.as_ref().ok_or_else(|| null("batch"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let report = ctxdrift::detect(&batch.0, &detector_config(config)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CtxdriftReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_report_statistic(report: *const CtxdriftReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.statistic)
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_report_p_value(report: *const CtxdriftReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.p_value)
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_report_n_perm(report: *const CtxdriftReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.n_perm)
}

/// Copy up to `capacity` permuted statistics into `buf`; returns the total
/// count, so a call with `capacity == 0` queries the length.
///
/// # Safety
/// `report` must be null or a live handle; `buf` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_report_permuted_statistics(
    report: *const CtxdriftReport,
    buf: *mut f64,
    capacity: usize,
) -> usize {
    let Some(r) = report.as_ref() else { return 0 };
    let stats = &r.0.permuted_statistics;
    if !buf.is_null() {
        let n = capacity.min(stats.len());
        ptr::copy_nonoverlapping(stats.as_ptr(), buf, n);
    }
    stats.len()
}

/// Report as a JSON document; release with [`ctxdrift_string_free`]. Null on
/// failure.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_report_to_json(report: *const CtxdriftReport) -> *mut c_char {
    let Some(r) = report.as_ref() else {
        set_error("report is null".into());
        return ptr::null_mut();
    };
    match r.0.to_json().map(CString::new) {
        Ok(Ok(s)) => s.into_raw(),
        Ok(Err(e)) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `report` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_report_free(report: *mut CtxdriftReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// KS distance between the empirical CDF of `n` p-values and U[0,1].
///
/// # Safety
/// `p_values` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_ks_to_uniform(p_values: *const f64, n: usize, out: *mut f64) -> CtxdriftStatus {
    guard(|| {
        if out.is_null() || (p_values.is_null() && n > 0) {
            return Err(null("argument"));
        }
        let p = if n == 0 { &[][..] } else { std::slice::from_raw_parts(p_values, n) };
        *out = ctxdrift::ks_to_uniform(p).map_err(lib_err)?;
        Ok(())
    })
}

/// ROC AUC of drift against null p-values (ties count one half).
///
/// # Safety
/// Arrays must hold the stated number of doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctxdrift_pvalue_auc(
    null_p: *const f64,
    n_null: usize,
    drift_p: *const f64,
    n_drift: usize,
    out: *mut f64,
) -> CtxdriftStatus {
    guard(|| {
        if out.is_null() || (null_p.is_null() && n_null > 0) || (drift_p.is_null() && n_drift > 0) {
            return Err(null("argument"));
        }
        let slice = |p: *const f64, n: usize| if n == 0 { &[][..] } else { std::slice::from_raw_parts(p, n) };
        *out = ctxdrift::pvalue_auc(slice(null_p, n_null), slice(drift_p, n_drift)).map_err(lib_err)?;
        Ok(())
    })
}
