//! C ABI over `aai-core`.
//!
//! Every function returns an [`AaiStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`aai_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aai_core::aai::{infer_strided, AaiModel, Checkpoint};
use aai_core::eggmetrics::{EggAnalysis, EvalAccumulator, MetricsReport};
use aai_core::{ChannelRole, Error, Waveform};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AaiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// File system or WAV errors.
    Io = 3,
    /// Signal content that cannot be processed.
    Data = 4,
    Checkpoint = 5,
    Divergence = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// A trained speech-to-EGG model.
pub struct AaiModelHandle {
    model: AaiModel,
}

/// Accumulates true/estimated EGG comparisons over utterances.
pub struct AaiMetricsHandle {
    acc: EvalAccumulator,
}

/// Detection scores: rates in percent, identification accuracy in ms.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AaiDetection {
    pub idr: f64,
    pub mr: f64,
    pub far: f64,
    pub ida_ms: f64,
}

/// Dataset summary. Quotients and HNR are NaN when nothing was measurable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AaiMetrics {
    pub gci: AaiDetection,
    pub goi: AaiDetection,
    pub cq_true: f64,
    pub cq_est: f64,
    pub oq_true: f64,
    pub oq_est: f64,
    pub sq_true: f64,
    pub sq_est: f64,
    pub hnr_true: f64,
    pub hnr_est: f64,
    pub skipped_cycles: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AaiStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Shape(_) => AaiStatus::InvalidArgument,
        Error::Io { .. } | Error::Wav { .. } => AaiStatus::Io,
        Error::Signal(_) | Error::Manifest(_) => AaiStatus::Data,
        Error::Checkpoint(_) => AaiStatus::Checkpoint,
        Error::Divergence(_) => AaiStatus::Divergence,
    }
}

struct Fail(AaiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AaiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AaiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AaiStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            AaiStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn waveform(ptr: *const f64, len: usize, rate: f64, role: ChannelRole, what: &str) -> Result<Waveform, Fail> {
    Ok(Waveform::new(slice(ptr, len, what)?.to_vec(), rate, role)?)
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn aai_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aai_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load the model from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aai_model_load(path: *const c_char, out: *mut *mut AaiModelHandle) -> AaiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(AaiStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = Checkpoint::load(Path::new(p))?.model();
        *out = Box::into_raw(Box::new(AaiModelHandle { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`aai_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aai_model_free(model: *mut AaiModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Analysis window length in samples.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aai_model_window_len(model: *const AaiModelHandle, out: *mut usize) -> AaiStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = m.model.speech_encoder.input_dim();
        Ok(())
    })
}

/// Estimate an EGG from `len` speech samples. `out` receives `len` samples.
/// `stride` 1 averages every window.
///
/// # Safety
/// `speech` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aai_infer(
    model: *const AaiModelHandle,
    speech: *const f64,
    len: usize,
    rate: f64,
    stride: usize,
    out: *mut f64,
) -> AaiStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let w = waveform(speech, len, rate, ChannelRole::Speech, "speech")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let egg = infer_strided(&m.model, &w, stride)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(egg.samples());
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aai_metrics_new(out: *mut *mut AaiMetricsHandle) -> AaiStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = Box::into_raw(Box::new(AaiMetricsHandle {
            acc: EvalAccumulator::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `metrics` must come from [`aai_metrics_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aai_metrics_free(metrics: *mut AaiMetricsHandle) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

/// Add one utterance: reference and estimated EGG at the same rate.
///
/// # Safety
/// `reference` and `estimate` must point to `ref_len` and `est_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aai_metrics_add(
    metrics: *mut AaiMetricsHandle,
    reference: *const f64,
    ref_len: usize,
    estimate: *const f64,
    est_len: usize,
    rate: f64,
) -> AaiStatus {
    guard(|| {
        let h = metrics.as_mut().ok_or_else(|| null("metrics"))?;
        let r = waveform(reference, ref_len, rate, ChannelRole::Egg, "reference")?;
        let e = waveform(estimate, est_len, rate, ChannelRole::Egg, "estimate")?;
        h.acc.add(&EggAnalysis::of(&r), &EggAnalysis::of(&e))?;
        Ok(())
    })
}

fn detection(s: &aai_core::eggmetrics::DetectionScore) -> AaiDetection {
    AaiDetection {
        idr: s.idr,
        mr: s.mr,
        far: s.far,
        ida_ms: s.ida_ms,
    }
}

fn flatten(r: &MetricsReport) -> AaiMetrics {
    let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
    AaiMetrics {
        gci: detection(&r.gci),
        goi: detection(&r.goi),
        cq_true: v(r.cq.truth),
        cq_est: v(r.cq.est),
        oq_true: v(r.oq.truth),
        oq_est: v(r.oq.est),
        sq_true: v(r.sq.truth),
        sq_est: v(r.sq.est),
        hnr_true: v(r.hnr.truth),
        hnr_est: v(r.hnr.est),
        skipped_cycles: r.skipped_cycles as u64,
    }
}

/// Summarize everything added so far. Fails when no reference cycles were
/// seen.
///
/// # Safety
/// `metrics` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aai_metrics_report(metrics: *const AaiMetricsHandle, out: *mut AaiMetrics) -> AaiStatus {
    guard(|| {
        let h = metrics.as_ref().ok_or_else(|| null("metrics"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = flatten(&h.acc.report("ffi")?);
        Ok(())
    })
}
