//! C ABI over `engage_core`.
//!
//! Every fallible call returns an [`EngageStatus`]; on failure a message is
//! available from [`engage_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. A model
//! handle may be shared across threads; a stream handle may not.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use engage_core::agreement::{spearman_rho, AgreementError};
use engage_core::backbone::{Backbone, FeatureVector, MockBackbone};
use engage_core::checkpoint::{load_checkpoint, CheckpointError};
use engage_core::dataset::preprocess::RawFrame;
use engage_core::eval::{roc_auc, EvalError};
use engage_core::model::{forward, ModelError, ModelParams};
use engage_core::stream::{StreamError, StreamState};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngageStatus {
    Ok = 0,
    /// Stream is still filling its first window; no score was produced.
    WarmingUp = 1,
    NullPointer = 2,
    InvalidArgument = 3,
    Io = 4,
    CorruptCheckpoint = 5,
    ShapeMismatch = 6,
    Numeric = 7,
    DegenerateInput = 8,
    Backbone = 9,
    Panic = 10,
}

/// A trained model loaded from a checkpoint.
pub struct EngageModel {
    params: Arc<ModelParams<f64>>,
}

/// A streaming scorer with its own window buffer.
pub struct EngageStream {
    state: StreamState,
    input_dim: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EngageLatency {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub throughput_fps: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

struct Fail(EngageStatus, String);

impl Fail {
    fn new(status: EngageStatus, msg: impl Into<String>) -> Self {
        Fail(status, msg.into())
    }
}

impl From<ModelError> for Fail {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::ShapeMismatch(_) | ModelError::EmptyBatch => EngageStatus::ShapeMismatch,
            ModelError::NonFiniteActivation => EngageStatus::Numeric,
        };
        Fail(status, e.to_string())
    }
}

impl From<CheckpointError> for Fail {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::Io(_) => EngageStatus::Io,
            _ => EngageStatus::CorruptCheckpoint,
        };
        Fail(status, e.to_string())
    }
}

impl From<StreamError> for Fail {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Model(m) => m.into(),
            StreamError::Backbone(_) | StreamError::Preprocess(_) => Fail(EngageStatus::Backbone, e.to_string()),
            other => Fail(EngageStatus::InvalidArgument, other.to_string()),
        }
    }
}

/// Runs `f`, converting failures and panics into a status.
fn guard(f: impl FnOnce() -> Result<EngageStatus, Fail>) -> EngageStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EngageStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(EngageStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `n` readable elements.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message for the last failed call on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn engage_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn engage_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the best parameters from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn engage_model_load(path: *const c_char, out: *mut *mut EngageModel) -> EngageStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail::new(EngageStatus::InvalidArgument, "path is not UTF-8"))?;
        let ck = load_checkpoint(Path::new(path))?;
        let model = EngageModel { params: Arc::new(ck.model().clone()) };
        *out = Box::into_raw(Box::new(model));
        Ok(EngageStatus::Ok)
    })
}

/// # Safety
/// `model` must be null or a handle from [`engage_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn engage_model_free(model: *mut EngageModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension the model expects (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn engage_model_input_dim(model: *const EngageModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.input_dim())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn engage_model_hidden_dim(model: *const EngageModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.hidden_dim())
}

/// Scores one window. `features` holds `w * dim` floats, one frame per row.
///
/// # Safety
/// `model` must be a live handle, `features` must point to `w * dim`
/// floats and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_model_predict(
    model: *const EngageModel,
    features: *const f32,
    w: usize,
    dim: usize,
    out: *mut f64,
) -> EngageStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        if w == 0 || dim != m.params.input_dim() {
            return Err(Fail::new(
                EngageStatus::ShapeMismatch,
                format!("expected w >= 1 frames of dim {}, got w={w} dim={dim}", m.params.input_dim()),
            ));
        }
        let n = w.checked_mul(dim).ok_or_else(|| Fail::new(EngageStatus::InvalidArgument, "size overflow"))?;
        let data = slice(features, n, "features")?;
        let frames: Vec<&[f32]> = data.chunks_exact(dim).collect();
        *out = forward(&m.params, &frames)?.0;
        Ok(EngageStatus::Ok)
    })
}

/// Creates a stream of window length `w` over `model`, embedding frames
/// with the seeded mock backbone at the model's input dimension.
///
/// # Safety
/// `model` must be a live handle and `out` writable. The stream keeps its
/// own reference; the model handle may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn engage_stream_new(
    model: *const EngageModel,
    w: usize,
    mock_seed: u64,
    out: *mut *mut EngageStream,
) -> EngageStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let m = &*model;
        let dim = m.params.input_dim();
        let backbone = Backbone::Mock(MockBackbone::new(mock_seed, dim));
        let state = StreamState::new(w, Some(m.params.clone()), Some(Arc::new(backbone)))?;
        *out = Box::into_raw(Box::new(EngageStream { state, input_dim: dim }));
        Ok(EngageStatus::Ok)
    })
}

/// # Safety
/// `stream` must be null or a handle from [`engage_stream_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn engage_stream_free(stream: *mut EngageStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

fn score_status(score: Option<engage_core::stream::EngagementScore>, out: &mut f64) -> EngageStatus {
    match score {
        Some(s) => {
            *out = s.value;
            EngageStatus::Ok
        }
        None => EngageStatus::WarmingUp,
    }
}

/// Pushes an interleaved 8-bit RGB frame. Returns `Ok` with a score once
/// the window is full and `WarmingUp` before that.
///
/// # Safety
/// `stream` must be a live handle, `rgb` must point to
/// `width * height * 3` bytes and `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_stream_push_rgb(
    stream: *mut EngageStream,
    rgb: *const u8,
    width: usize,
    height: usize,
    out_score: *mut f64,
) -> EngageStatus {
    guard(|| {
        non_null(stream, "stream")?;
        non_null(out_score, "out_score")?;
        let n = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(3))
            .filter(|&n| n > 0)
            .ok_or_else(|| Fail::new(EngageStatus::InvalidArgument, "frame must be non-empty"))?;
        let data = slice(rgb, n, "rgb")?.to_vec();
        let frame = RawFrame::rgb(width, height, data)
            .map_err(|e| Fail::new(EngageStatus::InvalidArgument, e.to_string()))?;
        let s = &mut *stream;
        let score = s.state.push_frame(&frame)?;
        Ok(score_status(score, &mut *out_score))
    })
}

/// Pushes a precomputed feature vector of the model's input dimension.
///
/// # Safety
/// `stream` must be a live handle, `features` must point to `dim` floats
/// and `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn engage_stream_push_features(
    stream: *mut EngageStream,
    features: *const f32,
    dim: usize,
    out_score: *mut f64,
) -> EngageStatus {
    guard(|| {
        non_null(stream, "stream")?;
        non_null(out_score, "out_score")?;
        let s = &mut *stream;
        if dim != s.input_dim {
            return Err(Fail::new(EngageStatus::ShapeMismatch, format!("expected dim {}, got {dim}", s.input_dim)));
        }
        let values = slice(features, dim, "features")?.to_vec();
        let fv = FeatureVector::new("stream", s.state.frames_seen(), values);
        let score = s.state.push_features(fv)?;
        Ok(score_status(score, &mut *out_score))
    })
}

/// Latency statistics over all pushes so far.
///
/// # Safety
/// `stream` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn engage_stream_latency(stream: *const EngageStream, out: *mut EngageLatency) -> EngageStatus {
    guard(|| {
        non_null(stream, "stream")?;
        non_null(out, "out")?;
        let r = (*stream).state.latency_report()?;
        *out = EngageLatency {
            count: r.count,
            p50_ms: r.p50_ms,
            p95_ms: r.p95_ms,
            max_ms: r.max_ms,
            throughput_fps: r.throughput_fps,
        };
        Ok(EngageStatus::Ok)
    })
}

/// Spearman rank correlation with a two-sided p-value.
///
/// # Safety
/// `a` and `b` must point to `n` doubles; `rho` and `p_value` must be
/// writable (`p_value` may be null).
#[no_mangle]
pub unsafe extern "C" fn engage_spearman(
    a: *const f64,
    b: *const f64,
    n: usize,
    rho: *mut f64,
    p_value: *mut f64,
) -> EngageStatus {
    guard(|| {
        non_null(rho, "rho")?;
        let (a, b) = (slice(a, n, "a")?, slice(b, n, "b")?);
        let r = spearman_rho(a, b).map_err(|e| {
            let status = match e {
                AgreementError::ZeroVariance | AgreementError::TooShort(_) => EngageStatus::DegenerateInput,
                AgreementError::NonFinite => EngageStatus::Numeric,
                _ => EngageStatus::InvalidArgument,
            };
            Fail::new(status, e.to_string())
        })?;
        *rho = r.rho;
        if !p_value.is_null() {
            *p_value = r.p_value;
        }
        Ok(EngageStatus::Ok)
    })
}

/// Area under the ROC curve; `truths[i]` is nonzero for positives.
///
/// # Safety
/// `predictions` and `truths` must point to `n` elements; `auc` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn engage_roc_auc(
    predictions: *const f64,
    truths: *const u8,
    n: usize,
    auc: *mut f64,
) -> EngageStatus {
    guard(|| {
        non_null(auc, "auc")?;
        let preds = slice(predictions, n, "predictions")?;
        let truths: Vec<bool> = slice(truths, n, "truths")?.iter().map(|&t| t != 0).collect();
        let r = roc_auc(preds, &truths).map_err(|e| {
            let status = match e {
                EvalError::SingleClass | EvalError::EmptySet => EngageStatus::DegenerateInput,
                EvalError::NonFinite => EngageStatus::Numeric,
                _ => EngageStatus::InvalidArgument,
            };
            Fail::new(status, e.to_string())
        })?;
        *auc = r.auc;
        Ok(EngageStatus::Ok)
    })
}
