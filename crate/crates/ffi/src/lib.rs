//! C ABI over the `wsoftmax` library.
//!
//! Every function returns a [`WsStatus`]; results come back through out
//! pointers. On failure a description is kept per thread and can be read with
//! [`ws_last_error_message`]. Matrices are dense row-major `double` arrays;
//! classifier weights are M×C with one column per class. Handles are opaque
//! and must be released with the matching `*_free` function.
//!
//! No call unwinds across the boundary: panics become `WS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use wsoftmax::loss::{softmax_probs, wsoftmax_loss, LinearClassifier, WSoftmaxConfig};
use wsoftmax::simplex::{build_simplex, fc_param_memory, min_feature_dim};
use wsoftmax::{checkpoint, Error, Matrix, ModelParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    ZeroNorm = 4,
    AntipodalCollapse = 5,
    LabelOutOfRange = 6,
    Io = 7,
    Parse = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Internal = 11,
}

/// Simplex classifier weights for C classes ((C−1)×C).
pub struct WsSimplex {
    weights: Matrix,
}

/// A trained network loaded from a JSON checkpoint.
pub struct WsModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

struct Fail(WsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => WsStatus::DimensionMismatch,
            Error::ZeroNorm => WsStatus::ZeroNorm,
            Error::AntipodalCollapse { .. } => WsStatus::AntipodalCollapse,
            Error::LabelOutOfRange { .. } => WsStatus::LabelOutOfRange,
            Error::InvalidArgument(_) | Error::NonFinite(_) | Error::EmptyBatch | Error::BiasNotAllowed => {
                WsStatus::InvalidArgument
            }
            Error::Io(_) => WsStatus::Io,
            Error::Json(_) | Error::Checkpoint(_) | Error::Csv(_) => WsStatus::Parse,
            Error::BadMagic { .. } | Error::Truncated { .. } | Error::CountMismatch { .. } => WsStatus::Parse,
            _ => WsStatus::Internal,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: WsStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            WsStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().map_or_else(|| fail(WsStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(WsStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(WsStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn need(len: usize, want: usize, name: &str) -> Result<(), Fail> {
    if len < want {
        return fail(WsStatus::BufferTooSmall, format!("{name} holds {len} values, need {want}"));
    }
    Ok(())
}

/// Message for the last failed call on this thread ("" if none). The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ws_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ws_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Smallest feature width that holds C equiangular unit weights (C − 1).
#[no_mangle]
pub unsafe extern "C" fn ws_min_feature_dim(classes: usize, out: *mut usize) -> WsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = min_feature_dim(classes)?;
        Ok(())
    })
}

/// Bytes of f32 parameters in a bias-free M×C classifier.
#[no_mangle]
pub extern "C" fn ws_fc_param_memory(feature_dim: usize, classes: usize) -> u64 {
    fc_param_memory(feature_dim, classes)
}

#[no_mangle]
pub unsafe extern "C" fn ws_simplex_new(classes: usize, out: *mut *mut WsSimplex) -> WsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let weights = build_simplex(classes)?.into_matrix();
        *out = Box::into_raw(Box::new(WsSimplex { weights }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ws_simplex_shape(s: *const WsSimplex, rows: *mut usize, cols: *mut usize) -> WsStatus {
    guard(|| {
        let s = s.as_ref().map_or_else(|| fail(WsStatus::NullPointer, "simplex is null"), Ok)?;
        *out_ref(rows, "rows")? = s.weights.rows();
        *out_ref(cols, "cols")? = s.weights.cols();
        Ok(())
    })
}

/// Copies the (C−1)×C weights row-major into `out` (`len` ≥ (C−1)·C).
#[no_mangle]
pub unsafe extern "C" fn ws_simplex_copy_weights(s: *const WsSimplex, out: *mut f64, len: usize) -> WsStatus {
    guard(|| {
        let s = s.as_ref().map_or_else(|| fail(WsStatus::NullPointer, "simplex is null"), Ok)?;
        let data = s.weights.as_slice();
        need(len, data.len(), "out")?;
        out_slice(out, len, "out")?[..data.len()].copy_from_slice(data);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ws_simplex_free(s: *mut WsSimplex) {
    if !s.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(s))));
    }
}

/// Max-subtracted softmax of `n` logits into `out` (`n` values).
#[no_mangle]
pub unsafe extern "C" fn ws_softmax_probs(logits: *const f64, n: usize, out: *mut f64) -> WsStatus {
    guard(|| {
        if n == 0 {
            return fail(WsStatus::InvalidArgument, "need at least one logit");
        }
        let logits = in_slice(logits, n, "logits")?;
        if logits.iter().any(|v| v.is_nan()) {
            return fail(WsStatus::InvalidArgument, "logits contain NaN");
        }
        let p = softmax_probs(logits);
        out_slice(out, n, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// W-Softmax loss of one instance. `weights` is the raw M×C classifier
/// (columns are normalized internally). `grad_x` (M values) and
/// `grad_weights` (M·C values) may be null when not wanted.
#[no_mangle]
pub unsafe extern "C" fn ws_wsoftmax_loss(
    weights: *const f64,
    feature_dim: usize,
    classes: usize,
    x: *const f64,
    label: usize,
    alpha: f64,
    loss: *mut f64,
    grad_x: *mut f64,
    grad_weights: *mut f64,
) -> WsStatus {
    guard(|| {
        if feature_dim == 0 || classes < 2 {
            return fail(WsStatus::InvalidArgument, "need feature_dim >= 1 and classes >= 2");
        }
        let w = in_slice(weights, feature_dim * classes, "weights")?;
        let x = in_slice(x, feature_dim, "x")?;
        let loss = out_ref(loss, "loss")?;
        let clf = LinearClassifier::bias_free(Matrix::new(feature_dim, classes, w.to_vec())?);
        let g = wsoftmax_loss(&clf, x, label, &WSoftmaxConfig::new(alpha)?)?;
        *loss = g.loss;
        if !grad_x.is_null() {
            out_slice(grad_x, feature_dim, "grad_x")?.copy_from_slice(&g.grad_x);
        }
        if !grad_weights.is_null() {
            out_slice(grad_weights, feature_dim * classes, "grad_weights")?.copy_from_slice(g.grad_weights.as_slice());
        }
        Ok(())
    })
}

/// Loads a JSON checkpoint written by the `train` command.
#[no_mangle]
pub unsafe extern "C" fn ws_model_load(path: *const c_char, out: *mut *mut WsModel) -> WsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return fail(WsStatus::NullPointer, "path is null");
        }
        let path =
            CStr::from_ptr(path).to_str().map_err(|_| Fail(WsStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let params = checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(WsModel { params }));
        Ok(())
    })
}

unsafe fn model_ref<'a>(m: *const WsModel) -> Result<&'a WsModel, Fail> {
    m.as_ref().map_or_else(|| fail(WsStatus::NullPointer, "model is null"), Ok)
}

/// Input width, feature width M and class count C of a loaded model.
#[no_mangle]
pub unsafe extern "C" fn ws_model_dims(
    m: *const WsModel,
    input_dim: *mut usize,
    feature_dim: *mut usize,
    classes: *mut usize,
) -> WsStatus {
    guard(|| {
        let spec = model_ref(m)?.params.spec();
        *out_ref(input_dim, "input_dim")? = spec.input_dim;
        *out_ref(feature_dim, "feature_dim")? = spec.feature_dim;
        *out_ref(classes, "classes")? = spec.num_classes;
        Ok(())
    })
}

/// Predicted class of one input of `len` values.
#[no_mangle]
pub unsafe extern "C" fn ws_model_predict(
    m: *const WsModel,
    x: *const f64,
    len: usize,
    class_out: *mut usize,
) -> WsStatus {
    guard(|| {
        let m = model_ref(m)?;
        let x = in_slice(x, len, "x")?;
        *out_ref(class_out, "class_out")? = m.params.predict(x)?;
        Ok(())
    })
}

/// Feature vector (M values) of one input.
#[no_mangle]
pub unsafe extern "C" fn ws_model_features(
    m: *const WsModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> WsStatus {
    guard(|| {
        let m = model_ref(m)?;
        let x = in_slice(x, len, "x")?;
        let f = m.params.forward_features(x)?;
        need(out_len, f.len(), "out")?;
        out_slice(out, out_len, "out")?[..f.len()].copy_from_slice(&f);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ws_model_free(m: *mut WsModel) {
    if !m.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(m))));
    }
}
