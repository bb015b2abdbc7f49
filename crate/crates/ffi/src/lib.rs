//! C ABI over `vmi-core`.
//!
//! Every function returns a [`VmiStatus`]; on failure the message is kept per
//! thread and read with [`vmi_last_error_message`]. Models are opaque handles
//! created by [`vmi_model_load`] and released with [`vmi_model_free`]. Images
//! are row-major `n × input_dim` doubles in `[0, 1]`. Panics never cross the
//! boundary; they surface as `VMI_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use vmi_core::evaluation;
use vmi_core::networks::ModelParams;
use vmi_core::objectives::{mi_lower_bound_estimate, MiEstimateConfig};
use vmi_core::tensor::{Tensor, TensorError};
use vmi_core::training::load_model_file;
use vmi_core::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VmiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Numeric = 6,
    Unsupported = 7,
    Panic = 8,
}

/// A loaded checkpoint.
pub struct VmiModel {
    params: ModelParams,
}

/// Layout of a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VmiModelInfo {
    pub input_dim: usize,
    pub gauss_dim: usize,
    /// Category count of the categorical code; 0 for a pure Gaussian model.
    pub cat_k: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(VmiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => VmiStatus::Io,
            Error::Format(_) => VmiStatus::Format,
            Error::Data(_) => VmiStatus::Data,
            Error::Numeric(_) => VmiStatus::Numeric,
            Error::Config(_) | Error::Tensor(_) => VmiStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<TensorError> for Fail {
    fn from(e: TensorError) -> Self {
        Error::from(e).into()
    }
}

fn null(what: &str) -> Fail {
    Fail(VmiStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail(VmiStatus::InvalidArgument, message.into())
}

/// Runs `body`, recording any failure or panic as the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> VmiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VmiStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            VmiStatus::Panic
        }
    }
}

/// # Safety
/// `model` must be null or a live handle from [`vmi_model_load`].
unsafe fn model_ref<'a>(model: *const VmiModel) -> Result<&'a VmiModel, Fail> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn images(model: &VmiModel, data: &[f64], n: usize) -> Result<Tensor, Fail> {
    if n == 0 {
        return Err(invalid("image count must be positive"));
    }
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("pixel value {v} outside [0,1]")));
    }
    Ok(Tensor::new(vec![n, model.params.arch.input_dim], data.to_vec())?)
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vmi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vmi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vmi_model_load(path: *const c_char, out: *mut *mut VmiModel) -> VmiStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let (params, _) = load_model_file(Path::new(path))?;
        *out = Box::into_raw(Box::new(VmiModel { params }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vmi_model_free(model: *mut VmiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vmi_model_info(model: *const VmiModel, out: *mut VmiModelInfo) -> VmiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = VmiModelInfo {
            input_dim: m.params.arch.input_dim,
            gauss_dim: m.params.spec.gauss_dim,
            cat_k: m.params.spec.cat_k.unwrap_or(0),
        };
        Ok(())
    })
}

/// Posterior means (`n × gauss_dim`) and, for joint models, category
/// probabilities (`n × cat_k`). `probs_out` may be null to skip them.
///
/// # Safety
/// Buffers must hold the sizes above; `images` holds `n × input_dim` values.
#[no_mangle]
pub unsafe extern "C" fn vmi_model_encode(
    model: *const VmiModel,
    images_ptr: *const f64,
    n: usize,
    mu_out: *mut f64,
    probs_out: *mut f64,
) -> VmiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = images(m, input(images_ptr, n * m.params.arch.input_dim, "images")?, n)?;
        let post = evaluation::encode(&m.params, &x)?;
        output(mu_out, post.mu.len(), "mu_out")?.copy_from_slice(post.mu.data());
        if let (Some(probs), false) = (&post.probs, probs_out.is_null()) {
            output(probs_out, probs.len(), "probs_out")?.copy_from_slice(probs.data());
        }
        Ok(())
    })
}

/// Decoded pixel means (`n × input_dim`) for codes `z` (`n × gauss_dim`).
/// Joint models need `categories` (`n` values below `cat_k`); Gaussian models
/// require it to be null.
///
/// # Safety
/// Buffers must hold the sizes above.
#[no_mangle]
pub unsafe extern "C" fn vmi_model_decode(
    model: *const VmiModel,
    z: *const f64,
    categories: *const u32,
    n: usize,
    out: *mut f64,
) -> VmiStatus {
    guard(|| {
        let m = model_ref(model)?;
        if n == 0 {
            return Err(invalid("code count must be positive"));
        }
        let d = m.params.spec.gauss_dim;
        let z = Tensor::new(vec![n, d], input(z, n * d, "z")?.to_vec())?;
        let cats: Option<Vec<usize>> = match (m.params.spec.cat_k, categories.is_null()) {
            (Some(k), false) => {
                let c = input(categories, n, "categories")?;
                if let Some(bad) = c.iter().find(|&&c| c as usize >= k) {
                    return Err(invalid(format!("category {bad} out of range for {k} categories")));
                }
                Some(c.iter().map(|&c| c as usize).collect())
            }
            (Some(_), true) => return Err(null("categories")),
            (None, false) => return Err(invalid("model has no categorical code")),
            (None, true) => None,
        };
        let decoded = evaluation::decode(&m.params, &z, cats.as_deref())?;
        output(out, decoded.len(), "out")?.copy_from_slice(decoded.data());
        Ok(())
    })
}

/// Most probable category of each image under the encoder (joint models only).
///
/// # Safety
/// `images` holds `n × input_dim` values; `out` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn vmi_model_classify(
    model: *const VmiModel,
    images_ptr: *const f64,
    n: usize,
    out: *mut u32,
) -> VmiStatus {
    guard(|| {
        let m = model_ref(model)?;
        if m.params.spec.cat_k.is_none() {
            return Err(Fail(VmiStatus::Unsupported, "model has no categorical code".into()));
        }
        let x = images(m, input(images_ptr, n * m.params.arch.input_dim, "images")?, n)?;
        let probs = evaluation::encode(&m.params, &x)?.probs.expect("joint model");
        let out = output(out, n, "out")?;
        for (o, a) in out.iter_mut().zip(evaluation::assignments(&probs)) {
            *o = a as u32;
        }
        Ok(())
    })
}

/// Fits a fresh auxiliary network to the frozen model and writes the held-out
/// MI lower bound (nats) and its standard error. `eval_samples` is clamped to
/// half the images.
///
/// # Safety
/// `images` holds `n × input_dim` values; `bound_out` must be writable;
/// `se_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn vmi_mi_estimate(
    model: *const VmiModel,
    images_ptr: *const f64,
    n: usize,
    q_steps: usize,
    batch_size: usize,
    eval_samples: usize,
    seed: u64,
    bound_out: *mut f64,
    se_out: *mut f64,
) -> VmiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = images(m, input(images_ptr, n * m.params.arch.input_dim, "images")?, n)?;
        let bound_out = bound_out.as_mut().ok_or_else(|| null("bound_out"))?;
        let cfg = MiEstimateConfig {
            q_steps,
            batch_size,
            eval_samples: eval_samples.min(n / 2),
            seed,
            ..MiEstimateConfig::default()
        };
        let est = mi_lower_bound_estimate(&m.params, &x, &cfg)?;
        *bound_out = est.bound;
        if let Some(se) = se_out.as_mut() {
            *se = est.std_error;
        }
        Ok(())
    })
}
