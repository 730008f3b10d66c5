//! C ABI over `mns-core`.
//!
//! Every fallible function returns an [`MnsStatus`]; on failure the message is
//! available from [`mns_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `*_free` function. Output pointers
//! are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mns_core::estimation::estimation_error;
use mns_core::noise::symmetric_transition;
use mns_core::objective::PairLoss;
use mns_core::pipeline::{generalization_bound, run_algorithm1, BoundInputs};
use mns_core::{Error, ExperimentConfig, Matrix, MlpModel, TransitionMatrix};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Format = 4,
    Parse = 5,
    NonFinite = 6,
    Diverged = 7,
    DegenerateClass = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Row-stochastic transition matrix.
pub struct MnsTransition(TransitionMatrix);

/// Trained classifier.
pub struct MnsModel(MlpModel);

/// Inputs of the generalization bound. `frobenius` points to `depth` values.
#[repr(C)]
pub struct MnsBoundInputs {
    pub input_bound: f64,
    pub classes: usize,
    pub depth: usize,
    pub frobenius: *const f64,
    pub loss_bound: f64,
    pub delta: f64,
    pub pairs: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MnsStatus {
    match e {
        Error::InvalidInput(_) => MnsStatus::InvalidInput,
        Error::Io { .. } => MnsStatus::Io,
        Error::Format { .. } => MnsStatus::Format,
        Error::Parse(_) => MnsStatus::Parse,
        Error::NonFiniteProbe { .. } => MnsStatus::NonFinite,
        Error::Diverged { .. } => MnsStatus::Diverged,
        Error::DegenerateClass(_) => MnsStatus::DegenerateClass,
    }
}

struct Fail(MnsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MnsStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MnsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MnsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MnsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MnsStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(
            MnsStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mns_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Symmetric noise matrix: `1 - rho` on the diagonal, `rho / (classes - 1)` elsewhere.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_symmetric(classes: usize, rho: f64, out: *mut *mut MnsTransition) -> MnsStatus {
    guard(|| {
        let t = symmetric_transition(classes, rho)?;
        put(out, Box::into_raw(Box::new(MnsTransition(t))), "out")
    })
}

/// Build a matrix from `classes * classes` row-major values.
///
/// # Safety
/// `data` must point to `classes * classes` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_from_rows(
    data: *const f64,
    classes: usize,
    out: *mut *mut MnsTransition,
) -> MnsStatus {
    guard(|| {
        let n = classes
            .checked_mul(classes)
            .ok_or_else(|| Fail(MnsStatus::InvalidInput, "classes too large".into()))?;
        let values = slice_arg(data, n, "data")?;
        let t = TransitionMatrix::new(Matrix::from_vec(classes, classes, values.to_vec())?)?;
        put(out, Box::into_raw(Box::new(MnsTransition(t))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_load(path: *const c_char, out: *mut *mut MnsTransition) -> MnsStatus {
    guard(|| {
        let p = PathBuf::from(str_arg(path, "path")?);
        let t = TransitionMatrix::load(&p)?;
        put(out, Box::into_raw(Box::new(MnsTransition(t))), "out")
    })
}

/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_save(t: *const MnsTransition, path: *const c_char) -> MnsStatus {
    guard(|| {
        let t = handle(t, "transition")?;
        let p = PathBuf::from(str_arg(path, "path")?);
        Ok(t.0.save(&p)?)
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_classes(t: *const MnsTransition) -> usize {
    t.as_ref().map_or(0, |t| t.0.num_classes())
}

/// Copy the matrix row-major into `out` (`len >= classes * classes`).
///
/// # Safety
/// `t` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_values(t: *const MnsTransition, out: *mut f64, len: usize) -> MnsStatus {
    guard(|| {
        let t = handle(t, "transition")?;
        let src = t.0.as_matrix().as_slice();
        out_slice(out, len, src.len(), "out")?.copy_from_slice(src);
        Ok(())
    })
}

/// `‖truth − estimate‖₁ / ‖truth‖₁`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mns_estimation_error(
    truth: *const MnsTransition,
    estimate: *const MnsTransition,
    out: *mut f64,
) -> MnsStatus {
    guard(|| {
        let e = estimation_error(&handle(truth, "truth")?.0, &handle(estimate, "estimate")?.0)?;
        put(out, e, "out")
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mns_transition_free(t: *mut MnsTransition) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Load a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mns_model_load(path: *const c_char, out: *mut *mut MnsModel) -> MnsStatus {
    guard(|| {
        let p = PathBuf::from(str_arg(path, "path")?);
        let m = MlpModel::load(&p)?;
        put(out, Box::into_raw(Box::new(MnsModel(m))), "out")
    })
}

/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mns_model_save(m: *const MnsModel, path: *const c_char) -> MnsStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let p = PathBuf::from(str_arg(path, "path")?);
        Ok(m.0.save(&p)?)
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mns_model_num_classes(m: *const MnsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.num_classes())
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mns_model_input_dim(m: *const MnsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Number of weight layers.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mns_model_depth(m: *const MnsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.depth())
}

/// Class posteriors for `rows` inputs of width `cols`, row-major, into `out`
/// (`len >= rows * num_classes`).
///
/// # Safety
/// `x` must point to `rows * cols` doubles and `out` to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mns_model_predict_proba(
    m: *const MnsModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    len: usize,
) -> MnsStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(MnsStatus::InvalidInput, "input too large".into()))?;
        let xs = slice_arg(x, n, "x")?;
        let probs = m.0.predict_proba(&Matrix::from_vec(rows, cols, xs.to_vec())?)?;
        let src = probs.as_slice();
        out_slice(out, len, src.len(), "out")?.copy_from_slice(src);
        Ok(())
    })
}

/// Frobenius norm of each weight matrix (`len >= depth`).
///
/// # Safety
/// `m` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mns_model_frobenius_norms(m: *const MnsModel, out: *mut f64, len: usize) -> MnsStatus {
    guard(|| {
        let norms = handle(m, "model")?.0.frobenius_norms();
        out_slice(out, len, norms.len(), "out")?.copy_from_slice(&norms);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mns_model_free(m: *mut MnsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Pair loss on posteriors `g1`, `g2` (each `classes` long) with similarity
/// label `s` (0 or 1). A null `t` gives the uncorrected loss, otherwise the
/// posteriors pass through `Tᵀ` first. Gradients with respect to the logits
/// are written to `grad1` / `grad2` when those are non-null.
///
/// # Safety
/// `g1`, `g2` must point to `classes` doubles; non-null gradient pointers to
/// `classes` writable doubles; `t` null or live.
#[no_mangle]
pub unsafe extern "C" fn mns_pair_loss(
    g1: *const f64,
    g2: *const f64,
    classes: usize,
    t: *const MnsTransition,
    s: f64,
    loss: *mut f64,
    grad1: *mut f64,
    grad2: *mut f64,
) -> MnsStatus {
    guard(|| {
        let a = slice_arg(g1, classes, "g1")?;
        let b = slice_arg(g2, classes, "g2")?;
        let t = t.as_ref();
        if let Some(t) = t {
            if t.0.num_classes() != classes {
                return Err(Fail(
                    MnsStatus::InvalidInput,
                    "posterior width differs from transition matrix".into(),
                ));
            }
        }
        let pl = PairLoss {
            transition: t.map(|t| &t.0),
            pos_weight: 1.0,
        };
        let r = pl.evaluate(a, b, s)?;
        if !grad1.is_null() {
            std::slice::from_raw_parts_mut(grad1, classes).copy_from_slice(&r.grad_first);
        }
        if !grad2.is_null() {
            std::slice::from_raw_parts_mut(grad2, classes).copy_from_slice(&r.grad_second);
        }
        put(loss, r.loss, "loss")
    })
}

/// Evaluate the generalization bound.
///
/// # Safety
/// `inputs` must be valid with `frobenius` pointing to `depth` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mns_generalization_bound(inputs: *const MnsBoundInputs, out: *mut f64) -> MnsStatus {
    guard(|| {
        let b = handle(inputs, "inputs")?;
        let frob = slice_arg(b.frobenius, b.depth, "frobenius")?;
        let v = generalization_bound(&BoundInputs {
            input_bound: b.input_bound,
            classes: b.classes,
            depth: b.depth,
            frobenius: frob.to_vec(),
            loss_bound: b.loss_bound,
            delta: b.delta,
            pairs: b.pairs,
        })?;
        put(out, v, "out")
    })
}

/// Run one experiment from a TOML configuration and return its JSON report
/// in `*report_json` (release with [`mns_string_free`]).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mns_run_experiment(config_toml: *const c_char, report_json: *mut *mut c_char) -> MnsStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let cfg = ExperimentConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        let report = run_algorithm1(&cfg)?;
        let json = CString::new(report.to_json()).map_err(|_| Fail(MnsStatus::Panic, "NUL in report".into()))?;
        put(report_json, json.into_raw(), "report_json")
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mns_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
