//! C interface to `bpsfair`.
//!
//! Every function returns a [`BpsfStatus`]; on failure a message is kept
//! per thread and can be read with [`bpsf_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bpsfair::artifact::ModelArtifact;
use bpsfair::losses::{DenominatorMode, FairnessTerm, MissingCell, Objective};
use bpsfair::metrics::{bps_binary, bps_report, MeasureKind};
use bpsfair::nn::NetworkState;
use bpsfair::Error;

/// Bumped on any incompatible change to this interface.
pub const BPSF_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpsfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UndefinedMeasure = 3,
    Format = 4,
    Io = 5,
    State = 6,
    Panic = 7,
}

/// Index of each measure in [`BpsfReport`] arrays.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpsfMeasure {
    Fpr = 0,
    Fnr = 1,
    Tpr = 2,
    Tnr = 3,
    Acc = 4,
    Stp = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpsfDenominatorMode {
    AsWritten = 0,
    Rate = 1,
}

/// Per-measure results, indexed by [`BpsfMeasure`]. Undefined values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BpsfReport {
    pub bps: [f64; 6],
    pub group0: [f64; 6],
    pub group1: [f64; 6],
    pub population: [f64; 6],
}

pub struct BpsfObjective {
    inner: Objective,
}

pub struct BpsfModel {
    inner: NetworkState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BpsfStatus {
    match e {
        Error::UndefinedMeasure { .. } => BpsfStatus::UndefinedMeasure,
        Error::Format(_) => BpsfStatus::Format,
        Error::Io(_) => BpsfStatus::Io,
        Error::State(_) => BpsfStatus::State,
        _ => BpsfStatus::InvalidArgument,
    }
}

fn fail(status: BpsfStatus, msg: &str) -> BpsfStatus {
    set_error(msg);
    status
}

/// Runs `f`, mapping errors and panics to a status and the thread's message.
fn guard(f: impl FnOnce() -> Result<(), BpsfStatus>) -> BpsfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BpsfStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(BpsfStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: bpsfair::Result<T>) -> Result<T, BpsfStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], BpsfStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BpsfStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), BpsfStatus> {
    if p.is_null() {
        Err(fail(BpsfStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

#[no_mangle]
pub extern "C" fn bpsf_abi_version() -> u32 {
    BPSF_ABI_VERSION
}

/// Message for the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn bpsf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `100 * min / max` of two non-negative values.
#[no_mangle]
pub unsafe extern "C" fn bpsf_bps_binary(m0: f64, m1: f64, out: *mut f64) -> BpsfStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if !(m0 >= 0.0 && m1 >= 0.0 && m0.is_finite() && m1.is_finite()) {
            return Err(fail(BpsfStatus::InvalidArgument, "measures must be finite and non-negative"));
        }
        *out = bps_binary(m0, m1);
        Ok(())
    })
}

/// Hard measures and BPS from `n` predictions (0/1), labels (0/1) and
/// group ids. With exactly two groups `bps` is pairwise; otherwise each
/// group is scored against the population value.
#[no_mangle]
pub unsafe extern "C" fn bpsf_bps_report(
    predictions: *const u8,
    labels: *const u8,
    groups: *const i64,
    n: usize,
    out: *mut BpsfReport,
) -> BpsfStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let p = input(predictions, n, "predictions")?;
        let l = input(labels, n, "labels")?;
        let g = input(groups, n, "groups")?;
        let report = lift(bps_report(p, l, g))?;
        let mut r = BpsfReport { bps: [f64::NAN; 6], group0: [f64::NAN; 6], group1: [f64::NAN; 6], population: [f64::NAN; 6] };
        for (i, k) in MeasureKind::ALL.into_iter().enumerate() {
            let e = report.get(k);
            r.bps[i] = e.bps.unwrap_or(f64::NAN);
            r.group0[i] = e.value(0).unwrap_or(f64::NAN);
            r.group1[i] = e.value(1).unwrap_or(f64::NAN);
            r.population[i] = e.population.unwrap_or(f64::NAN);
        }
        *out = r;
        Ok(())
    })
}

/// Builds an objective from `n_terms` strings of the form
/// `measure:variant:alpha:k[:beta]`, e.g. `FPR:sigmoided:0.05:4`.
#[no_mangle]
pub unsafe extern "C" fn bpsf_objective_new(
    terms: *const *const c_char,
    n_terms: usize,
    mode: BpsfDenominatorMode,
    out: *mut *mut BpsfObjective,
) -> BpsfStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let raw = input(terms, n_terms, "terms")?;
        let mut parsed = Vec::with_capacity(n_terms);
        for &t in raw {
            if t.is_null() {
                return Err(fail(BpsfStatus::NullPointer, "term string is null"));
            }
            let s = CStr::from_ptr(t)
                .to_str()
                .map_err(|_| fail(BpsfStatus::InvalidArgument, "term string is not UTF-8"))?;
            parsed.push(lift(s.parse::<FairnessTerm>())?);
        }
        let mode = match mode {
            BpsfDenominatorMode::AsWritten => DenominatorMode::AsWritten,
            BpsfDenominatorMode::Rate => DenominatorMode::Rate,
        };
        let objective = lift(Objective::new(parsed, mode))?;
        *out = Box::into_raw(Box::new(BpsfObjective { inner: objective }));
        Ok(())
    })
}

/// Objective value over `n` samples; when `grad` is non-null it receives
/// `d total / d prob_i`. Groups must be 0 or 1 when terms are present.
#[no_mangle]
pub unsafe extern "C" fn bpsf_objective_eval(
    objective: *const BpsfObjective,
    probs: *const f64,
    labels: *const u8,
    groups: *const i64,
    n: usize,
    total: *mut f64,
    grad: *mut f64,
) -> BpsfStatus {
    guard(|| {
        if objective.is_null() {
            return Err(fail(BpsfStatus::NullPointer, "objective is null"));
        }
        out_ptr(total, "total")?;
        let p = input(probs, n, "probs")?;
        let l = input(labels, n, "labels")?;
        let g = input(groups, n, "groups")?;
        let grad = if grad.is_null() { None } else { Some(slice::from_raw_parts_mut(grad, n)) };
        let value = lift((*objective).inner.evaluate(p, l, g, MissingCell::Fail, grad))?;
        *total = value.total;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bpsf_objective_free(objective: *mut BpsfObjective) {
    if !objective.is_null() {
        drop(Box::from_raw(objective));
    }
}

/// Loads a model file written by `bpsfair train`.
#[no_mangle]
pub unsafe extern "C" fn bpsf_model_load(path: *const c_char, out: *mut *mut BpsfModel) -> BpsfStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(fail(BpsfStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(BpsfStatus::InvalidArgument, "path is not UTF-8"))?;
        let artifact = lift(ModelArtifact::load(path))?;
        *out = Box::into_raw(Box::new(BpsfModel { inner: artifact.state }));
        Ok(())
    })
}

/// Number of encoded input features the model expects.
#[no_mangle]
pub unsafe extern "C" fn bpsf_model_input_dim(model: *const BpsfModel, out: *mut usize) -> BpsfStatus {
    guard(|| {
        if model.is_null() {
            return Err(fail(BpsfStatus::NullPointer, "model is null"));
        }
        out_ptr(out, "out")?;
        *out = (*model).inner.config.input_dim;
        Ok(())
    })
}

/// Eval-mode probabilities for a row-major `n_rows x n_cols` matrix of
/// already-encoded features; `probs` receives `n_rows` values.
#[no_mangle]
pub unsafe extern "C" fn bpsf_model_predict(
    model: *const BpsfModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    probs: *mut f64,
) -> BpsfStatus {
    guard(|| {
        if model.is_null() {
            return Err(fail(BpsfStatus::NullPointer, "model is null"));
        }
        let len = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| fail(BpsfStatus::InvalidArgument, "matrix size overflows"))?;
        let data = input(x, len, "x")?;
        if n_rows == 0 {
            return Ok(());
        }
        out_ptr(probs, "probs")?;
        let view = ndarray::ArrayView2::from_shape((n_rows, n_cols), data)
            .map_err(|e| fail(BpsfStatus::InvalidArgument, &e.to_string()))?;
        let p = lift((*model).inner.predict(view))?;
        slice::from_raw_parts_mut(probs, n_rows).copy_from_slice(p.as_slice().expect("contiguous"));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bpsf_model_free(model: *mut BpsfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
