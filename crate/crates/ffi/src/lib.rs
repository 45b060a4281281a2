//! C ABI over the `l2o` library.
//!
//! Every function returns an [`L2oStatus`]; outputs go through pointer
//! arguments. Models are opaque handles released with their `_free`
//! function. After a failure, [`l2o_last_error`] copies a message describing
//! it (per calling thread).

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use l2o::bench::{
    load_checkpoint, lstm_from_checkpoint, lstm_to_checkpoint, relative_loss, report, run_experiment, save_checkpoint,
    unrolled_from_checkpoint, unrolled_to_checkpoint, ExperimentConfig, RunOptions,
};
use l2o::error::Error;
use l2o::meta::{lstm_optimizer_step, CoordinateStates, LstmOptimizerParams};
use l2o::numerics::{DenseMatrix, RngStream};
use l2o::unrolled::{analytic_init, forward_prefix, nmse_db, SupportSchedule, UnrolledParams, Variant};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2oStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    Format = 5,
    Io = 6,
    Training = 7,
    /// Some runs of an experiment failed; the others completed.
    RunFailures = 8,
    Internal = 9,
}

/// Unrolled network (LISTA family).
pub struct L2oUnrolled {
    params: UnrolledParams,
}

/// Trained LSTM optimizer weights.
pub struct L2oLstm {
    params: LstmOptimizerParams,
}

/// LSTM optimizer driving one optimizee of fixed dimension.
pub struct L2oLstmSession {
    params: LstmOptimizerParams,
    states: CoordinateStates,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: L2oStatus, msg: impl Into<String>) -> L2oStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn from_error(e: Error) -> L2oStatus {
    let status = match &e {
        Error::DimensionMismatch { .. } => L2oStatus::DimensionMismatch,
        Error::Config(_) => L2oStatus::Config,
        Error::Format { .. } | Error::Csv(_) => L2oStatus::Format,
        Error::Io(_) => L2oStatus::Io,
        Error::Training(_) | Error::NonFinite(_) | Error::NonConvergence { .. } => L2oStatus::Training,
        Error::Contract(_) => L2oStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`L2oStatus::Internal`].
fn guard(f: impl FnOnce() -> Result<(), L2oStatus>) -> L2oStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => L2oStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(L2oStatus::Internal, msg)
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, L2oStatus>;
}

impl<T> OrStatus<T> for l2o::error::Result<T> {
    fn or_status(self) -> Result<T, L2oStatus> {
        self.map_err(from_error)
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, L2oStatus> {
    if p.is_null() {
        return Err(fail(L2oStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(L2oStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, L2oStatus> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], L2oStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(L2oStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], L2oStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(L2oStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, L2oStatus> {
    p.as_ref().ok_or_else(|| fail(L2oStatus::NullPointer, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), L2oStatus> {
    if out.is_null() {
        return Err(fail(L2oStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn l2o_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns its full length in bytes, without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn l2o_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// `10·log10(‖x̂ − x*‖² / ‖x*‖²)` of two length-`n` vectors.
///
/// # Safety
/// `x_hat` and `x_star` must point to `n` readable doubles, `out` to one.
#[no_mangle]
pub unsafe extern "C" fn l2o_nmse_db(x_hat: *const f64, x_star: *const f64, n: usize, out: *mut f64) -> L2oStatus {
    guard(|| {
        let v = nmse_db(slice_arg(x_hat, n, "x_hat")?, slice_arg(x_star, n, "x_star")?).or_status()?;
        slice_out(out, 1, "out")?[0] = v;
        Ok(())
    })
}

/// `E[f − f*] / E[f*]` over `count` instances.
///
/// # Safety
/// `f` and `f_star` must point to `count` readable doubles, `out` to one.
#[no_mangle]
pub unsafe extern "C" fn l2o_relative_loss(f: *const f64, f_star: *const f64, count: usize, out: *mut f64) -> L2oStatus {
    guard(|| {
        let r = relative_loss(slice_arg(f, count, "f")?, slice_arg(f_star, count, "f_star")?).or_status()?;
        slice_out(out, 1, "out")?[0] = r.value;
        Ok(())
    })
}

/// Network of `variant` (`lista`, `lista_cp`, `lista_cpss` or `alista`) that
/// reproduces `depth` ISTA steps on the `m x n` column-major dictionary `a`.
///
/// # Safety
/// `variant` must be a NUL-terminated string, `a` must point to `m·n`
/// readable doubles and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn l2o_unrolled_ista_init(
    variant: *const c_char,
    a: *const f64,
    m: usize,
    n: usize,
    lambda: f64,
    depth: usize,
    out: *mut *mut L2oUnrolled,
) -> L2oStatus {
    guard(|| {
        let v: Variant = str_arg(variant, "variant")?.parse().or_status()?;
        let a = DenseMatrix::from_col_major(m, n, slice_arg(a, m * n, "a")?.to_vec()).or_status()?;
        let params = analytic_init(v, &a, lambda, depth, SupportSchedule::default()).or_status()?;
        store(out, L2oUnrolled { params })
    })
}

/// Loads an unrolled network saved by the benchmark (`<method>_s<seed>.ol2o`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn l2o_unrolled_load(path: *const c_char, out: *mut *mut L2oUnrolled) -> L2oStatus {
    guard(|| {
        let ck = load_checkpoint(&path_arg(path, "path")?).or_status()?;
        let params = unrolled_from_checkpoint(&ck).or_status()?;
        store(out, L2oUnrolled { params })
    })
}

/// # Safety
/// `h` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l2o_unrolled_save(h: *const L2oUnrolled, path: *const c_char) -> L2oStatus {
    guard(|| {
        let h = handle(h, "network")?;
        let ck = unrolled_to_checkpoint(&h.params).or_status()?;
        save_checkpoint(&path_arg(path, "path")?, &ck).or_status()
    })
}

/// Writes `m`, `n` and the layer count.
///
/// # Safety
/// `h` must be a live handle; the outputs must be writable (or null to skip).
#[no_mangle]
pub unsafe extern "C" fn l2o_unrolled_shape(h: *const L2oUnrolled, m: *mut usize, n: *mut usize, depth: *mut usize) -> L2oStatus {
    guard(|| {
        let p = &handle(h, "network")?.params;
        for (slot, v) in [(m, p.m()), (n, p.n()), (depth, p.depth())] {
            if let Some(s) = slot.as_mut() {
                *s = v;
            }
        }
        Ok(())
    })
}

/// Runs the first `layers` layers on `count` measurements `b` (`m x count`,
/// column-major) and writes the estimates (`n x count`) to `x_out`.
///
/// # Safety
/// `h` must be a live handle, `b` must hold `m·count` doubles and `x_out`
/// must have room for `n·count`.
#[no_mangle]
pub unsafe extern "C" fn l2o_unrolled_forward(
    h: *const L2oUnrolled,
    b: *const f64,
    count: usize,
    layers: usize,
    x_out: *mut f64,
) -> L2oStatus {
    guard(|| {
        let p = &handle(h, "network")?.params;
        let (m, n) = (p.m(), p.n());
        let b = DenseMatrix::from_col_major(m, count, slice_arg(b, m * count, "b")?.to_vec()).or_status()?;
        let x = forward_prefix(p, &b, layers).or_status()?;
        slice_out(x_out, n * count, "x_out")?.copy_from_slice(x.data());
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2o_unrolled_free(h: *mut L2oUnrolled) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Freshly initialized LSTM optimizer.
///
/// # Safety
/// `out` must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_init(seed: u64, hidden: usize, layers: usize, out: *mut *mut L2oLstm) -> L2oStatus {
    guard(|| {
        if hidden == 0 || layers == 0 {
            return Err(fail(L2oStatus::InvalidArgument, "hidden and layers must be >= 1"));
        }
        let params = LstmOptimizerParams::init(&mut RngStream::new(seed), hidden, layers);
        store(out, L2oLstm { params })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_load(path: *const c_char, out: *mut *mut L2oLstm) -> L2oStatus {
    guard(|| {
        let ck = load_checkpoint(&path_arg(path, "path")?).or_status()?;
        let params = lstm_from_checkpoint(&ck).or_status()?;
        store(out, L2oLstm { params })
    })
}

/// # Safety
/// `h` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_save(h: *const L2oLstm, path: *const c_char) -> L2oStatus {
    guard(|| {
        let ck = lstm_to_checkpoint(&handle(h, "optimizer")?.params).or_status()?;
        save_checkpoint(&path_arg(path, "path")?, &ck).or_status()
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_free(h: *mut L2oLstm) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Session for an `n`-dimensional optimizee with zeroed LSTM states. The
/// session keeps its own copy of the weights.
///
/// # Safety
/// `h` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_session_new(h: *const L2oLstm, n: usize, out: *mut *mut L2oLstmSession) -> L2oStatus {
    guard(|| {
        let params = handle(h, "optimizer")?.params.clone();
        let states = CoordinateStates::zeros(&params, n);
        store(out, L2oLstmSession { params, states })
    })
}

/// Feeds the gradient `grad` (length `n`) and writes the update to add to
/// the iterate into `update`; the session's states advance.
///
/// # Safety
/// `s` must be a live session, `grad` must hold `n` doubles and `update`
/// must have room for `n`.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_session_step(s: *mut L2oLstmSession, grad: *const f64, n: usize, update: *mut f64) -> L2oStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| fail(L2oStatus::NullPointer, "session is null"))?;
        let dim = s.states.h[0].cols();
        if n != dim {
            return Err(fail(L2oStatus::DimensionMismatch, format!("session has {dim} coordinates, got {n}")));
        }
        let (u, next) = lstm_optimizer_step(&s.params, &s.states, slice_arg(grad, n, "grad")?);
        slice_out(update, n, "update")?.copy_from_slice(&u);
        s.states = next;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a session not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2o_lstm_session_free(s: *mut L2oLstmSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs the experiment described by the config file at `config`, writing
/// results and summary tables to `out_dir`. Returns
/// [`L2oStatus::RunFailures`] when some runs failed (see `failures.txt`).
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn l2o_run_experiment(config: *const c_char, out_dir: *const c_char) -> L2oStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_file(&path_arg(config, "config")?).or_status()?;
        let out = path_arg(out_dir, "out_dir")?;
        let summary = run_experiment(
            &cfg,
            &RunOptions {
                out: out.clone(),
                models: None,
                train_only: false,
            },
        )
        .or_status()?;
        if out.join("records.csv").exists() {
            report(&out, &out).or_status()?;
        }
        if summary.failures.is_empty() {
            Ok(())
        } else {
            Err(fail(L2oStatus::RunFailures, summary.failures.join("\n")))
        }
    })
}
