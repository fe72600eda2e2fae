//! C ABI over the metricflow engine.
//!
//! Objects cross the boundary as opaque handles created by `mf_*_new`/`load`
//! style calls and released with the matching `*_free`. Every fallible call
//! returns an [`MfStatus`]; on failure [`mf_last_error`] describes the error
//! for the calling thread. Output values are written through out-pointers
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use metricflow::eval::{exact_tv, sample_batch};
use metricflow::path::{beta, shift_time};
use metricflow::{
    Codebook, CodebookKind, CodebookSpec, DistanceMatrix, Error, OraclePredictor, PathParams, SamplerConfig, TaskMode,
    TokenSequence, ToyDistribution, ToyTaskSpec,
};

/// Status codes; nonzero values mirror the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an undersized output buffer.
    InvalidArgument = 1,
    /// Input rejected by the engine.
    Invalid = 2,
    Numeric = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfCodebookKind {
    RandomUnitSphere = 0,
    IntegerGrid = 1,
}

/// Codebook with its cached distance matrix.
pub struct MfCodebook {
    codebook: Codebook,
    dist: DistanceMatrix,
}

/// Enumerated toy task distribution.
pub struct MfTask {
    q: ToyDistribution,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(MfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => MfStatus::Numeric,
            4 => MfStatus::Io,
            _ => MfStatus::Invalid,
        };
        Fail(status, e.to_string())
    }
}

fn bad_arg(msg: &str) -> Fail {
    Fail(MfStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(bad_arg(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| bad_arg(&format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| bad_arg(&format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(bad_arg("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    static VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread; valid until the next
/// failing call on the same thread. Empty when nothing failed yet.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn wrap_codebook(codebook: Codebook) -> Result<*mut MfCodebook, Fail> {
    let dist = codebook.distance_matrix()?;
    Ok(Box::into_raw(Box::new(MfCodebook { codebook, dist })))
}

/// Synthesizes a codebook of `k` entries in `dim` dimensions.
///
/// # Safety
/// `out` must be a valid pointer; the handle it receives must be released
/// with [`mf_codebook_free`].
#[no_mangle]
pub unsafe extern "C" fn mf_codebook_synth(
    kind: MfCodebookKind,
    k: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut MfCodebook,
) -> MfStatus {
    guard(|| {
        let kind = match kind {
            MfCodebookKind::RandomUnitSphere => CodebookKind::RandomUnitSphere,
            MfCodebookKind::IntegerGrid => CodebookKind::IntegerGrid,
        };
        let cb = metricflow::codebook::synth_codebook(&CodebookSpec { kind, k, dim, seed })?;
        put(out, wrap_codebook(cb)?)
    })
}

/// Loads a codebook JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_codebook_load(path: *const c_char, out: *mut *mut MfCodebook) -> MfStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        put(out, wrap_codebook(Codebook::load(&path)?)?)
    })
}

/// # Safety
/// `cb` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mf_codebook_save(cb: *const MfCodebook, path: *const c_char) -> MfStatus {
    guard(|| {
        let cb = handle(cb, "codebook")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Ok(cb.codebook.save(&path)?)
    })
}

/// Releases a codebook handle; null is ignored.
///
/// # Safety
/// `cb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_codebook_free(cb: *mut MfCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// Number of codebook entries, or 0 for a null handle.
///
/// # Safety
/// `cb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_codebook_k(cb: *const MfCodebook) -> usize {
    cb.as_ref().map_or(0, |c| c.codebook.k())
}

/// # Safety
/// `cb` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_codebook_distance(cb: *const MfCodebook, i: usize, j: usize, out: *mut f64) -> MfStatus {
    guard(|| {
        let cb = handle(cb, "codebook")?;
        let k = cb.dist.k();
        if i >= k || j >= k {
            return Err(bad_arg(&format!("index out of range for k = {k}")));
        }
        put(out, cb.dist.get(i, j))
    })
}

/// `beta_t = c * (t / (1 - t))^alpha` for `t` in `[0, 1)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_beta(alpha: f64, c: f64, t: f64, out: *mut f64) -> MfStatus {
    guard(|| {
        let params = PathParams::new(alpha, c, 1.0)?;
        put(out, beta(&params, t)?)
    })
}

/// `t / (t + lambda * (1 - t))`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_shift_time(t: f64, lambda: f64, out: *mut f64) -> MfStatus {
    guard(|| put(out, shift_time(t, lambda)?))
}

/// Writes `p_t(. | target)` (unshifted `t`) into `out[0..k]`.
///
/// # Safety
/// `cb` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_conditional_probs(
    cb: *const MfCodebook,
    target: usize,
    alpha: f64,
    c: f64,
    t: f64,
    out: *mut f64,
    len: usize,
) -> MfStatus {
    guard(|| {
        let cb = handle(cb, "codebook")?;
        let k = cb.dist.k();
        if target >= k {
            return Err(bad_arg(&format!("target {target} out of range for k = {k}")));
        }
        if out.is_null() || len < k {
            return Err(bad_arg(&format!("output buffer must hold {k} values")));
        }
        let probs = PathParams::new(alpha, c, 1.0)?.probs_at(cb.dist.row(target), t)?;
        std::slice::from_raw_parts_mut(out, k).copy_from_slice(&probs);
        Ok(())
    })
}

/// Builds a toy task from its JSON spec.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer; the
/// handle must be released with [`mf_task_free`].
#[no_mangle]
pub unsafe extern "C" fn mf_task_from_json(json: *const c_char, out: *mut *mut MfTask) -> MfStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let spec: ToyTaskSpec =
            serde_json::from_str(text).map_err(|e| Fail(MfStatus::Invalid, format!("task spec: {e}")))?;
        let q = metricflow::toydata::build_task(&spec)?;
        put(out, Box::into_raw(Box::new(MfTask { q })))
    })
}

/// # Safety
/// `task` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_task_free(task: *mut MfTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Tokens per sequence, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_task_sequence_len(task: *const MfTask) -> usize {
    task.as_ref().map_or(0, |t| t.q.layout().len())
}

/// Number of sequences with positive probability, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_task_support_len(task: *const MfTask) -> usize {
    task.as_ref().map_or(0, |t| t.q.support_len())
}

/// Samples `count` sequences with the exact posterior predictor and the
/// Euler sampler (sync mode). Writes `count * mf_task_sequence_len` tokens
/// row-major into `out`.
///
/// # Safety
/// Handles must be live and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mf_sample_oracle(
    task: *const MfTask,
    cb: *const MfCodebook,
    alpha: f64,
    c: f64,
    lambda: f64,
    steps: usize,
    seed: u64,
    count: usize,
    out: *mut u32,
    len: usize,
) -> MfStatus {
    guard(|| {
        let task = handle(task, "task")?;
        let cb = handle(cb, "codebook")?;
        let need = count * task.q.layout().len();
        if out.is_null() || len < need {
            return Err(bad_arg(&format!("output buffer must hold {need} tokens")));
        }
        if cb.dist.k() != task.q.k() {
            return Err(Fail(
                MfStatus::Invalid,
                "codebook size differs from the task vocabulary".into(),
            ));
        }
        let params = PathParams::new(alpha, c, lambda)?;
        let oracle = OraclePredictor::new(&task.q, &cb.dist, params);
        let config = SamplerConfig::new(steps, params);
        let samples = sample_batch(
            &oracle,
            None,
            task.q.layout(),
            &config,
            &TaskMode::SyncGenerate,
            None,
            &cb.dist,
            count,
            seed,
        )?;
        let buf = std::slice::from_raw_parts_mut(out, need);
        for (chunk, s) in buf.chunks_mut(task.q.layout().len()).zip(&samples) {
            chunk.copy_from_slice(s.tokens());
        }
        Ok(())
    })
}

/// Exact total variation between `count` row-major sequences and the task
/// distribution.
///
/// # Safety
/// `task` must be a live handle and `tokens` must hold
/// `count * mf_task_sequence_len` values.
#[no_mangle]
pub unsafe extern "C" fn mf_exact_tv(task: *const MfTask, tokens: *const u32, count: usize, out: *mut f64) -> MfStatus {
    guard(|| {
        let task = handle(task, "task")?;
        if tokens.is_null() {
            return Err(bad_arg("tokens is null"));
        }
        let layout = task.q.layout();
        let flat = std::slice::from_raw_parts(tokens, count * layout.len());
        let samples = flat
            .chunks(layout.len())
            .map(|row| TokenSequence::new(layout, row.to_vec()))
            .collect::<metricflow::Result<Vec<_>>>()?;
        put(out, exact_tv(&samples, &task.q)?)
    })
}
