//! C ABI over the causal-kt library.
//!
//! Every fallible function returns a [`CktStatus`]. On failure a
//! human-readable message is kept per thread and can be read with
//! [`ckt_last_error_message`]. Models are opaque handles created by
//! [`ckt_model_load`] and released with [`ckt_model_free`].
//!
//! Adjacency matrices cross the boundary as `n * n` row-major bytes where a
//! nonzero entry `(i, k)` means skill `k` is a prerequisite of skill `i`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use causal_kt::autodiff::Array;
use causal_kt::graph::{AdjacencyMatrix, DagCheck};
use causal_kt::metrics::structural_f1;
use causal_kt::pipeline::{Checkpoint, Extraction};
use causal_kt::sinkhorn::{sinkhorn_array, SinkhornConfig};
use causal_kt::Error;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CktStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque handle to a trained model loaded from a checkpoint.
pub struct CktModel {
    checkpoint: Checkpoint,
    extraction: Extraction,
}

/// Precision, recall and F1 of a predicted graph.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CktScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> CktStatus {
    match err {
        Error::Io { .. } => CktStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::Checkpoint(_) => CktStatus::Parse,
        Error::Numerical(_) => CktStatus::Numerical,
        _ => CktStatus::InvalidArgument,
    }
}

struct Failure(CktStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CktStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CktStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CktStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CktStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const CktModel) -> Result<&'a CktModel, Failure> {
    // SAFETY: the caller promises `model` came from `ckt_model_load` and has
    // not been freed.
    unsafe { model.as_ref() }.ok_or_else(|| null("model"))
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Failure(
            CktStatus::BufferTooSmall,
            format!("{what} holds {len} entries, {need} needed"),
        ));
    }
    // SAFETY: non-null and, per the caller's contract, valid for `len` writes.
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, need) })
}

unsafe fn in_slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and, per the caller's contract, valid for `len` reads.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

fn square(n: usize) -> Result<usize, Failure> {
    n.checked_mul(n)
        .ok_or_else(|| Failure(CktStatus::InvalidArgument, format!("size {n} overflows")))
}

/// Message describing the most recent failure on this thread, or null when
/// the last call succeeded. Valid until the next library call on the thread.
#[no_mangle]
pub extern "C" fn ckt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ckt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `causal-kt train`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ckt_model_load(path: *const c_char, out: *mut *mut CktModel) -> CktStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; caller guarantees NUL termination.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Failure(CktStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        let extraction = Extraction::new(&checkpoint.model()?, &checkpoint.settings)?;
        let handle = Box::new(CktModel { checkpoint, extraction });
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `ckt_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ckt_model_free(model: *mut CktModel) {
    if !model.is_null() {
        // SAFETY: ownership returns to Rust exactly once per the contract.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of skills the model was trained on.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ckt_model_num_skills(model: *const CktModel, out: *mut usize) -> CktStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = m.checkpoint.spec.num_skills;
        Ok(())
    })
}

/// Writes the prerequisite graph thresholded at `kappa` into `out`
/// (`len >= C * C`, row-major, indices in the model's dense skill order).
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ckt_model_extract_adjacency(
    model: *const CktModel,
    kappa: f64,
    out: *mut u8,
    len: usize,
) -> CktStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let n = m.checkpoint.spec.num_skills;
        let out = unsafe { out_slice(out, len, n * n, "out") }?;
        let adj = m.extraction.adjacency(kappa)?;
        out.copy_from_slice(&adj.to_bytes());
        Ok(())
    })
}

/// Writes the hard causal ordering: `out[i]` is the position of skill `i`.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ckt_model_ordering(model: *const CktModel, out: *mut usize, len: usize) -> CktStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let perm = &m.extraction.ordering;
        let out = unsafe { out_slice(out, len, perm.len(), "out") }?;
        out.copy_from_slice(perm.as_slice());
        Ok(())
    })
}

/// Copies the original id of dense skill `index` into `buf` as a
/// NUL-terminated string. `required`, when non-null, receives the buffer size
/// needed including the terminator, so callers can size a retry after
/// `BufferTooSmall`.
///
/// # Safety
/// `model` must be a live handle; `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ckt_model_skill_id(
    model: *const CktModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
    required: *mut usize,
) -> CktStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let index_map = &m.checkpoint.skill_index;
        if index >= index_map.len() {
            return Err(Failure(
                CktStatus::InvalidArgument,
                format!("skill index {index} out of range for {} skills", index_map.len()),
            ));
        }
        let id = index_map.id_of(index).as_bytes();
        if let Some(r) = unsafe { required.as_mut() } {
            *r = id.len() + 1;
        }
        let out = unsafe { out_slice(buf.cast::<u8>(), len, id.len() + 1, "buf") }?;
        out[..id.len()].copy_from_slice(id);
        out[id.len()] = 0;
        Ok(())
    })
}

/// Sinkhorn normalization of an `n x n` row-major logit matrix into `out`.
///
/// # Safety
/// `logits` and `out` must each be valid for `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ckt_sinkhorn(
    logits: *const f64,
    n: usize,
    temperature: f64,
    unroll: usize,
    out: *mut f64,
) -> CktStatus {
    guard(|| {
        let nn = square(n)?;
        let input = unsafe { in_slice(logits, nn, "logits") }?;
        let out = unsafe { out_slice(out, nn, nn, "out") }?;
        let cfg = SinkhornConfig::new(temperature, unroll)?;
        let p = sinkhorn_array(&Array::new(n, n, input.to_vec())?, cfg)?;
        out.copy_from_slice(p.data());
        Ok(())
    })
}

/// Pairwise structural precision, recall and F1 of `pred` against `truth`.
///
/// # Safety
/// `pred` and `truth` must each be valid for `n * n` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ckt_structural_f1(
    pred: *const u8,
    truth: *const u8,
    n: usize,
    out: *mut CktScore,
) -> CktStatus {
    guard(|| {
        let nn = square(n)?;
        let p = AdjacencyMatrix::from_bytes(n, unsafe { in_slice(pred, nn, "pred") }?)?;
        let t = AdjacencyMatrix::from_bytes(n, unsafe { in_slice(truth, nn, "truth") }?)?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let s = structural_f1(&p, &t)?;
        *out = CktScore {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        Ok(())
    })
}

/// Tests whether an adjacency matrix is acyclic. When it is and `order` is
/// non-null, a topological order (prerequisites first) is written there.
///
/// # Safety
/// `adj` must be valid for `n * n` bytes, `is_dag` must be valid, and a
/// non-null `order` must be valid for `n` entries.
#[no_mangle]
pub unsafe extern "C" fn ckt_is_dag(adj: *const u8, n: usize, is_dag: *mut bool, order: *mut usize) -> CktStatus {
    guard(|| {
        let nn = square(n)?;
        let a = AdjacencyMatrix::from_bytes(n, unsafe { in_slice(adj, nn, "adj") }?)?;
        let is_dag = unsafe { is_dag.as_mut() }.ok_or_else(|| null("is_dag"))?;
        match a.topological_sort() {
            DagCheck::Acyclic(topo) => {
                *is_dag = true;
                if !order.is_null() {
                    unsafe { out_slice(order, n, n, "order") }?.copy_from_slice(&topo);
                }
            }
            DagCheck::Cyclic(_) => *is_dag = false,
        }
        Ok(())
    })
}
