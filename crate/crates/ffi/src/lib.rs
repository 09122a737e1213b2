//! C ABI over `unpg-core`.
//!
//! Every function returns an [`UnpgStatus`]. On failure a description is kept
//! per thread and can be read with [`unpg_last_error_message`]. Array
//! arguments are `(pointer, length)` pairs; a null pointer is accepted only
//! with length 0.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;
use unpg_core::eval::{self, EvalConfig, ScoredPairs};
use unpg_core::loss;
use unpg_core::pairgen::{self, FilterConfig};
use unpg_core::trainer::{gen_synthetic, SyntheticSpec, TrainConfig, Trainer};
use unpg_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnpgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigInvalid = 3,
    NonFinite = 4,
    DataError = 5,
    Panic = 6,
}

/// Training session created by [`unpg_trainer_new`].
pub struct UnpgTrainer {
    inner: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> UnpgStatus {
    match err {
        Error::ConfigInvalid { .. } => UnpgStatus::ConfigInvalid,
        Error::NonFinite { .. } => UnpgStatus::NonFinite,
        _ => UnpgStatus::DataError,
    }
}

struct Fail(UnpgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UnpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UnpgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UnpgStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail(UnpgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail(UnpgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut()
        .ok_or_else(|| Fail(UnpgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn json_arg<T: for<'de> Deserialize<'de>>(
    ptr: *const c_char,
    what: &str,
) -> Result<T, Fail> {
    if ptr.is_null() {
        return Err(Fail(UnpgStatus::NullPointer, format!("{what} is null")));
    }
    let text = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail(UnpgStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    serde_json::from_str(text).map_err(|e| Fail(UnpgStatus::ConfigInvalid, format!("{what}: {e}")))
}

/// Message describing the most recent failure on this thread, or null. The
/// pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn unpg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn unpg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Mean unified loss over `n_pos` anchors sharing `neg`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn unpg_unified_loss(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
    gamma: f64,
    out_loss: *mut f64,
) -> UnpgStatus {
    guard(|| {
        let pos = slice(pos, n_pos, "pos")?;
        let neg = slice(neg, n_neg, "neg")?;
        let out = out_ref(out_loss, "out_loss")?;
        *out = loss::unified_loss(pos, neg, gamma)?.value;
        Ok(())
    })
}

/// Unified loss with per-anchor classification negatives and shared metric
/// negatives. `cl_neg` is row-major, `n_pos` rows of `n_cl_per_anchor`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn unpg_unified_loss_unpg(
    pos: *const f64,
    n_pos: usize,
    cl_neg: *const f64,
    n_cl_per_anchor: usize,
    ml_neg: *const f64,
    n_ml: usize,
    gamma: f64,
    out_loss: *mut f64,
) -> UnpgStatus {
    guard(|| {
        let pos = slice(pos, n_pos, "pos")?;
        let total = n_pos
            .checked_mul(n_cl_per_anchor)
            .ok_or_else(|| Fail(UnpgStatus::InvalidArgument, "cl_neg size overflows".into()))?;
        let cl = slice(cl_neg, total, "cl_neg")?;
        let ml = slice(ml_neg, n_ml, "ml_neg")?;
        let out = out_ref(out_loss, "out_loss")?;
        let rows: Vec<Vec<f64>> = if n_cl_per_anchor == 0 {
            vec![Vec::new(); n_pos]
        } else {
            cl.chunks(n_cl_per_anchor).map(<[f64]>::to_vec).collect()
        };
        *out = loss::unified_loss_unpg(pos, &rows, ml, gamma)?.value;
        Ok(())
    })
}

/// Box-and-whisker noise filter: `out_mask[k]` is 1 if `sims[k]` is kept.
///
/// # Safety
/// `sims` and `out_mask` must reference arrays of length `n`.
#[no_mangle]
pub unsafe extern "C" fn unpg_filter_noise(
    sims: *const f64,
    n: usize,
    whisker_r: f64,
    out_mask: *mut u8,
) -> UnpgStatus {
    guard(|| {
        let sims = slice(sims, n, "sims")?;
        let mask = slice_mut(out_mask, n, "out_mask")?;
        let kept = pairgen::filter_noise(sims, &FilterConfig::new(whisker_r)?)?;
        for (m, k) in mask.iter_mut().zip(kept) {
            *m = u8::from(k);
        }
        Ok(())
    })
}

unsafe fn scored(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
) -> Result<ScoredPairs, Fail> {
    Ok(ScoredPairs::new(
        slice(pos, n_pos, "pos")?.to_vec(),
        slice(neg, n_neg, "neg")?.to_vec(),
    ))
}

/// TAR at each FAR target, written to `out_tar[0..n_far]`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn unpg_tar_at_far(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
    far_targets: *const f64,
    n_far: usize,
    out_tar: *mut f64,
) -> UnpgStatus {
    guard(|| {
        let pairs = scored(pos, n_pos, neg, n_neg)?;
        let targets = slice(far_targets, n_far, "far_targets")?;
        let out = slice_mut(out_tar, n_far, "out_tar")?;
        for (o, r) in out.iter_mut().zip(eval::tar_at_far(&pairs, targets)?) {
            *o = r.tar;
        }
        Ok(())
    })
}

/// Best-threshold verification accuracy and the threshold achieving it.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn unpg_verification_accuracy(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
    out_accuracy: *mut f64,
    out_threshold: *mut f64,
) -> UnpgStatus {
    guard(|| {
        let pairs = scored(pos, n_pos, neg, n_neg)?;
        let acc = out_ref(out_accuracy, "out_accuracy")?;
        let thr = out_ref(out_threshold, "out_threshold")?;
        (*acc, *thr) = eval::verification_accuracy(&pairs)?;
        Ok(())
    })
}

/// Histogram-intersection count of the two score lists over `[-1, 1]`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn unpg_overlap_count(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
    num_bins: usize,
    out_count: *mut u64,
) -> UnpgStatus {
    guard(|| {
        let pairs = scored(pos, n_pos, neg, n_neg)?;
        let out = out_ref(out_count, "out_count")?;
        *out = eval::overlap_count(&pairs, num_bins)?;
        Ok(())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainerSpec {
    data: SyntheticSpec,
    #[serde(default)]
    train: TrainConfig,
}

/// Creates a trainer from a JSON document `{"data": {...}, "train": {...}}`
/// using the same fields as the run config. Release with [`unpg_trainer_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unpg_trainer_new(
    config_json: *const c_char,
    out: *mut *mut UnpgTrainer,
) -> UnpgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let spec: TrainerSpec = json_arg(config_json, "config_json")?;
        let data = gen_synthetic(&spec.data)?;
        let inner = Trainer::new(spec.train, data)?;
        *out = Box::into_raw(Box::new(UnpgTrainer { inner }));
        Ok(())
    })
}

/// Runs one optimization step and reports its mean loss. Fails with
/// `InvalidArgument` once the schedule is exhausted.
///
/// # Safety
/// `trainer` must come from [`unpg_trainer_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn unpg_trainer_step(
    trainer: *mut UnpgTrainer,
    out_loss: *mut f64,
) -> UnpgStatus {
    guard(|| {
        let t = out_ref(trainer, "trainer")?;
        if t.inner.is_done() {
            return Err(Fail(
                UnpgStatus::InvalidArgument,
                "training schedule finished".into(),
            ));
        }
        let outcome = t.inner.step()?;
        if let Some(out) = out_loss.as_mut() {
            *out = outcome.loss.value;
        }
        Ok(())
    })
}

/// Steps taken so far and the schedule length.
///
/// # Safety
/// `trainer` must be live; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn unpg_trainer_progress(
    trainer: *const UnpgTrainer,
    out_steps_done: *mut u64,
    out_total_steps: *mut u64,
) -> UnpgStatus {
    guard(|| {
        let t = trainer
            .as_ref()
            .ok_or_else(|| Fail(UnpgStatus::NullPointer, "trainer is null".into()))?;
        *out_ref(out_steps_done, "out_steps_done")? = t.inner.state().step;
        *out_ref(out_total_steps, "out_total_steps")? = t.inner.config().total_steps();
        Ok(())
    })
}

/// Evaluates the current embeddings and returns the metrics report as a
/// JSON string, to be released with [`unpg_string_free`]. `eval_json` may be
/// null for the default evaluation settings.
///
/// # Safety
/// `trainer` must be live; `eval_json` null or NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn unpg_trainer_metrics_json(
    trainer: *const UnpgTrainer,
    eval_json: *const c_char,
    out_json: *mut *mut c_char,
) -> UnpgStatus {
    guard(|| {
        let t = trainer
            .as_ref()
            .ok_or_else(|| Fail(UnpgStatus::NullPointer, "trainer is null".into()))?;
        let out = out_ref(out_json, "out_json")?;
        *out = ptr::null_mut();
        let cfg: EvalConfig = if eval_json.is_null() {
            EvalConfig::default()
        } else {
            json_arg(eval_json, "eval_json")?
        };
        let report =
            eval::evaluate(&t.inner.embeddings()?, t.inner.dataset().labels(), &cfg)?.report;
        let text = serde_json::to_string(&report)
            .map_err(|e| Fail(UnpgStatus::DataError, e.to_string()))?;
        *out = CString::new(text)
            .map_err(|e| Fail(UnpgStatus::DataError, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn unpg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a trainer. Null is ignored.
///
/// # Safety
/// `trainer` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn unpg_trainer_free(trainer: *mut UnpgTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}
