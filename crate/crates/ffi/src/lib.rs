// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI over `premise-lab`.
//!
//! Models and datasets are opaque heap handles created by `pl_*_load` and
//! released with the matching `pl_*_free`. Every fallible call returns a
//! [`PlStatus`]; the message of the most recent failure on the calling
//! thread is available through [`pl_last_error`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use premise_lab::dataset::DatasetManifest;
use premise_lab::lm::Decoding;
use premise_lab::model::{forward, Checkpoint, HeadId, Strategy};
use premise_lab::patching::{head_influence, mitigate_generate};
use premise_lab::LabError;

/// Status codes; values 3..=11 mirror the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    MissingArtifact = 4,
    Format = 5,
    Io = 6,
    Data = 7,
    Input = 8,
    Training = 9,
    Protocol = 10,
    EmptyLocalization = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Opaque trained model.
pub struct PlModel {
    inner: Checkpoint,
}

/// Opaque dataset manifest.
pub struct PlDataset {
    inner: DatasetManifest,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: PlStatus, msg: String) -> PlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn status_of(e: &LabError) -> PlStatus {
    match e.exit_code() {
        3 => PlStatus::Config,
        4 => PlStatus::MissingArtifact,
        5 => PlStatus::Format,
        6 => PlStatus::Io,
        7 => PlStatus::Data,
        9 => PlStatus::Training,
        10 => PlStatus::Protocol,
        11 => PlStatus::EmptyLocalization,
        _ => PlStatus::Input,
    }
}

// runs `f`, converting errors and panics into status codes
fn guard(f: impl FnOnce() -> Result<(), (PlStatus, String)>) -> PlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err((s, msg))) => fail(s, msg),
        Err(_) => fail(PlStatus::Panic, "panic inside premise-lab".into()),
    }
}

fn lab(e: LabError) -> (PlStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (PlStatus, String)> {
    if p.is_null() {
        return Err((PlStatus::NullPointer, "path is null".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (PlStatus::InvalidUtf8, "path is not UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PlStatus, String)> {
    p.as_ref().ok_or_else(|| (PlStatus::NullPointer, format!("{what} handle is null")))
}

fn instance(data: &PlDataset, index: usize) -> Result<&premise_lab::dataset::QuestionInstance, (PlStatus, String)> {
    data.inner.instances.get(index).ok_or_else(|| {
        (
            PlStatus::Input,
            format!("instance {index} out of range ({} instances)", data.inner.instances.len()),
        )
    })
}

/// Copies the last error message (NUL-terminated, truncated to `cap`) and
/// returns its full length in bytes excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pl_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pl_model_load(path: *const c_char, out: *mut *mut PlModel) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return Err((PlStatus::NullPointer, "output pointer is null".into()));
        }
        let ck = Checkpoint::load(path_arg(path)?).map_err(lab)?;
        *out = Box::into_raw(Box::new(PlModel { inner: ck }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`pl_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_model_free(model: *mut PlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes `(layers, heads, vocab_size, max_seq_len)`; any output may be null.
///
/// # Safety
/// Non-null pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pl_model_shape(
    model: *const PlModel,
    layers: *mut usize,
    heads: *mut usize,
    vocab_size: *mut usize,
    max_seq_len: *mut usize,
) -> PlStatus {
    guard(|| {
        let c = &handle(model, "model")?.inner.weights.config;
        for (p, v) in [
            (layers, c.num_layers),
            (heads, c.num_heads),
            (vocab_size, c.vocab_size),
            (max_seq_len, c.max_seq_len),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Next-token logits after `tokens`, written to `out` (`vocab_size` values).
///
/// # Safety
/// `tokens` must point to `n_tokens` ids and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_forward_logits(
    model: *const PlModel,
    tokens: *const usize,
    n_tokens: usize,
    out: *mut f64,
    out_len: usize,
) -> PlStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        if tokens.is_null() || out.is_null() {
            return Err((PlStatus::NullPointer, "token or output buffer is null".into()));
        }
        let v = m.weights.config.vocab_size;
        if out_len < v {
            return Err((PlStatus::BufferTooSmall, format!("need {v} doubles, got {out_len}")));
        }
        if n_tokens == 0 {
            return Err((PlStatus::Input, "no tokens".into()));
        }
        let ids = std::slice::from_raw_parts(tokens, n_tokens);
        let (logits, _) = forward(ids, &m.weights).map_err(lab)?;
        let last = logits.row(n_tokens - 1);
        for (i, x) in last.iter().enumerate() {
            *out.add(i) = *x;
        }
        Ok(())
    })
}

/// Loads a dataset manifest JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_load(path: *const c_char, out: *mut *mut PlDataset) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return Err((PlStatus::NullPointer, "output pointer is null".into()));
        }
        let d = DatasetManifest::load(path_arg(path)?).map_err(lab)?;
        *out = Box::into_raw(Box::new(PlDataset { inner: d }));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `data` must come from [`pl_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_free(data: *mut PlDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of question instances; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_len(data: *const PlDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.instances.len())
}

/// Influence of head `(layer, head)` on instance `index`.
///
/// # Safety
/// Handles must be live; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pl_head_influence(
    model: *const PlModel,
    data: *const PlDataset,
    index: usize,
    layer: usize,
    head: usize,
    out: *mut f64,
) -> PlStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let q = instance(handle(data, "dataset")?, index)?;
        if out.is_null() {
            return Err((PlStatus::NullPointer, "output pointer is null".into()));
        }
        *out = head_influence(m, q, HeadId::new(layer, head)).map_err(lab)?;
        Ok(())
    })
}

/// Beam-decodes the answer to instance `index` with the heads
/// `(layers[i], heads[i])` constrained on its false-object span. Writes at
/// most `cap` ids to `out_ids` and the full count to `out_len`; too small a
/// buffer yields `PL_STATUS_BUFFER_TOO_SMALL` with `out_len` set.
///
/// # Safety
/// `layers`/`heads` must point to `n_heads` values (may be null when 0),
/// `out_ids` to `cap` writable ids and `out_len` must be valid for a write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pl_constrained_generate(
    model: *const PlModel,
    data: *const PlDataset,
    index: usize,
    layers: *const usize,
    heads: *const usize,
    n_heads: usize,
    beam_width: usize,
    max_new: usize,
    out_ids: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> PlStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let q = instance(handle(data, "dataset")?, index)?;
        if out_len.is_null() || (cap > 0 && out_ids.is_null()) {
            return Err((PlStatus::NullPointer, "output buffer is null".into()));
        }
        let mut set = BTreeSet::new();
        if n_heads > 0 {
            if layers.is_null() || heads.is_null() {
                return Err((PlStatus::NullPointer, "head arrays are null".into()));
            }
            let (ls, hs) = (
                std::slice::from_raw_parts(layers, n_heads),
                std::slice::from_raw_parts(heads, n_heads),
            );
            let c = &m.weights.config;
            for (&l, &h) in ls.iter().zip(hs) {
                if l >= c.num_layers || h >= c.num_heads {
                    return Err((PlStatus::Input, format!("head L{l}H{h} out of range")));
                }
                set.insert(HeadId::new(l, h));
            }
        }
        if beam_width == 0 {
            return Err((PlStatus::Config, "beam_width must be >= 1".into()));
        }
        let decoding = Decoding {
            strategy: Strategy::Beam { width: beam_width },
            max_new,
        };
        let g = mitigate_generate(m, q, &set, decoding).map_err(lab)?;
        *out_len = g.ids.len();
        if g.ids.len() > cap {
            return Err((PlStatus::BufferTooSmall, format!("need {} ids, got {cap}", g.ids.len())));
        }
        std::ptr::copy_nonoverlapping(g.ids.as_ptr(), out_ids, g.ids.len());
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
