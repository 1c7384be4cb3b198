//! C ABI over `tpa-core`.
//!
//! Models and attack configs cross the boundary as opaque handles created by
//! `*_new`/`*_load` functions and released with the matching `*_free`. Every
//! fallible call returns a [`TpaStatus`]; on failure the message is available
//! from [`tpa_last_error_message`] on the same thread. Panics never unwind
//! into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use tpa_core::attack::{self, AttackConfig, AttackKind};
use tpa_core::kv::KvFile;
use tpa_core::{checkpoint, Error, Model};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Format = 4,
    Io = 5,
    Config = 6,
    Consistency = 7,
    Utf8 = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct TpaModel {
    inner: Model,
}

/// Opaque attack configuration handle.
pub struct TpaAttackConfig {
    inner: AttackConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> TpaStatus {
    match err {
        Error::Dimension { .. } => TpaStatus::Dimension,
        Error::ClassIndex { .. } | Error::Argument(_) => TpaStatus::InvalidArgument,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) => TpaStatus::Format,
        Error::Io(_) => TpaStatus::Io,
        Error::Config { .. } => TpaStatus::Config,
        Error::Consistency(_) => TpaStatus::Consistency,
    }
}

struct Fail(TpaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TpaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TpaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside tpa-ffi");
            TpaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TpaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TpaStatus::Utf8, format!("{what} is not valid UTF-8")))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [f64], Fail> {
    if len != need {
        return Err(Fail(
            TpaStatus::Dimension,
            format!("{what}: buffer holds {len} values, {need} required"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn tpa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tpa_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

unsafe fn store_model(out: *mut *mut TpaModel, model: Model) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(TpaModel { inner: model }));
    Ok(())
}

/// Loads a TPAM checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_load(path: *const c_char, out: *mut *mut TpaModel) -> TpaStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        store_model(out, checkpoint::load(Path::new(path))?)
    })
}

/// Parses TPAM checkpoint bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut TpaModel,
) -> TpaStatus {
    guard(|| {
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let bytes = if len == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(data, len)
        };
        store_model(out, checkpoint::from_bytes(bytes)?)
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_free(model: *mut TpaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_input_dim(model: *const TpaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_n_classes(model: *const TpaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_classes())
}

/// Writes the logits of `x` into `logits` (`logits_len` must equal the
/// number of classes).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_forward(
    model: *const TpaModel,
    x: *const f64,
    x_len: usize,
    logits: *mut f64,
    logits_len: usize,
) -> TpaStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let x = in_slice(x, x_len, "x")?;
        let out = out_slice(logits, logits_len, m.n_classes(), "logits")?;
        out.copy_from_slice(&m.forward(x)?);
        Ok(())
    })
}

/// Cross-entropy loss of class `y` at `x` and its input gradient.
///
/// # Safety
/// `loss` must be writable; `grad` must hold `grad_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tpa_model_loss_and_grad(
    model: *const TpaModel,
    x: *const f64,
    x_len: usize,
    y: usize,
    loss: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> TpaStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let x = in_slice(x, x_len, "x")?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let out = out_slice(grad, grad_len, m.input_dim(), "grad")?;
        let lg = m.loss_and_grad(x, y)?;
        *loss = lg.value;
        out.copy_from_slice(&lg.grad_input);
        Ok(())
    })
}

/// New attack config holding the published defaults for `kind`
/// (`bim`, `mi`, `ni`, `vt`, `rap` or `tpa`).
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tpa_attack_config_new(
    kind: *const c_char,
    out: *mut *mut TpaAttackConfig,
) -> TpaStatus {
    guard(|| {
        let kind = as_str(kind, "kind")?;
        let kind: AttackKind = kind
            .parse()
            .map_err(|_| Fail(TpaStatus::Config, format!("unknown attack kind `{kind}`")))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(TpaAttackConfig {
            inner: AttackConfig::published_defaults(kind),
        }));
        Ok(())
    })
}

/// Sets one key using config-file syntax, e.g. `("tpa.lambda", "1")` or
/// `("epsilon", "8")`; distances are in pixel units.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tpa_attack_config_set(
    config: *mut TpaAttackConfig,
    key: *const c_char,
    value: *const c_char,
) -> TpaStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let mut kv = KvFile::default();
        kv.set(as_str(key, "key")?, as_str(value, "value")?);
        let merged = cfg.inner.merge_kv(&kv, "")?;
        kv.finish()?;
        cfg.inner = merged;
        Ok(())
    })
}

/// Releases an attack config. Null is ignored.
///
/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tpa_attack_config_free(config: *mut TpaAttackConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Attacks one example. `example` keys the random streams, so equal
/// arguments give bit-identical outputs. `delta` and `adv` must each hold
/// `x_len` doubles; `success` receives whether the proxy is fooled.
///
/// # Safety
/// Handles must be live and buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn tpa_attack_run(
    model: *const TpaModel,
    config: *const TpaAttackConfig,
    x: *const f64,
    x_len: usize,
    y: usize,
    example: u64,
    delta: *mut f64,
    adv: *mut f64,
    success: *mut bool,
) -> TpaStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let cfg = &as_ref(config, "config")?.inner;
        let x = in_slice(x, x_len, "x")?;
        let delta_out = out_slice(delta, x_len, x_len, "delta")?;
        let adv_out = out_slice(adv, x_len, x_len, "adv")?;
        let r = attack::run_attack(m, x, y, cfg, example)?;
        delta_out.copy_from_slice(&r.delta);
        adv_out.copy_from_slice(&r.adv_input);
        if let Some(s) = success.as_mut() {
            *s = r.success_on_proxy;
        }
        Ok(())
    })
}
