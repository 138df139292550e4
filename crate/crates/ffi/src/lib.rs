//! C ABI over the nrdc toolkit.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`-style
//! call and released with the matching `*_free`. Every fallible function
//! returns an [`NrdcStatus`]; on failure the message is available from
//! [`nrdc_last_error`] on the same thread until the next failing call.
//! Strings returned by the library are owned by the caller and released
//! with [`nrdc_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nrdc::config::{preset, ExperimentConfig};
use nrdc::experiment::{run_sweep, run_train, save_train, ExperimentResult};
use nrdc::gradcheck::{run_gradcheck, GradcheckConfig};
use nrdc::noise::{NoiseBatch, NoiseKind};
use nrdc::policies::Policy;
use nrdc::signature::{TruncatedSignature, Word};
use nrdc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NrdcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Resolved experiment configuration.
pub struct NrdcConfig(ExperimentConfig);

/// A trained policy together with its experiment result.
pub struct NrdcRun {
    policy: Box<dyn Policy>,
    result: ExperimentResult,
}

/// Truncated signature of a piecewise-linear path.
pub struct NrdcSignature(TruncatedSignature);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NrdcStatus {
    match e {
        Error::Config(_) | Error::Checkpoint(_) | Error::Json(_) => NrdcStatus::Config,
        Error::Io { .. } => NrdcStatus::Io,
        Error::InvalidArgument(_) | Error::Shape { .. } => NrdcStatus::InvalidArgument,
        _ => NrdcStatus::Numerical,
    }
}

struct Fail(NrdcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NrdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NrdcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NrdcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(NrdcStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NrdcStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut T, what: &str, value: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nrdc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nrdc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nrdc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a bundled preset. `profile` may be null for the full profile.
#[no_mangle]
pub unsafe extern "C" fn nrdc_config_from_preset(
    name: *const c_char,
    profile: *const c_char,
    config: *mut *mut NrdcConfig,
) -> NrdcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let profile = opt_str_arg(profile, "profile")?;
        let cfg = preset(name, profile)?;
        out(config, "config", Box::into_raw(Box::new(NrdcConfig(cfg))))
    })
}

/// Parses a TOML experiment config. `profile` may be null.
#[no_mangle]
pub unsafe extern "C" fn nrdc_config_from_toml(
    text: *const c_char,
    profile: *const c_char,
    config: *mut *mut NrdcConfig,
) -> NrdcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let profile = opt_str_arg(profile, "profile")?;
        let cfg = ExperimentConfig::from_toml(text, profile)?;
        out(config, "config", Box::into_raw(Box::new(NrdcConfig(cfg))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn nrdc_config_set_seed(config: *mut NrdcConfig, seed: u64) -> NrdcStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let old = cfg.0.seed;
        cfg.0.seed = seed;
        if let Err(e) = cfg.0.validate() {
            cfg.0.seed = old;
            return Err(e.into());
        }
        Ok(())
    })
}

/// Overrides the number of training iterations.
#[no_mangle]
pub unsafe extern "C" fn nrdc_config_set_batches(config: *mut NrdcConfig, batches: usize) -> NrdcStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.train.batches = batches;
        Ok(())
    })
}

/// Resolved config as TOML; free with [`nrdc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nrdc_config_to_toml(config: *const NrdcConfig, text: *mut *mut c_char) -> NrdcStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        out(text, "text", c_string(cfg.0.to_toml()?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn nrdc_config_free(config: *mut NrdcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Trains the configured policy and evaluates it on the fine grid.
#[no_mangle]
pub unsafe extern "C" fn nrdc_train(config: *const NrdcConfig, workers: usize, run: *mut *mut NrdcRun) -> NrdcStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        if run.is_null() {
            return Err(null("run"));
        }
        let (policy, result) = run_train(&cfg.0, workers.max(1))?;
        out(run, "run", Box::into_raw(Box::new(NrdcRun { policy, result })))
    })
}

/// Mean and standard error of the final evaluation.
#[no_mangle]
pub unsafe extern "C" fn nrdc_run_evaluation(run: *const NrdcRun, mean: *mut f64, std_error: *mut f64) -> NrdcStatus {
    guard(|| {
        let r = handle(run, "run")?;
        out(mean, "mean", r.result.evaluation.mean)?;
        out(std_error, "std_error", r.result.evaluation.std_error)
    })
}

/// Number of trainable parameters of the trained policy.
#[no_mangle]
pub unsafe extern "C" fn nrdc_run_param_count(run: *const NrdcRun, count: *mut usize) -> NrdcStatus {
    guard(|| {
        let r = handle(run, "run")?;
        out(count, "count", r.policy.param_count())
    })
}

/// Result JSON without the wall-clock field; free with [`nrdc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nrdc_run_result_json(run: *const NrdcRun, json: *mut *mut c_char) -> NrdcStatus {
    guard(|| {
        let r = handle(run, "run")?;
        out(json, "json", c_string(r.result.deterministic_json()?))
    })
}

/// Writes config snapshot, result, cost trace and checkpoint into `dir`.
#[no_mangle]
pub unsafe extern "C" fn nrdc_run_save(run: *const NrdcRun, dir: *const c_char) -> NrdcStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let dir = str_arg(dir, "dir")?;
        save_train(Path::new(dir), &*r.policy, &r.result)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nrdc_run_free(run: *mut NrdcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Resolution sweep; the table is returned as CSV.
#[no_mangle]
pub unsafe extern "C" fn nrdc_sweep_csv(
    config: *const NrdcConfig,
    workers: usize,
    csv: *mut *mut c_char,
) -> NrdcStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        if csv.is_null() {
            return Err(null("csv"));
        }
        let s = run_sweep(&cfg.0, workers.max(1))?;
        out(csv, "csv", c_string(s.to_csv()))
    })
}

/// Runs `trials` gradient checks; `passed` is set to 1 if all agree.
#[no_mangle]
pub unsafe extern "C" fn nrdc_gradcheck(seed: u64, trials: usize, passed: *mut i32) -> NrdcStatus {
    guard(|| {
        if passed.is_null() {
            return Err(null("passed"));
        }
        let report = run_gradcheck(&GradcheckConfig {
            seed,
            trials,
            ..Default::default()
        })?;
        out(passed, "passed", report.passed as i32)
    })
}

/// Samples `count` noise paths into `buffer`, laid out as
/// `[trajectory][step][channel]`. `hurst = 0.5` gives Brownian increments.
#[no_mangle]
pub unsafe extern "C" fn nrdc_noise_increments(
    hurst: f64,
    dim: usize,
    horizon: f64,
    steps: usize,
    seed: u64,
    count: usize,
    buffer: *mut f64,
    len: usize,
) -> NrdcStatus {
    guard(|| {
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let need = count * steps * dim;
        if len < need {
            return Err(Fail(
                NrdcStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {need}"),
            ));
        }
        let kind = if hurst == 0.5 {
            NoiseKind::Brownian
        } else {
            NoiseKind::Fractional { hurst }
        };
        let batch = NoiseBatch::sample(kind, dim, horizon, steps, seed, 0, count)?;
        let dst = std::slice::from_raw_parts_mut(buffer, need);
        for i in 0..count {
            for k in 0..steps {
                let o = (i * steps + k) * dim;
                dst[o..o + dim].copy_from_slice(batch.increment(i, k));
            }
        }
        Ok(())
    })
}

/// Signature up to `level` of the path of `points` points in `dim`
/// dimensions, stored row-major in `values`.
#[no_mangle]
pub unsafe extern "C" fn nrdc_signature_of_path(
    values: *const f64,
    points: usize,
    dim: usize,
    level: usize,
    signature: *mut *mut NrdcSignature,
) -> NrdcStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if points < 2 || dim == 0 {
            return Err(Fail(
                NrdcStatus::InvalidArgument,
                "need at least two points of positive dimension".into(),
            ));
        }
        let flat = std::slice::from_raw_parts(values, points * dim);
        let path: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let sig = TruncatedSignature::of_path(&path, level)?;
        out(signature, "signature", Box::into_raw(Box::new(NrdcSignature(sig))))
    })
}

/// Chen product `a ⊗ b` of two signatures with the same shape.
#[no_mangle]
pub unsafe extern "C" fn nrdc_signature_concat(
    a: *const NrdcSignature,
    b: *const NrdcSignature,
    signature: *mut *mut NrdcSignature,
) -> NrdcStatus {
    guard(|| {
        let c = handle(a, "a")?.0.concat(&handle(b, "b")?.0)?;
        out(signature, "signature", Box::into_raw(Box::new(NrdcSignature(c))))
    })
}

/// Coefficient of the word `letters[0..len]` (0-based letters).
#[no_mangle]
pub unsafe extern "C" fn nrdc_signature_coeff(
    signature: *const NrdcSignature,
    letters: *const usize,
    len: usize,
    value: *mut f64,
) -> NrdcStatus {
    guard(|| {
        let s = handle(signature, "signature")?;
        let word = if len == 0 {
            Word::empty()
        } else if letters.is_null() {
            return Err(null("letters"));
        } else {
            Word::new(std::slice::from_raw_parts(letters, len).to_vec())
        };
        out(value, "value", s.0.coeff(&word)?)
    })
}

/// Number of values in the flattened signature (all levels).
#[no_mangle]
pub unsafe extern "C" fn nrdc_signature_len(signature: *const NrdcSignature, len: *mut usize) -> NrdcStatus {
    guard(|| {
        let s = handle(signature, "signature")?;
        out(len, "len", s.0.flatten().len())
    })
}

/// Copies the flattened signature, level 0 first, into `buffer`.
#[no_mangle]
pub unsafe extern "C" fn nrdc_signature_values(
    signature: *const NrdcSignature,
    buffer: *mut f64,
    len: usize,
) -> NrdcStatus {
    guard(|| {
        let s = handle(signature, "signature")?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let flat = s.0.flatten();
        if len < flat.len() {
            return Err(Fail(
                NrdcStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", flat.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buffer, flat.len()).copy_from_slice(&flat);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nrdc_signature_free(signature: *mut NrdcSignature) {
    if !signature.is_null() {
        drop(Box::from_raw(signature));
    }
}
