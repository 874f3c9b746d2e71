//! C ABI for revprompt.
//!
//! Every call returns an [`RpStatus`]. On failure the message is kept per
//! thread and read with [`rp_last_error_message`]. Strings handed out by the
//! library are owned by the caller and released with [`rp_string_free`];
//! engines are released with [`rp_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use revprompt::config::GatewayConfig;
use revprompt::engine::{GaConfig, Inverter, Method};
use revprompt::gateway::{AnswerSet, Gateway};
use revprompt::templates::PromptTemplateSet;
use revprompt::text_metrics::{self, EmbeddingVector, ScoreVariant};
use serde::Deserialize;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Backend = 4,
    Io = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpVariant {
    /// Average of mean and max.
    Ga = 0,
    /// Max only.
    GaMax = 1,
    /// Mean only.
    GaMean = 2,
}

impl From<RpVariant> for ScoreVariant {
    fn from(v: RpVariant) -> Self {
        match v {
            RpVariant::Ga => ScoreVariant::MeanMax,
            RpVariant::GaMax => ScoreVariant::Max,
            RpVariant::GaMean => ScoreVariant::Mean,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RpRouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Opaque engine: a gateway, its templates and the run configuration.
pub struct RpEngine {
    gateway: Gateway,
    templates: PromptTemplateSet,
    ga: GaConfig,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EngineConfig {
    #[serde(default)]
    gateway: GatewayConfig,
    #[serde(default)]
    ga: GaConfig,
    #[serde(default)]
    template_file: Option<PathBuf>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RpStatus, String);

impl From<revprompt::Error> for Failure {
    fn from(e: revprompt::Error) -> Self {
        let status = match &e {
            _ if e.is_backend() => RpStatus::Backend,
            revprompt::Error::Io { .. } => RpStatus::Io,
            _ => RpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            RpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            RpStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(RpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(RpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(RpStatus::InvalidArgument, message.into())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an engine from a JSON configuration:
/// `{"gateway": {...}, "ga": {...}, "template_file": "..."}`, all optional.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be
/// null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_engine_new(
    config_json: *const c_char,
    out: *mut *mut RpEngine,
) -> RpStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = read_str(config_json, "config_json")?;
        let config: EngineConfig = if text.trim().is_empty() {
            EngineConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?
        };
        config.ga.validate()?;
        let templates = match &config.template_file {
            Some(path) => PromptTemplateSet::load(path)?,
            None => PromptTemplateSet::builtin(),
        };
        let gateway = config.gateway.build(&templates)?;
        let engine = Box::new(RpEngine {
            gateway,
            templates,
            ga: config.ga,
        });
        *out = Box::into_raw(engine);
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a pointer from [`rp_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_engine_free(engine: *mut RpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Recovers the prompt behind `answers_json` (a JSON array of strings) with
/// `method` (`1A1S`, `5A1S`, `5A5S`, `GA`, `GAm`, `GAa`). The recovered
/// text is written to `out_text` and must be freed with [`rp_string_free`].
///
/// # Safety
/// Pointers must be valid as for [`rp_engine_new`]; `engine` must come from
/// it.
#[no_mangle]
pub unsafe extern "C" fn rp_invert(
    engine: *const RpEngine,
    answers_json: *const c_char,
    method: *const c_char,
    out_text: *mut *mut c_char,
) -> RpStatus {
    guard(|| {
        check_out(out_text, "out_text")?;
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(RpStatus::NullPointer, "engine is null".into()))?;
        let answers: Vec<String> = serde_json::from_str(read_str(answers_json, "answers_json")?)
            .map_err(|e| invalid(format!("answers: {e}")))?;
        let method: Method = read_str(method, "method")?.parse()?;
        let answers = AnswerSet::observed(answers, engine.ga.params.clone())?;
        let session = engine.gateway.session();
        let recovery =
            Inverter::new(&session, &engine.templates).recover(method, &answers, &engine.ga)?;
        *out_text = into_c_string(recovery.text);
        Ok(())
    })
}

/// ROUGE-1 of `candidate` against `reference`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_rouge1(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut RpRouge,
) -> RpStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = text_metrics::rouge1(
            read_str(candidate, "candidate")?,
            read_str(reference, "reference")?,
        );
        *out = RpRouge {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        Ok(())
    })
}

/// Combined score of `len` per-answer scores in [0, 1].
///
/// # Safety
/// `scores` must point to `len` readable doubles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_combined_score(
    scores: *const f64,
    len: usize,
    variant: RpVariant,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        check_out(out, "out")?;
        if scores.is_null() {
            return Err(Failure(RpStatus::NullPointer, "scores is null".into()));
        }
        let scores = std::slice::from_raw_parts(scores, len);
        *out = text_metrics::combined_score(scores, variant.into())?;
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_cosine_similarity(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        check_out(out, "out")?;
        if a.is_null() || b.is_null() {
            return Err(Failure(RpStatus::NullPointer, "vector is null".into()));
        }
        let a = EmbeddingVector::new(std::slice::from_raw_parts(a, len).to_vec(), "raw")?;
        let b = EmbeddingVector::new(std::slice::from_raw_parts(b, len).to_vec(), "raw")?;
        *out = text_metrics::cosine_similarity(&a, &b)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
