//! C ABI over the `metaseq` crate.
//!
//! Every fallible function returns a [`MetaseqStatus`]; on failure a
//! message is available from [`metaseq_last_error`] on the same thread.
//! Strings handed out by the library must be released with
//! [`metaseq_string_free`]; handles with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use metaseq::episodes::{write_episode, EpisodeSampler, Experiment};
use metaseq::model::{MetaSeq2Seq, ModelError};
use metaseq::scan::{execute, parse_pair_line, Grammar, Instruction, Pair};
use metaseq::training::{TrainError, Trainer};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaseqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    IoError = 3,
    ParseError = 4,
    VocabMismatch = 5,
    EmptySupport = 6,
    Internal = 7,
}

/// A trained model loaded from a checkpoint.
pub struct MetaseqModel {
    model: MetaSeq2Seq<f32>,
}

/// A seeded stream of meta-training episodes.
pub struct MetaseqSampler {
    sampler: EpisodeSampler,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MetaseqStatus, msg: impl Into<String>) -> MetaseqStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MetaseqStatus) -> MetaseqStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MetaseqStatus::Internal, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, MetaseqStatus> {
    if p.is_null() {
        return Err(fail(MetaseqStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MetaseqStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn hand_out(text: String, out: *mut *mut c_char) -> MetaseqStatus {
    match CString::new(text) {
        Ok(c) => {
            *out = c.into_raw();
            MetaseqStatus::Ok
        }
        Err(_) => fail(MetaseqStatus::Internal, "output contains a NUL byte"),
    }
}

fn model_status(e: &ModelError) -> MetaseqStatus {
    match e {
        ModelError::VocabMismatch { .. } => MetaseqStatus::VocabMismatch,
        ModelError::EmptySupport => MetaseqStatus::EmptySupport,
        ModelError::InvalidConfig(_) => MetaseqStatus::InvalidArgument,
        ModelError::Numerics(_) => MetaseqStatus::Internal,
    }
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn metaseq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn metaseq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn metaseq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Executes a SCAN instruction under the standard grammar, writing the
/// space-separated action sequence to `*out`.
///
/// # Safety
/// `instruction` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn metaseq_interpret(instruction: *const c_char, out: *mut *mut c_char) -> MetaseqStatus {
    guard(|| {
        if out.is_null() {
            return fail(MetaseqStatus::NullArgument, "out is null");
        }
        let text = match read_str(instruction, "instruction") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match execute(&Instruction::parse_str(text), &Grammar::canonical()) {
            Ok(actions) => hand_out(actions.to_string(), out),
            Err(e) => fail(MetaseqStatus::ParseError, e.to_string()),
        }
    })
}

/// Loads a training checkpoint written by the `metaseq` CLI.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn metaseq_model_load(path: *const c_char, out: *mut *mut MetaseqModel) -> MetaseqStatus {
    guard(|| {
        if out.is_null() {
            return fail(MetaseqStatus::NullArgument, "out is null");
        }
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Trainer::load(Path::new(path)) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(MetaseqModel { model: t.into_model() }));
                MetaseqStatus::Ok
            }
            Err(e @ TrainError::Io { .. }) => fail(MetaseqStatus::IoError, e.to_string()),
            Err(e) => fail(MetaseqStatus::ParseError, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must come from [`metaseq_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn metaseq_model_free(model: *mut MetaseqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Greedy translation of `query` given a support set. `support` holds one
/// `IN: <instruction> OUT: <actions>` pair per line. The prediction (without
/// the end symbol) is written to `*out`.
///
/// # Safety
/// `model` must be a live handle, the strings valid C strings and `out` a
/// writable pointer.
#[no_mangle]
pub unsafe extern "C" fn metaseq_model_predict(
    model: *const MetaseqModel,
    support: *const c_char,
    query: *const c_char,
    out: *mut *mut c_char,
) -> MetaseqStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MetaseqStatus::NullArgument, "model or out is null");
        }
        let (support, query) = match (read_str(support, "support"), read_str(query, "query")) {
            (Ok(s), Ok(q)) => (s, q),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut pairs: Vec<Pair> = Vec::new();
        for (i, line) in support.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match parse_pair_line(line, i + 1) {
                Ok(p) => pairs.push(p),
                Err(e) => return fail(MetaseqStatus::ParseError, e.to_string()),
            }
        }
        let m = &(*model).model;
        match m.predict(&pairs, &[Instruction::parse_str(query)], false) {
            Ok(mut preds) => {
                let p = preds.pop().expect("one query in, one prediction out");
                hand_out(p.output.join(" "), out)
            }
            Err(e) => fail(model_status(&e), e.to_string()),
        }
    })
}

/// Creates a meta-training episode stream for an experiment (`me`,
/// `add-jump-perm`, `add-jump-aug`, `around-right`, `length`).
///
/// # Safety
/// `experiment` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn metaseq_sampler_new(
    experiment: *const c_char,
    seed: u64,
    out: *mut *mut MetaseqSampler,
) -> MetaseqStatus {
    guard(|| {
        if out.is_null() {
            return fail(MetaseqStatus::NullArgument, "out is null");
        }
        let name = match read_str(experiment, "experiment") {
            Ok(n) => n,
            Err(s) => return s,
        };
        match name.parse::<Experiment>() {
            Ok(e) => {
                *out = Box::into_raw(Box::new(MetaseqSampler { sampler: EpisodeSampler::new(e, seed) }));
                MetaseqStatus::Ok
            }
            Err(msg) => fail(MetaseqStatus::InvalidArgument, msg),
        }
    })
}

/// Writes the next episode to `*out` in the text episode format
/// (`SUPPORT` and `QUERY` sections of `IN:/OUT:` lines).
///
/// # Safety
/// `sampler` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn metaseq_sampler_next(sampler: *mut MetaseqSampler, out: *mut *mut c_char) -> MetaseqStatus {
    guard(|| {
        if sampler.is_null() || out.is_null() {
            return fail(MetaseqStatus::NullArgument, "sampler or out is null");
        }
        let ep = (*sampler).sampler.next_episode();
        let mut buf = Vec::new();
        write_episode(&mut buf, &ep).expect("writing to memory");
        hand_out(String::from_utf8(buf).expect("episode text is UTF-8"), out)
    })
}

/// # Safety
/// `sampler` must come from [`metaseq_sampler_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn metaseq_sampler_free(sampler: *mut MetaseqSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}
