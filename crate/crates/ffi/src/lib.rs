//! C interface to the compositional recursive learner.
//!
//! Every function returns a [`CrlStatus`]. On failure the message of the most
//! recent error on the calling thread is available from
//! [`crl_last_error_message`]. Learners are opaque handles created by
//! [`crl_learner_load`] and released with [`crl_learner_free`]; strings
//! returned through out-pointers are released with [`crl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use crl_core::controller::SelectMode;
use crl_core::mdp::{render_trace, run_episode, trace_header, Env};
use crl_core::numeric::checkpoint::Checkpoint;
use crl_core::numeric::rng::{SeededRng, Stream};
use crl_core::problem::expr::{Expression, ProblemInstance};
use crl_core::problem::vocab::{decode_token, Language, Symbol};
use crl_core::training::Learner;
use crl_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    NotFound = 5,
    Io = 6,
    VocabMismatch = 7,
    UnknownModule = 8,
    Numeric = 9,
    Config = 10,
    /// The episode ended without reducing the input to one token.
    NoAnswer = 11,
    Panic = 12,
}

/// A trained learner loaded from a checkpoint.
pub struct CrlLearner {
    inner: Learner,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CrlStatus {
    match err.category() {
        "invalid-argument" => CrlStatus::InvalidArgument,
        "parse" => CrlStatus::Parse,
        "not-found" => CrlStatus::NotFound,
        "vocab-mismatch" => CrlStatus::VocabMismatch,
        "unknown-module" => CrlStatus::UnknownModule,
        "numeric" => CrlStatus::Numeric,
        "config" => CrlStatus::Config,
        _ => CrlStatus::Io,
    }
}

struct Failure(CrlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Run `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CrlStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CrlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CrlStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(CrlStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn learner_ref<'a>(h: *const CrlLearner) -> Result<&'a Learner, Failure> {
    h.as_ref()
        .map(|l| &l.inner)
        .ok_or_else(|| Failure(CrlStatus::NullPointer, "learner is null".into()))
}

fn problem(expr: &str, src: u32, tgt: u32) -> Result<ProblemInstance, Failure> {
    let e: Expression = expr.parse()?;
    let src = Language::new(src as usize)?;
    let tgt = Language::new(tgt as usize)?;
    Ok(ProblemInstance::new(e, src, tgt))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn crl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Exact value mod 10 of an expression such as `3+4*7`, with usual
/// operator precedence.
///
/// # Safety
/// `expr` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crl_eval_mod10(expr: *const c_char, out: *mut u8) -> CrlStatus {
    guard(|| {
        let s = read_str(expr, "expr")?;
        out_ptr(out, "out")?;
        let e: Expression = s.parse()?;
        *out = e.eval_mod10();
        Ok(())
    })
}

/// Load a learner from a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer. The
/// handle written to `out` must be released with [`crl_learner_free`].
#[no_mangle]
pub unsafe extern "C" fn crl_learner_load(
    path: *const c_char,
    out: *mut *mut CrlLearner,
) -> CrlStatus {
    guard(|| {
        let p = read_str(path, "path")?;
        out_ptr(out, "out")?;
        let ckpt = Checkpoint::load(Path::new(p))?;
        let inner = Learner::from_checkpoint(&ckpt)?;
        *out = Box::into_raw(Box::new(CrlLearner { inner }));
        Ok(())
    })
}

/// Release a learner. Null is ignored.
///
/// # Safety
/// `learner` must come from [`crl_learner_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crl_learner_free(learner: *mut CrlLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Answer digit the learner gives for `expr` written in language `src`,
/// with the answer requested in language `tgt` (0 for numerals). Actions are
/// chosen greedily and `seed` keys the episode's rng stream. Returns
/// `NoAnswer` when the episode does not end on one digit.
///
/// # Safety
/// `learner` must be a live handle, `expr` a nul-terminated string and
/// `digit` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn crl_learner_solve(
    learner: *const CrlLearner,
    expr: *const c_char,
    src: u32,
    tgt: u32,
    seed: u64,
    digit: *mut u8,
) -> CrlStatus {
    guard(|| {
        let l = learner_ref(learner)?;
        let s = read_str(expr, "expr")?;
        out_ptr(digit, "digit")?;
        let p = problem(s, src, tgt)?;
        match l.answer(&p, seed, 0)?.and_then(decode_token) {
            Some((_, Symbol::Digit(d))) => {
                *digit = d;
                Ok(())
            }
            _ => Err(Failure(
                CrlStatus::NoAnswer,
                "episode did not end on a single digit".into(),
            )),
        }
    })
}

/// Rendered execution trace of one episode, preceded by a header line.
/// `sample` selects sampled instead of greedy actions.
///
/// # Safety
/// `learner` must be a live handle, `expr` a nul-terminated string and `out`
/// a writable pointer. The string written to `out` must be released with
/// [`crl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn crl_learner_trace(
    learner: *const CrlLearner,
    expr: *const c_char,
    src: u32,
    tgt: u32,
    seed: u64,
    sample: bool,
    out: *mut *mut c_char,
) -> CrlStatus {
    guard(|| {
        let l = learner_ref(learner)?;
        let s = read_str(expr, "expr")?;
        out_ptr(out, "out")?;
        if l.baseline.is_some() {
            return Err(Failure(
                CrlStatus::InvalidArgument,
                "the recurrent baseline has no execution trace".into(),
            ));
        }
        let p = problem(s, src, tgt)?;
        let mode = if sample {
            SelectMode::Sample
        } else {
            SelectMode::Greedy
        };
        let policy = l.policy(mode);
        let env = Env::new(&l.modules, l.horizon);
        let mut rng = SeededRng::new(seed, Stream::Trace, 1);
        let trace = run_episode(&env, policy.as_ref(), &p, &mut rng)?;
        let text = format!("{}\n{}", trace_header(&trace, seed), render_trace(&trace));
        *out = CString::new(text)
            .expect("traces contain no nul bytes")
            .into_raw();
        Ok(())
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
