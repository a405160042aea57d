use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use crl_core::problem::vocab::Task;
use crl_core::training::{Learner, ModelKind, TrainConfig};
use crl_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = crl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// A checkpoint whose learner solves every expression: exact reducers driven
/// by the order-of-operations controller.
fn exact_checkpoint(dir: &Path) -> PathBuf {
    let mut learner = Learner::new(&TrainConfig::new(Task::Numerical, ModelKind::Hcf), 0).unwrap();
    learner.controller = None;
    learner.model = ModelKind::Hcc;
    let path = dir.join("exact.ckpt");
    learner.to_checkpoint().save(&path).unwrap();
    path
}

fn load(path: &Path) -> *mut CrlLearner {
    let mut h = ptr::null_mut();
    let p = c(path.to_str().unwrap());
    assert_eq!(
        unsafe { crl_learner_load(p.as_ptr(), &mut h) },
        CrlStatus::Ok
    );
    assert!(!h.is_null());
    h
}

#[test]
fn eval_mod10_values_and_errors() {
    let mut out = 0u8;
    for (expr, want) in [("3+4*7", 1), ("2-9", 3), ("9*9*9", 9), ("5", 5)] {
        assert_eq!(
            unsafe { crl_eval_mod10(c(expr).as_ptr(), &mut out) },
            CrlStatus::Ok
        );
        assert_eq!(out, want, "{expr}");
    }
    assert_eq!(
        unsafe { crl_eval_mod10(c("3+").as_ptr(), &mut out) },
        CrlStatus::Parse
    );
    assert!(last_error().contains("expression"));
    assert_eq!(
        unsafe { crl_eval_mod10(ptr::null(), &mut out) },
        CrlStatus::NullPointer
    );
    assert_eq!(
        unsafe { crl_eval_mod10(c("1+1").as_ptr(), ptr::null_mut()) },
        CrlStatus::NullPointer
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { crl_eval_mod10(bad.as_ptr().cast(), &mut out) },
        CrlStatus::InvalidUtf8
    );
}

#[test]
fn exact_learner_solves_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let h = load(&exact_checkpoint(dir.path()));
    let mut digit = 0u8;
    for expr in ["3+4*7-2", "1-9", "8*7+6*5-4"] {
        let mut want = 0u8;
        unsafe { crl_eval_mod10(c(expr).as_ptr(), &mut want) };
        assert_eq!(
            unsafe { crl_learner_solve(h, c(expr).as_ptr(), 0, 0, 0, &mut digit) },
            CrlStatus::Ok
        );
        assert_eq!(digit, want, "{expr}");
    }
    let mut text = ptr::null_mut();
    assert_eq!(
        unsafe { crl_learner_trace(h, c("3+4*7").as_ptr(), 0, 0, 0, false, &mut text) },
        CrlStatus::Ok
    );
    let s = unsafe { CStr::from_ptr(text) }
        .to_str()
        .unwrap()
        .to_string();
    unsafe { crl_string_free(text) };
    let lines: Vec<&str> = s.lines().collect();
    assert!(lines[0].starts_with("## seed=0 terms=3"));
    assert!(lines[1].starts_with("3+[4*7]"));
    assert!(lines[1].contains("# 4 * 7 = 8"));
    assert_eq!(lines.last(), Some(&"END"));
    unsafe { crl_learner_free(h) };
}

#[test]
fn solve_rejects_foreign_languages_for_numerical_learner() {
    let dir = tempfile::tempdir().unwrap();
    let h = load(&exact_checkpoint(dir.path()));
    let mut digit = 0u8;
    assert_eq!(
        unsafe { crl_learner_solve(h, c("3+4").as_ptr(), 1, 0, 0, &mut digit) },
        CrlStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { crl_learner_solve(h, c("3+4").as_ptr(), 9, 0, 0, &mut digit) },
        CrlStatus::InvalidArgument
    );
    unsafe { crl_learner_free(h) };
}

#[test]
fn load_failures_report_status() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { crl_learner_load(c("/nonexistent/x.ckpt").as_ptr(), &mut h) },
        CrlStatus::NotFound
    );
    assert!(h.is_null());
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, "not a checkpoint").unwrap();
    assert_eq!(
        unsafe { crl_learner_load(c(junk.to_str().unwrap()).as_ptr(), &mut h) },
        CrlStatus::Parse
    );
    let mut digit = 0;
    assert_eq!(
        unsafe { crl_learner_solve(ptr::null(), c("1").as_ptr(), 0, 0, 0, &mut digit) },
        CrlStatus::NullPointer
    );
    unsafe {
        crl_learner_free(ptr::null_mut());
        crl_string_free(ptr::null_mut());
    }
}

#[test]
fn baseline_solves_but_has_no_trace() {
    let dir = tempfile::tempdir().unwrap();
    let learner = Learner::new(&TrainConfig::new(Task::Numerical, ModelKind::Rnn), 3).unwrap();
    let path = dir.path().join("rnn.ckpt");
    learner.to_checkpoint().save(&path).unwrap();
    let h = load(&path);
    let mut digit = 99u8;
    assert_eq!(
        unsafe { crl_learner_solve(h, c("2+2").as_ptr(), 0, 0, 0, &mut digit) },
        CrlStatus::Ok
    );
    assert!(digit < 10);
    let mut text = ptr::null_mut();
    assert_eq!(
        unsafe { crl_learner_trace(h, c("2+2").as_ptr(), 0, 0, 0, false, &mut text) },
        CrlStatus::InvalidArgument
    );
    assert!(text.is_null());
    unsafe { crl_learner_free(h) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(crl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_declares_the_interface() {
    let h = std::fs::read_to_string(header_dir().join("crl.h")).unwrap();
    for name in [
        "crl_last_error_message",
        "crl_version",
        "crl_eval_mod10",
        "crl_learner_load",
        "crl_learner_free",
        "crl_learner_solve",
        "crl_learner_trace",
        "crl_string_free",
        "typedef struct CrlLearner CrlLearner;",
        "CRL_STATUS_OK = 0",
    ] {
        assert!(h.contains(name), "missing {name}");
    }
}

/// Compile a small C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let target = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(Path::parent)
        .unwrap()
        .to_path_buf();
    let lib = target.join("libcrl_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!(
            "skipping: no C compiler or static library at {}",
            lib.display()
        );
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let ckpt = exact_checkpoint(dir.path());
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "crl.h"
int main(int argc, char **argv) {
    uint8_t d = 0;
    if (crl_eval_mod10("3+4*7", &d) != CRL_STATUS_OK || d != 1) return 1;
    if (crl_eval_mod10("3+", &d) != CRL_STATUS_PARSE) return 2;
    CrlLearner *l = NULL;
    if (crl_learner_load(argv[1], &l) != CRL_STATUS_OK) return 3;
    if (crl_learner_solve(l, "8*7+6", 0, 0, 0, &d) != CRL_STATUS_OK || d != 2) return 4;
    char *t = NULL;
    if (crl_learner_trace(l, "1-9", 0, 0, 0, false, &t) != CRL_STATUS_OK) return 5;
    printf("%s", t);
    crl_string_free(t);
    crl_learner_free(l);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_dir())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[1-9]"));
    assert!(text.trim_end().ends_with("END"));
}
