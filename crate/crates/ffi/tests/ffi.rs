use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use metaseq::episodes::Experiment;
use metaseq::model::ModelConfig;
use metaseq::training::{TrainConfig, Trainer};
use metaseq_ffi::*;

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { metaseq_string_free(s) };
    text
}

fn last_error() -> String {
    let p = metaseq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn interpret_round_trip() {
    let ins = CString::new("jump around right twice").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { metaseq_interpret(ins.as_ptr(), &mut out) }, MetaseqStatus::Ok);
    let expected = ["RTURN JUMP"; 8].join(" ");
    assert_eq!(take(out), expected);
    assert!(metaseq_last_error().is_null());
}

#[test]
fn interpret_reports_parse_errors() {
    let ins = CString::new("jump twice twice").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { metaseq_interpret(ins.as_ptr(), &mut out) }, MetaseqStatus::ParseError);
    assert!(out.is_null());
    assert!(last_error().contains("parse error"));
    assert_eq!(unsafe { metaseq_interpret(ptr::null(), &mut out) }, MetaseqStatus::NullArgument);
}

#[test]
fn sampler_streams_seeded_episodes() {
    let name = CString::new("me").unwrap();
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(metaseq_sampler_new(name.as_ptr(), 7, &mut a), MetaseqStatus::Ok);
        assert_eq!(metaseq_sampler_new(name.as_ptr(), 7, &mut b), MetaseqStatus::Ok);
        for _ in 0..3 {
            let (mut x, mut y) = (ptr::null_mut(), ptr::null_mut());
            assert_eq!(metaseq_sampler_next(a, &mut x), MetaseqStatus::Ok);
            assert_eq!(metaseq_sampler_next(b, &mut y), MetaseqStatus::Ok);
            let (x, y) = (take(x), take(y));
            assert_eq!(x, y);
            assert!(x.contains("SUPPORT\n") && x.contains("QUERY\n"));
        }
        metaseq_sampler_free(a);
        metaseq_sampler_free(b);
        metaseq_sampler_free(ptr::null_mut());

        let bad = CString::new("nope").unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(metaseq_sampler_new(bad.as_ptr(), 1, &mut c), MetaseqStatus::InvalidArgument);
        assert!(c.is_null());
    }
}

#[test]
fn model_handle_predicts_and_reports_vocab_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.json");
    let model = ModelConfig { m: 8, dropout: 0.0, ..Default::default() };
    let train = TrainConfig { episodes: 2, ..Default::default() };
    let mut t = Trainer::new(Experiment::Me, model, train, 1).unwrap();
    t.run(|_, _| {}).unwrap();
    t.save(&ckpt).unwrap();

    let path = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(metaseq_model_load(path.as_ptr(), &mut handle), MetaseqStatus::Ok);
        let support = CString::new("IN: dax OUT: red\nIN: wif OUT: blue\n").unwrap();
        let query = CString::new("dax wif").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(metaseq_model_predict(handle, support.as_ptr(), query.as_ptr(), &mut out), MetaseqStatus::Ok);
        let pred = take(out);
        let direct = t.model().predict(
            &[metaseq::scan::Pair::from_strs("dax", "red"), metaseq::scan::Pair::from_strs("wif", "blue")],
            &[metaseq::scan::Instruction::parse_str("dax wif")],
            false,
        );
        assert_eq!(pred, direct.unwrap()[0].output.join(" "));

        let unknown = CString::new("blick").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(
            metaseq_model_predict(handle, support.as_ptr(), unknown.as_ptr(), &mut out),
            MetaseqStatus::VocabMismatch
        );
        assert!(last_error().contains("blick"));
        let empty = CString::new("").unwrap();
        assert_eq!(metaseq_model_predict(handle, empty.as_ptr(), query.as_ptr(), &mut out), MetaseqStatus::EmptySupport);
        let garbled = CString::new("dax -> red").unwrap();
        assert_eq!(metaseq_model_predict(handle, garbled.as_ptr(), query.as_ptr(), &mut out), MetaseqStatus::ParseError);
        metaseq_model_free(handle);

        let missing = CString::new(dir.path().join("missing.json").to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(metaseq_model_load(missing.as_ptr(), &mut h), MetaseqStatus::IoError);
        assert!(h.is_null());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(metaseq_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/metaseq.h")
}

#[test]
fn generated_header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "metaseq_interpret",
        "metaseq_model_load",
        "metaseq_model_predict",
        "metaseq_model_free",
        "metaseq_sampler_new",
        "metaseq_sampler_next",
        "metaseq_sampler_free",
        "metaseq_string_free",
        "metaseq_last_error",
        "METASEQ_STATUS_VOCAB_MISMATCH",
        "typedef struct MetaseqModel MetaseqModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(header())
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
