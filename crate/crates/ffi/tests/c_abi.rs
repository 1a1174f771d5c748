use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use ndarray::Array2;
use overflow_probe::probes::{artifact, predict_scores, train_probe, Architecture, ProbeConfig};
use overflow_probe::tensor_io::{write_tensor, Tensor};
use overflow_probe_ffi::*;

fn last_error() -> String {
    let p = ovp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn tensor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ovt");
    let data: Vec<f32> = (0..6).map(|i| i as f32 * 0.5).collect();
    write_tensor(&Tensor::from_f32(vec![2, 3], data.clone()).unwrap(), &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut t = ptr::null_mut();
    unsafe {
        assert_eq!(ovp_tensor_read(c.as_ptr(), &mut t), OvpStatus::Ok);
        assert!(ovp_last_error().is_null());
        assert_eq!((ovp_tensor_rank(t), ovp_tensor_len(t), ovp_tensor_dtype(t)), (2, 6, 1));
        let mut dims = [0usize; 1];
        assert_eq!(ovp_tensor_shape(t, dims.as_mut_ptr(), 1), OvpStatus::BufferTooSmall);
        let mut dims = [0usize; 2];
        assert_eq!(ovp_tensor_shape(t, dims.as_mut_ptr(), 2), OvpStatus::Ok);
        assert_eq!(dims, [2, 3]);
        let mut buf = vec![0.0; 6];
        assert_eq!(ovp_tensor_copy_f64(t, buf.as_mut_ptr(), 6), OvpStatus::Ok);
        assert_eq!(buf, data.iter().map(|&v| v as f64).collect::<Vec<_>>());
        ovp_tensor_free(t);
        ovp_tensor_free(ptr::null_mut());
    }
}

#[test]
fn read_errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope.ovt").to_str().unwrap()).unwrap();
    let mut t = ptr::null_mut();
    unsafe {
        assert_eq!(ovp_tensor_read(missing.as_ptr(), &mut t), OvpStatus::Io);
        assert!(t.is_null());
        assert!(last_error().contains("nope.ovt"));
        let bad = dir.path().join("bad.ovt");
        std::fs::write(&bad, b"NOPE0000000000000000").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(ovp_tensor_read(bad.as_ptr(), &mut t), OvpStatus::Format);
        assert_eq!(ovp_tensor_read(ptr::null(), &mut t), OvpStatus::NullPointer);
        assert_eq!(ovp_tensor_read(bad.as_ptr(), ptr::null_mut()), OvpStatus::NullPointer);
        assert_eq!(ovp_tensor_rank(ptr::null()), 0);
    }
}

#[test]
fn scalar_functions() {
    let v = [0.0, 0.0, 3.0, 0.0];
    let mut s = OvpSaturation::default();
    unsafe {
        assert_eq!(ovp_saturation_profile(v.as_ptr(), 4, &mut s), OvpStatus::Ok);
        assert!((s.hoyer - 1.0).abs() < 1e-12);
        let core = overflow_probe::saturation::saturation_profile(&v).unwrap();
        assert_eq!((s.spectral_entropy, s.excess_kurtosis), (core.spectral_entropy, core.excess_kurtosis));
        let zero = [0.0; 4];
        assert_eq!(ovp_saturation_profile(zero.as_ptr(), 4, &mut s), OvpStatus::Domain);

        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0u8, 0, 1, 1];
        let mut auc = 0.0;
        assert_eq!(ovp_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc), OvpStatus::Ok);
        assert_eq!(auc, 0.75);
        let ones = [1u8; 4];
        assert_eq!(ovp_roc_auc(scores.as_ptr(), ones.as_ptr(), 4, &mut auc), OvpStatus::SingleClass);
        assert!(last_error().contains("single class"));

        let text = b"abcabcabcabcabcabcabcabc";
        let mut r = 0.0;
        assert_eq!(ovp_compressibility(text.as_ptr(), text.len(), &mut r), OvpStatus::Ok);
        assert!(r > 1.0);
        assert_eq!(ovp_compressibility(ptr::null(), 0, &mut r), OvpStatus::Domain);
    }
}

#[test]
fn model_predictions_match_core() {
    let n = 60;
    let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0 + (i % 2) as f64 * 2.0);
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let model = train_probe(x.view(), &y, &ProbeConfig::for_architecture(Architecture::Logistic)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    artifact::save_model(&model, dir.path()).unwrap();
    let expected = predict_scores(&model, x.view()).unwrap();

    let c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(ovp_model_load(c.as_ptr(), &mut m), OvpStatus::Ok);
        assert_eq!(ovp_model_input_dim(m), 3);
        let flat: Vec<f64> = x.iter().copied().collect();
        let mut out = vec![0.0; n];
        assert_eq!(ovp_model_predict(m, flat.as_ptr(), n, 3, out.as_mut_ptr()), OvpStatus::Ok);
        assert_eq!(out, expected);
        assert_eq!(ovp_model_predict(m, flat.as_ptr(), n / 2, 6, out.as_mut_ptr()), OvpStatus::DimensionMismatch);
        ovp_model_free(m);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ovp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/overflow_probe.h")).unwrap();
    for name in [
        "ovp_last_error",
        "ovp_version",
        "ovp_tensor_read",
        "ovp_tensor_shape",
        "ovp_tensor_copy_f64",
        "ovp_tensor_free",
        "ovp_saturation_profile",
        "ovp_roc_auc",
        "ovp_compressibility",
        "ovp_model_load",
        "ovp_model_predict",
        "ovp_model_free",
        "typedef struct OvpTensor OvpTensor",
        "typedef struct OvpModel OvpModel",
        "OVP_STATUS_OK = 0",
        "OVP_STATUS_PANIC = 10",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg(format!("-I{}/include", env!("CARGO_MANIFEST_DIR")))
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child
                .stdin
                .take()
                .unwrap()
                .write_all(b"#include \"overflow_probe.h\"\nint main(void) { OvpSaturation s; return ovp_saturation_profile(0, 0, &s) == OVP_STATUS_OK; }\n")?;
            child.wait_with_output()
        })
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
