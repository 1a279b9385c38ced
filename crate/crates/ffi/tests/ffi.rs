use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use immersion_ffi::*;

fn last_error() -> String {
    let p = imm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { imm_string_free(p) };
    s
}

const SPEC: &str = r#"{
    "m": 1,
    "interval": [-1.0, 1.0],
    "family": { "kind": "constant", "dim": 2, "max_norm": 1.0 },
    "encoder": { "kind": "affine_squashed" },
    "flow": { "step_size_max": 1.0 }
}"#;

fn segment_points(n: usize) -> Vec<f64> {
    (0..n).flat_map(|i| [i as f64 / (n - 1) as f64, 0.0]).collect()
}

fn fitted() -> *mut ImmModel {
    let pts = segment_points(30);
    let spec = CString::new(SPEC).unwrap();
    let train = CString::new(r#"{ "max_iters": 800, "restarts": 2 }"#).unwrap();
    let mut model = ptr::null_mut();
    let mut risk = f64::NAN;
    let st = unsafe { imm_fit(pts.as_ptr(), 30, 2, spec.as_ptr(), train.as_ptr(), &mut model, &mut risk) };
    assert_eq!(st, ImmStatus::Ok, "{}", last_error());
    assert!(risk <= 1e-2, "{risk}");
    model
}

#[test]
fn fit_reconstruct_and_round_trip() {
    let model = fitted();
    let (mut d, mut m) = (0usize, 0usize);
    assert_eq!(unsafe { imm_model_dims(model, &mut d, &mut m) }, ImmStatus::Ok);
    assert_eq!((d, m), (2, 1));

    let x = [0.5, 0.0];
    let mut y = [0.0; 2];
    assert_eq!(unsafe { imm_model_reconstruct(model, x.as_ptr(), 2, y.as_mut_ptr()) }, ImmStatus::Ok);
    assert!(((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt() <= 0.05, "{y:?}");

    let pts = segment_points(11);
    let mut risk = f64::NAN;
    assert_eq!(unsafe { imm_model_empirical_risk(model, pts.as_ptr(), 11, 2, &mut risk) }, ImmStatus::Ok);
    assert!((0.0..=2e-2).contains(&risk), "{risk}");

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { imm_model_to_json(model, &mut json) }, ImmStatus::Ok);
    let text = CString::new(take_string(json)).unwrap();
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { imm_model_from_json(text.as_ptr(), &mut back) }, ImmStatus::Ok);
    let mut y2 = [0.0; 2];
    assert_eq!(unsafe { imm_model_reconstruct(back, x.as_ptr(), 2, y2.as_mut_ptr()) }, ImmStatus::Ok);
    assert_eq!(y, y2);
    unsafe {
        imm_model_free(back);
        imm_model_free(model);
    }
}

#[test]
fn errors_are_reported() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { imm_model_from_json(ptr::null(), &mut model) }, ImmStatus::NullPointer);
    assert!(last_error().contains("json"));

    let bad = CString::new("{ not json").unwrap();
    assert_eq!(unsafe { imm_model_from_json(bad.as_ptr(), &mut model) }, ImmStatus::Json);
    assert!(model.is_null());

    let invalid = [0x66u8, 0xff, 0x00];
    let st = unsafe { imm_model_from_json(invalid.as_ptr().cast(), &mut model) };
    assert_eq!(st, ImmStatus::InvalidUtf8);

    let (mut d, mut m) = (0usize, 0usize);
    assert_eq!(unsafe { imm_model_dims(ptr::null(), &mut d, &mut m) }, ImmStatus::NullPointer);

    let fitted = fitted();
    let x = [0.1, 0.2, 0.3];
    let mut y = [0.0; 3];
    let st = unsafe { imm_model_reconstruct(fitted, x.as_ptr(), 3, y.as_mut_ptr()) };
    assert_eq!(st, ImmStatus::DimensionMismatch);
    unsafe { imm_model_free(fitted) };

    let mut out = 0.0;
    assert_eq!(unsafe { imm_theorem2_certificate(1.0, 10, 1.5, 0.0, &mut out) }, ImmStatus::InvalidArgument);
    assert_eq!(unsafe { imm_theorem2_certificate(1.0, 2, (-1.0f64).exp(), 0.0, &mut out) }, ImmStatus::Ok);
    assert!((out - 1.0).abs() < 1e-15);
    assert!(imm_last_error_message().is_null());

    unsafe {
        imm_model_free(ptr::null_mut());
        imm_string_free(ptr::null_mut());
    }
}

#[test]
fn fit_blow_up_is_numeric() {
    let spec = CString::new(
        r#"{ "m": 1, "interval": [0.0, 5000.0], "family": { "kind": "affine", "dim": 2 }, "flow": { "step_size_max": 1.0 } }"#,
    )
    .unwrap();
    let train = CString::new(r#"{ "max_iters": 3, "restarts": 1 }"#).unwrap();
    let pts = segment_points(5);
    let mut model = ptr::null_mut();
    let st = unsafe { imm_fit(pts.as_ptr(), 5, 2, spec.as_ptr(), train.as_ptr(), &mut model, ptr::null_mut()) };
    assert_eq!(st, ImmStatus::Numeric, "{}", last_error());
    assert!(model.is_null());
}

#[test]
fn bound_report_json() {
    let class = CString::new(
        r#"{
            "m": 2, "d": 2, "interval": [0.0, 1.0],
            "comparison": { "kind": "exp_stable", "lambda": 1.0 },
            "l0": 1.5, "l": 0.0,
            "encoder_family": { "params": 4, "covering_constant": 2.0 },
            "field_family": { "params": 6, "covering_constant": 3.0 },
            "k": { "radius": 1.0 },
            "diameter": 200.0
        }"#,
    )
    .unwrap();
    let opts = CString::new(r#"{ "gamma_resolution": 12 }"#).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { imm_bound_report(class.as_ptr(), 100, opts.as_ptr(), &mut out) }, ImmStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert!(report["example_closed_form"]["closed_form_match"].as_f64().unwrap() <= 0.05);
    assert_eq!(report["n"], 100);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { imm_bound_report(class.as_ptr(), 0, ptr::null(), &mut out) }, ImmStatus::InvalidArgument);
    assert!(out.is_null());
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(imm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/immersion.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        "#include \"immersion.h\"\nint main(void) { ImmModel *m = 0; imm_model_free(m); return IMM_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success()),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
