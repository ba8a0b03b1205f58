use std::ffi::{CStr, CString};
use std::ptr;

use cpmaps_ffi::*;

fn family(dim: usize, re: &[f64]) -> *mut CpmKrausFamily {
    let mut out = ptr::null_mut();
    let n = re.len() / (dim * dim);
    let st = unsafe { cpm_family_new(dim, n, re.as_ptr(), ptr::null(), &mut out) };
    assert_eq!(st, CpmStatus::CPM_OK);
    out
}

#[test]
fn apply_and_accessors() {
    // A = [[0, 1], [0, 0]]
    let f = family(2, &[0.0, 1.0, 0.0, 0.0]);
    unsafe {
        assert_eq!(cpm_family_dim(f), 2);
        assert_eq!(cpm_family_len(f), 1);
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut re = [0.0; 4];
        let mut im = [9.0; 4];
        assert_eq!(cpm_apply(f, x.as_ptr(), ptr::null(), re.as_mut_ptr(), im.as_mut_ptr()), CpmStatus::CPM_OK);
        // A X A* = [[x22, 0], [0, 0]]
        assert_eq!(re, [4.0, 0.0, 0.0, 0.0]);
        assert_eq!(im, [0.0; 4]);
        let mut r = -1.0;
        assert_eq!(cpm_spectral_radius(f, &mut r), CpmStatus::CPM_OK);
        assert!(r.abs() < 1e-9);
        cpm_family_free(f);
    }
}

#[test]
fn stein_and_strict_similarity() {
    // phi = (1/2) X (1/2): Q = sum 4^-k I = 4/3 I
    let f = family(2, &[0.5, 0.0, 0.0, 0.5]);
    let id = [1.0, 0.0, 0.0, 1.0];
    let mut x = [0.0; 4];
    let mut q = [0.0; 4];
    let mut v = CpmVerdict::CPM_VERDICT_UNDETERMINED;
    unsafe {
        assert_eq!(cpm_solve_stein(f, id.as_ptr(), ptr::null(), x.as_mut_ptr(), ptr::null_mut()), CpmStatus::CPM_OK);
        assert_eq!(
            cpm_similarity(f, CpmTarget::CPM_TARGET_STRICT, &mut v, q.as_mut_ptr(), ptr::null_mut()),
            CpmStatus::CPM_OK
        );
        cpm_family_free(f);
    }
    for (a, b) in x.iter().zip([4.0 / 3.0, 0.0, 0.0, 4.0 / 3.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(v, CpmVerdict::CPM_VERDICT_YES);
    assert!((q[0] - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn unitary_is_not_strict() {
    let f = family(2, &[0.0, 1.0, 1.0, 0.0]);
    let mut v = CpmVerdict::CPM_VERDICT_YES;
    let mut contractive = CpmVerdict::CPM_VERDICT_NO;
    unsafe {
        cpm_similarity(f, CpmTarget::CPM_TARGET_STRICT, &mut v, ptr::null_mut(), ptr::null_mut());
        cpm_similarity(f, CpmTarget::CPM_TARGET_CONTRACTIVE, &mut contractive, ptr::null_mut(), ptr::null_mut());
        let st = cpm_solve_stein(f, [1.0, 0.0, 0.0, 1.0].as_ptr(), ptr::null(), [0.0; 4].as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, CpmStatus::CPM_PRECONDITION);
        let msg = CStr::from_ptr(cpm_last_error_message()).to_str().unwrap();
        assert!(!msg.is_empty());
        cpm_family_free(f);
    }
    assert_eq!(v, CpmVerdict::CPM_VERDICT_NO);
    assert_eq!(contractive, CpmVerdict::CPM_VERDICT_YES);
}

#[test]
fn curvature_of_scalar_contraction() {
    // phi(X) = X/4 on C: phi*(I) = 1/4, D = 1 - phi(1) = 3/4 gives curv 1
    let f = family(1, &[0.5]);
    let d = [0.75];
    let mut c = 0.0;
    let mut conv = false;
    let mut chi = 0.0;
    let mut conv_chi = false;
    unsafe {
        assert_eq!(cpm_star_curvature(f, d.as_ptr(), ptr::null(), -1, &mut c, &mut conv), CpmStatus::CPM_OK);
        assert_eq!(cpm_euler_characteristic(f, d.as_ptr(), ptr::null(), -1, &mut chi, &mut conv_chi), CpmStatus::CPM_OK);
        cpm_family_free(f);
    }
    assert!(c.is_finite() && c >= 0.0);
    assert!(chi.is_finite() && chi >= 0.0);
}

#[test]
fn errors_and_nulls() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(cpm_family_new(2, 1, ptr::null(), ptr::null(), &mut out), CpmStatus::CPM_NULL_POINTER);
        assert!(out.is_null());
        let nan = [f64::NAN, 0.0, 0.0, 0.0];
        assert_eq!(cpm_family_new(2, 1, nan.as_ptr(), ptr::null(), &mut out), CpmStatus::CPM_MALFORMED_INPUT);
        assert_eq!(cpm_family_dim(ptr::null()), 0);
        let mut r = 0.0;
        assert_eq!(cpm_spectral_radius(ptr::null(), &mut r), CpmStatus::CPM_NULL_POINTER);
        cpm_family_free(ptr::null_mut());
        cpm_string_free(ptr::null_mut());
    }
}

#[test]
fn classify_json_round_trips() {
    let f = family(2, &[1.0, 0.0, 0.0, 0.5]);
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(cpm_classify_json(f, &mut s), CpmStatus::CPM_OK);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(s).to_str().unwrap()).unwrap();
        assert!((v["spectral_radius"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        cpm_string_free(s);
        cpm_family_free(f);
    }
}

#[test]
fn run_command_matches_cli() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.json");
    std::fs::write(&path, r#"{"dim": 2, "kraus": [[[[0.5,0],[0,0]],[[0,0],[0.5,0]]]]}"#).unwrap();
    let line = CString::new(format!("similarity --target strict --no-meta --format json --input {}", path.display())).unwrap();
    let mut out = ptr::null_mut();
    let mut code = -1;
    unsafe {
        let st = cpm_run_command(line.as_ptr(), &mut out, &mut code);
        assert_eq!(st, CpmStatus::CPM_OK, "{:?}", CStr::from_ptr(cpm_last_error_message()));
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        assert_eq!(v["results"]["verdict"], "yes");
        cpm_string_free(out);
        let bad = CString::new("no-such-command").unwrap();
        assert_eq!(cpm_run_command(bad.as_ptr(), &mut out, &mut code), CpmStatus::CPM_MALFORMED_INPUT);
    }
    assert_eq!(code, 0);
}
