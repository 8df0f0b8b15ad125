use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gassa_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gassa_last_error_message()) }.to_string_lossy().into_owned()
}

/// Row-major SPD matrices `R diag(top, bottom_i) Rᵀ` with a fixed 2×2 top block.
fn planted_set() -> Vec<Vec<f64>> {
    let rot = [
        [0.6, 0.0, -0.8, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.8, 0.0, 0.6, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    (0..6)
        .map(|i| {
            let diag = [2.0, 0.5, 1.0 + i as f64, 3.0 / (1.0 + i as f64)];
            let mut out = vec![0.0; 16];
            for r in 0..4 {
                for c in 0..4 {
                    out[r * 4 + c] = (0..4).map(|k| rot[r][k] * diag[k] * rot[c][k]).sum();
                }
            }
            out
        })
        .collect()
}

#[test]
fn fit_round_trip_through_handles() {
    unsafe {
        let set = gassa_matrix_set_new(4);
        for m in planted_set() {
            assert_eq!(gassa_matrix_set_push(set, m.as_ptr(), m.len()), GassaStatus::Ok);
        }
        assert_eq!(gassa_matrix_set_len(set), 6);
        assert_eq!(gassa_matrix_set_dim(set), 4);

        let mut opts = gassa_fit_options_default();
        opts.m = 2;
        opts.restarts = 3;
        opts.grad_tol = 1e-10;
        let mut res = ptr::null_mut();
        assert_eq!(gassa_fit(set, &opts, &mut res), GassaStatus::Ok, "{}", last_error());
        assert!(last_error().is_empty());

        let (mut d, mut m) = (0, 0);
        assert_eq!(gassa_fit_result_dims(res, &mut d, &mut m), GassaStatus::Ok);
        assert_eq!((d, m), (4, 2));
        let mut cost = f64::NAN;
        assert_eq!(gassa_fit_result_cost(res, &mut cost), GassaStatus::Ok);
        assert!(cost < 1e-8, "{cost}");

        let mut n = vec![0.0; 8];
        assert_eq!(gassa_fit_result_n_basis(res, n.as_mut_ptr(), n.len()), GassaStatus::Ok);
        let truth = [-0.8, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 1.0];
        let mut dist = f64::NAN;
        assert_eq!(gassa_grassmann_dist(4, 2, n.as_ptr(), truth.as_ptr(), &mut dist), GassaStatus::Ok);
        assert!(dist < 1e-3, "{dist}");

        let mut small = vec![0.0; 3];
        assert_eq!(gassa_fit_result_s_basis(res, small.as_mut_ptr(), small.len()), GassaStatus::BufferTooSmall);
        assert!(last_error().contains("need 8"));

        let json = gassa_fit_result_to_json(res);
        assert!(!json.is_null());
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        gassa_string_free(json);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["config"]["m"], 2);

        gassa_fit_result_free(res);
        gassa_matrix_set_free(set);
    }
}

#[test]
fn invalid_input_maps_to_status_codes() {
    unsafe {
        let set = gassa_matrix_set_new(2);
        let not_spd = [1.0, 2.0, 2.0, 1.0];
        assert_eq!(gassa_matrix_set_push(set, not_spd.as_ptr(), 4), GassaStatus::NotSpd);
        assert!(last_error().starts_with("NotSpd:"), "{}", last_error());
        let asym = [2.0, 1.0, 0.0, 2.0];
        assert_eq!(gassa_matrix_set_push(set, asym.as_ptr(), 4), GassaStatus::NotSymmetric);
        assert_eq!(gassa_matrix_set_push(set, not_spd.as_ptr(), 3), GassaStatus::InvalidArgument);
        assert_eq!(gassa_matrix_set_push(set, ptr::null(), 4), GassaStatus::NullPointer);
        assert_eq!(gassa_matrix_set_push(ptr::null_mut(), not_spd.as_ptr(), 4), GassaStatus::NullPointer);

        let eye = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(gassa_matrix_set_push(set, eye.as_ptr(), 4), GassaStatus::Ok);
        let mut opts = gassa_fit_options_default();
        let mut res = ptr::null_mut();
        assert_eq!(gassa_fit(set, &opts, &mut res), GassaStatus::InsufficientData);
        assert!(res.is_null());
        opts.metric = 7;
        assert_eq!(gassa_fit(set, &opts, &mut res), GassaStatus::InvalidArgument);

        let mut out = 0.0;
        assert_eq!(gassa_distance2(GASSA_METRIC_STEIN, 2, eye.as_ptr(), eye.as_ptr(), &mut out), GassaStatus::Ok);
        assert_eq!(out, 0.0);
        assert!(gassa_matrix_set_new(0).is_null());
        gassa_matrix_set_free(set);
        gassa_matrix_set_free(ptr::null_mut());
        gassa_fit_result_free(ptr::null_mut());
    }
}

#[test]
fn distance_and_mean_match_the_library() {
    unsafe {
        let x = [2.0, 0.0, 0.0, 1.0];
        let y = [1.0, 0.0, 0.0, 1.0];
        let mut d = 0.0;
        assert_eq!(gassa_distance2(GASSA_METRIC_AIRM, 2, x.as_ptr(), y.as_ptr(), &mut d), GassaStatus::Ok);
        assert!((d - 2f64.ln().powi(2)).abs() < 1e-14);

        let set = gassa_matrix_set_new(2);
        let a = [4.0, 0.0, 0.0, 1.0];
        let b = [1.0, 0.0, 0.0, 4.0];
        gassa_matrix_set_push(set, a.as_ptr(), 4);
        gassa_matrix_set_push(set, b.as_ptr(), 4);
        let mut mean = [0.0; 4];
        assert_eq!(gassa_mean(GASSA_METRIC_AIRM, set, mean.as_mut_ptr(), 4), GassaStatus::Ok);
        for (got, want) in mean.iter().zip([2.0, 0.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        gassa_matrix_set_free(set);
    }
}

#[test]
fn json_sets_load_and_missing_files_report_io() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.json");
    std::fs::write(&path, r#"[{"dim":2,"data":[2,0,0,1]},{"dim":2,"data":[1,0,0,3]}]"#).unwrap();
    unsafe {
        let mut set = ptr::null_mut();
        let c = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(gassa_matrix_set_read_json(c.as_ptr(), &mut set), GassaStatus::Ok);
        assert_eq!(gassa_matrix_set_len(set), 2);
        gassa_matrix_set_free(set);
        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(gassa_matrix_set_read_json(missing.as_ptr(), &mut other), GassaStatus::Io);
        assert!(other.is_null());
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(header_dir.join("gassa.h")).unwrap();
    for name in ["gassa_fit", "gassa_matrix_set_new", "gassa_last_error_message", "GASSA_STATUS_OK"] {
        assert!(header.contains(name), "{name}");
    }
    let lib = target_dir().join("libgassa_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping C link check: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include "gassa.h"
#include <stdio.h>
int main(void) {
    double x[4] = {2.0, 0.0, 0.0, 1.0};
    double y[4] = {1.0, 0.0, 0.0, 1.0};
    double d = -1.0;
    if (gassa_distance2(GASSA_METRIC_AIRM, 2, x, y, &d) != GASSA_STATUS_OK) return 1;
    GassaMatrixSet *set = gassa_matrix_set_new(2);
    double bad[4] = {1.0, 2.0, 2.0, 1.0};
    GassaStatus s = gassa_matrix_set_push(set, bad, 4);
    printf("%.12f %d %s\n", d, (int)s, gassa_last_error_message());
    gassa_matrix_set_free(set);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("0.480453013918 3 NotSpd:"), "{text}");
}
