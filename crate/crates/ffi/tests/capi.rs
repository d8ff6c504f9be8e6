use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use qpkr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qpkr_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn preset(label: &str) -> *mut QpkrParams {
    let label = CString::new(label).unwrap();
    let mut ps = ptr::null_mut();
    assert_eq!(
        unsafe { qpkr_params_preset(label.as_ptr(), &mut ps) },
        QpkrStatus::Ok
    );
    ps
}

#[test]
fn preset_and_kick_amplitude() {
    let ps = preset("A");
    assert_eq!(unsafe { qpkr_params_kbar(ps) }, 2.89);
    let mut k = 0.0;
    assert_eq!(
        unsafe { qpkr_kick_amplitude(ps, 4.0, 0.1, 1, &mut k) },
        QpkrStatus::Ok
    );
    assert!((k - 3.972_442_456_528_332_5).abs() < 1e-14);
    unsafe { qpkr_params_free(ps) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let label = CString::new("Q").unwrap();
    let mut ps = ptr::null_mut();
    assert_eq!(
        unsafe { qpkr_params_preset(label.as_ptr(), &mut ps) },
        QpkrStatus::Config
    );
    assert!(ps.is_null());
    assert!(last_error().contains("unknown preset"));
    assert_eq!(
        unsafe { qpkr_params_preset(ptr::null(), &mut ps) },
        QpkrStatus::NullPointer
    );
    assert_eq!(
        unsafe { qpkr_kick_amplitude(ptr::null(), 1.0, 0.0, 0, &mut 0.0) },
        QpkrStatus::NullPointer
    );
    let bad = CString::new("kbar = 1").unwrap();
    assert_eq!(
        unsafe { qpkr_params_from_toml(bad.as_ptr(), &mut ps) },
        QpkrStatus::Parse
    );

    let ok = CString::new("A").unwrap();
    assert_eq!(
        unsafe { qpkr_params_preset(ok.as_ptr(), &mut ps) },
        QpkrStatus::Ok
    );
    assert_eq!(last_error(), "");
    unsafe { qpkr_params_free(ps) };
    unsafe { qpkr_params_free(ptr::null_mut()) };
}

#[test]
fn ensemble_through_the_handle() {
    let ps = preset("E");
    assert_eq!(unsafe { qpkr_params_set_kicks(ps, 20) }, QpkrStatus::Ok);
    let times = [1usize, 2, 5, 10, 20];
    let mut s = ptr::null_mut();
    let st = unsafe {
        qpkr_run_ensemble(
            ps,
            4.0,
            0.3,
            times.as_ptr(),
            times.len(),
            8,
            11,
            1,
            0,
            &mut s,
        )
    };
    assert_eq!(st, QpkrStatus::Ok, "{}", last_error());
    let n = unsafe { qpkr_series_len(s) };
    assert_eq!(n, 5);
    let mut t = vec![0usize; n];
    let mut p2 = vec![0.0; n];
    let mut pi0 = vec![0.0; n];
    unsafe {
        assert_eq!(qpkr_series_times(s, t.as_mut_ptr(), n), QpkrStatus::Ok);
        assert_eq!(
            qpkr_series_column(s, QpkrColumn::P2, p2.as_mut_ptr(), n),
            QpkrStatus::Ok
        );
        assert_eq!(
            qpkr_series_column(s, QpkrColumn::Pi0, pi0.as_mut_ptr(), n),
            QpkrStatus::Ok
        );
        assert_eq!(
            qpkr_series_column(s, QpkrColumn::P2Err, p2.as_mut_ptr(), 2),
            QpkrStatus::InvalidArgument
        );
    }
    assert_eq!(t, times);
    assert!(pi0.iter().all(|&x| (0.0..=1.0).contains(&x)));

    // same request through the library
    let lib = qpkr::engine::run_ensemble(
        &qpkr::model::ParameterSet {
            n_kicks: 20,
            ..qpkr::model::ParameterSet::preset("E").unwrap()
        },
        qpkr::model::ControlPoint::new(4.0, 0.3),
        4.0,
        &times,
        &qpkr::engine::EnsembleConfig::new(8, 11),
    )
    .unwrap();
    assert_eq!(pi0, lib.pi0);
    unsafe {
        qpkr_series_free(s);
        qpkr_params_free(ps);
    }
}

#[test]
fn weighted_mean_of_the_reported_table() {
    let t = qpkr::crit::reported_table();
    let nu: Vec<f64> = t.iter().map(|e| e.nu).collect();
    let sigma: Vec<f64> = t.iter().map(|e| e.sigma).collect();
    let mut out = QpkrWeightedMean::default();
    assert_eq!(
        unsafe { qpkr_weighted_mean(nu.as_ptr(), sigma.as_ptr(), 9, &mut out) },
        QpkrStatus::Ok
    );
    assert!((out.mean - 1.6343122).abs() < 1e-6);
    assert!((out.spread - 0.0488325).abs() < 1e-6);
    assert_eq!(
        unsafe { qpkr_weighted_mean(nu.as_ptr(), sigma.as_ptr(), 1, &mut out) },
        QpkrStatus::Config
    );
}

#[test]
fn critical_fit_on_exact_points() {
    let (alpha, q_c, nu, beta) = (0.05, 6.67, 1.58, 0.01);
    let q: Vec<f64> = (0..20).map(|i| 5.5 + 2.3 * i as f64 / 19.0).collect();
    let xi: Vec<f64> = q
        .iter()
        .map(|&x| 1.0 / (alpha * f64::abs(x - q_c).powf(nu) + beta))
        .collect();
    let err = [0.01; 20];
    let loc: Vec<i32> = q.iter().map(|&x| (x < q_c) as i32).collect();
    let mut out = QpkrCriticalFit::default();
    let st = unsafe {
        qpkr_fit_critical(
            q.as_ptr(),
            xi.as_ptr(),
            err.as_ptr(),
            loc.as_ptr(),
            20,
            6.5,
            &mut out,
        )
    };
    assert_eq!(st, QpkrStatus::Ok, "{}", last_error());
    assert!(
        (out.q_c - q_c).abs() < 1e-6 && (out.nu - nu).abs() < 1e-6,
        "{out:?}"
    );
    assert!(out.chi2_per_dof < 1e-8);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("qpkr.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "qpkr_last_error",
        "qpkr_params_preset",
        "qpkr_run_ensemble",
        "qpkr_series_column",
        "qpkr_series_free",
        "qpkr_weighted_mean",
        "qpkr_fit_critical",
        "typedef struct QpkrParams QpkrParams;",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libqpkr_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let out = tempfile_dir().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("smoke.c");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("a C compiler is required");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("qpkr-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
