use std::ffi::{CStr, CString};
use std::ptr;

use pice_ffi::*;

fn last_error() -> String {
    let p = pice_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn qfunction_to_greedy_policy() {
    // Q = [x u] H [x u]^T with a single state and action; greedy u = -x/2.
    let h = [1.0, 0.5, 0.5, 1.0];
    let mut q = ptr::null_mut();
    let mut pi = ptr::null_mut();
    unsafe {
        assert_eq!(pice_qfunction_from_matrix(h.as_ptr(), 2, 1, &mut q), PiceStatus::Ok);
        let mut v = 0.0;
        assert_eq!(pice_qfunction_value(q, [1.0].as_ptr(), 1, [1.0].as_ptr(), 1, &mut v), PiceStatus::Ok);
        assert!((v - 3.0).abs() < 1e-12);
        let mut eig = 0.0;
        assert_eq!(pice_qfunction_min_eigenvalue(q, &mut eig), PiceStatus::Ok);
        assert!((eig - 0.5).abs() < 1e-12);
        assert_eq!(pice_policy_greedy(q, &mut pi), PiceStatus::Ok);
        let mut u = [0.0];
        assert_eq!(pice_policy_act(pi, [0.8].as_ptr(), 1, u.as_mut_ptr(), 1), PiceStatus::Ok);
        assert!((u[0] + 0.4).abs() < 1e-9, "{u:?}");
        assert_eq!(pice_policy_act(pi, [0.8].as_ptr(), 1, u.as_mut_ptr(), 2), PiceStatus::Dimension);
        pice_policy_free(pi);
        pice_qfunction_free(q);
    }
}

#[test]
fn policy_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("policy.json"));
    let gain = [0.1, -0.2, 0.3, 0.0, -0.5, 0.25];
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(pice_policy_from_gain(gain.as_ptr(), 3, 2, &mut a), PiceStatus::Ok);
        assert_eq!(pice_policy_save(a, path.as_ptr()), PiceStatus::Ok);
        assert_eq!(pice_policy_load(path.as_ptr(), &mut b), PiceStatus::Ok);
        let x = [0.7, -0.3];
        let (mut ua, mut ub) = ([0.0; 3], [0.0; 3]);
        pice_policy_act(a, x.as_ptr(), 2, ua.as_mut_ptr(), 3);
        pice_policy_act(b, x.as_ptr(), 2, ub.as_mut_ptr(), 3);
        assert_eq!(ua, ub);
        pice_policy_free(a);
        pice_policy_free(b);
    }
}

#[test]
fn buffer_train_and_errors() {
    let mut buf = ptr::null_mut();
    unsafe {
        assert_eq!(pice_buffer_new(100, &mut buf), PiceStatus::Ok);
        let mut pi = ptr::null_mut();
        assert_eq!(pice_offline_train(buf, &mut pi, ptr::null_mut(), ptr::null_mut()), PiceStatus::DegenerateBatch);
        assert!(last_error().contains("empty"));

        let nan = [f64::NAN, 0.0];
        let s = pice_buffer_push(buf, nan.as_ptr(), 2, [0.0; 3].as_ptr(), 3, 0.0, [0.0; 2].as_ptr());
        assert_eq!(s, PiceStatus::InvalidSample);

        // Stable scalar-like dynamics driven by a rich action signal.
        let mut x = [0.5, -0.5];
        for k in 0..100 {
            let t = k as f64;
            let u = [(0.7 * t).sin() * 0.5, (1.3 * t).cos() * 0.5, (0.4 * t + 1.0).sin() * 0.5];
            let next = [
                0.9 * x[0] + 0.1 * x[1] + 0.2 * u[0] - 0.1 * u[1],
                0.8 * x[1] + 0.1 * u[1] + 0.2 * u[2],
            ];
            let g = x[0] * x[0] + x[1] * x[1] + 0.01 * u.iter().map(|v| v * v).sum::<f64>();
            assert_eq!(pice_buffer_push(buf, x.as_ptr(), 2, u.as_ptr(), 3, g, next.as_ptr()), PiceStatus::Ok);
            x = if k % 10 == 9 { [(t).sin(), (t).cos()] } else { next };
        }
        let g = 0.0;
        let full = pice_buffer_push(buf, x.as_ptr(), 2, [0.0; 3].as_ptr(), 3, g, x.as_ptr());
        assert_eq!(full, PiceStatus::InvalidInput);
        let mut n = 0;
        assert_eq!(pice_buffer_len(buf, &mut n), PiceStatus::Ok);
        assert_eq!(n, 100);

        let (mut updates, mut converged) = (0usize, false);
        assert_eq!(pice_offline_train(buf, &mut pi, &mut updates, &mut converged), PiceStatus::Ok);
        assert!(updates >= 1);
        let mut u = [0.0; 3];
        assert_eq!(pice_policy_act(pi, [0.1, 0.1].as_ptr(), 2, u.as_mut_ptr(), 3), PiceStatus::Ok);
        assert!(u.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        pice_policy_free(pi);
        pice_buffer_free(buf);

        assert_eq!(pice_buffer_len(ptr::null(), &mut n), PiceStatus::NullPointer);
        assert!(last_error().contains("buffer"));
    }
}

#[test]
fn run_config_reports_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cstr(&dir.path().join("absent.toml"));
    let out = cstr(dir.path());
    let s = unsafe { pice_run_config(cfg.as_ptr(), out.as_ptr(), 1) };
    assert_eq!(s, PiceStatus::Io);
    assert!(last_error().contains("absent.toml"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/pice.h");
    for name in [
        "pice_proj_psd",
        "pice_proj_intersection",
        "pice_qfunction_from_matrix",
        "pice_policy_greedy",
        "pice_buffer_push",
        "pice_offline_train",
        "pice_run_config",
        "pice_last_error_message",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
