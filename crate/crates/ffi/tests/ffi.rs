use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mns_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mns_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn transition_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.txt").to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(mns_transition_symmetric(4, 0.5, &mut t), MnsStatus::Ok);
        assert_eq!(mns_transition_save(t, path.as_ptr()), MnsStatus::Ok);
        let mut u = ptr::null_mut();
        assert_eq!(mns_transition_load(path.as_ptr(), &mut u), MnsStatus::Ok);
        let (mut a, mut b) = ([0.0; 16], [0.0; 16]);
        assert_eq!(mns_transition_values(t, a.as_mut_ptr(), 16), MnsStatus::Ok);
        assert_eq!(mns_transition_values(u, b.as_mut_ptr(), 16), MnsStatus::Ok);
        assert_eq!(a, b);
        let mut e = -1.0;
        assert_eq!(mns_estimation_error(t, u, &mut e), MnsStatus::Ok);
        assert_eq!(e, 0.0);
        mns_transition_free(t);
        mns_transition_free(u);
    }
}

#[test]
fn invalid_rows_are_rejected_with_message() {
    let rows = [0.5, 0.6, 0.5, 0.5];
    let mut t = ptr::null_mut();
    let status = unsafe { mns_transition_from_rows(rows.as_ptr(), 2, &mut t) };
    assert_eq!(status, MnsStatus::InvalidInput);
    assert!(t.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_report_null_pointer() {
    unsafe {
        assert_eq!(mns_transition_symmetric(3, 0.2, ptr::null_mut()), MnsStatus::NullPointer);
        assert_eq!(mns_model_load(ptr::null(), &mut ptr::null_mut()), MnsStatus::NullPointer);
        assert_eq!(mns_transition_classes(ptr::null()), 0);
        mns_transition_free(ptr::null_mut());
        mns_model_free(ptr::null_mut());
        mns_string_free(ptr::null_mut());
    }
}

#[test]
fn identity_layer_matches_uncorrected_loss() {
    let g1 = [0.2, 0.5, 0.3];
    let g2 = [0.6, 0.1, 0.3];
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(mns_transition_from_rows(eye.as_ptr(), 3, &mut t), MnsStatus::Ok);
        let (mut l1, mut l2) = (0.0, 0.0);
        let (mut a1, mut a2, mut b1, mut b2) = ([0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]);
        let s1 = mns_pair_loss(g1.as_ptr(), g2.as_ptr(), 3, ptr::null(), 0.0, &mut l1, a1.as_mut_ptr(), a2.as_mut_ptr());
        let s2 = mns_pair_loss(g1.as_ptr(), g2.as_ptr(), 3, t, 0.0, &mut l2, b1.as_mut_ptr(), b2.as_mut_ptr());
        assert_eq!((s1, s2), (MnsStatus::Ok, MnsStatus::Ok));
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        mns_transition_free(t);
    }
}

#[test]
fn bound_rejects_bad_delta() {
    let frob = [1.0];
    let inputs = MnsBoundInputs {
        input_bound: 1.0,
        classes: 2,
        depth: 1,
        frobenius: frob.as_ptr(),
        loss_bound: 1.0,
        delta: 1.5,
        pairs: 10,
    };
    let mut out = 0.0;
    assert_eq!(unsafe { mns_generalization_bound(&inputs, &mut out) }, MnsStatus::InvalidInput);
}

#[test]
fn experiment_and_model_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(
        "seed = 3\nmethod = \"mns_true_t\"\n[data]\nsource = \"blobs\"\nper_class = 40\ntest_per_class = 20\ndim = 4\n\
         [training]\nepochs = 2\nbatch_size = 32\n",
    )
    .unwrap();
    let mut json = ptr::null_mut();
    let status = unsafe { mns_run_experiment(cfg.as_ptr(), &mut json) };
    assert_eq!(status, MnsStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { mns_string_free(json) };
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["method"], "mns_true_t");
    let acc = report["test"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // a two-layer model written in the checkpoint format
    let model_path = dir.path().join("m.model");
    std::fs::write(
        &model_path,
        "mns-model 1\nactivation relu\nlayers 2\nlayer 2 2 bias\n1 0\n0 1\n0 0\nlayer 2 2 nobias\n1 0\n0 1\n",
    )
    .unwrap();
    let p = CString::new(model_path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mns_model_load(p.as_ptr(), &mut m), MnsStatus::Ok, "{}", last_error());
        assert_eq!(mns_model_num_classes(m), 2);
        assert_eq!(mns_model_input_dim(m), 2);
        assert_eq!(mns_model_depth(m), 2);
        let x = [0.0, 0.0, 1.0, -1.0];
        let mut out = [0.0; 4];
        assert_eq!(mns_model_predict_proba(m, x.as_ptr(), 2, 2, out.as_mut_ptr(), 4), MnsStatus::Ok);
        assert_eq!(out[0], 0.5);
        let e = 1f64.exp();
        assert!((out[2] - e / (e + 1.0)).abs() < 1e-15);
        let mut norms = [0.0; 2];
        assert_eq!(mns_model_frobenius_norms(m, norms.as_mut_ptr(), 2), MnsStatus::Ok);
        assert_eq!(norms, [2f64.sqrt(), 2f64.sqrt()]);
        assert_eq!(
            mns_model_predict_proba(m, x.as_ptr(), 2, 2, out.as_mut_ptr(), 3),
            MnsStatus::BufferTooSmall
        );
        mns_model_free(m);
    }
}

/// Compile a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libmns_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("mns_smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
