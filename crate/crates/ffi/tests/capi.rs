use std::ffi::{CStr, CString};
use std::ptr;

use unpg_ffi::*;

fn last_error() -> String {
    let p = unpg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn loss_matches_closed_form() {
    let (pos, neg) = ([0.9], [0.2, 0.5]);
    let mut out = f64::NAN;
    let s = unsafe { unpg_unified_loss(pos.as_ptr(), 1, neg.as_ptr(), 2, 2.0, &mut out) };
    assert_eq!(s, UnpgStatus::Ok);
    let expected = (1.0 + (-1.4f64).exp() + (-0.8f64).exp()).ln();
    assert!((out - expected).abs() < 1e-14);
    assert!(unpg_last_error_message().is_null());
}

#[test]
fn unpg_loss_equals_merged() {
    let pos = [0.9];
    let (cl, ml) = ([0.2], [0.5]);
    let mut out = 0.0;
    let s = unsafe {
        unpg_unified_loss_unpg(
            pos.as_ptr(),
            1,
            cl.as_ptr(),
            1,
            ml.as_ptr(),
            1,
            2.0,
            &mut out,
        )
    };
    assert_eq!(s, UnpgStatus::Ok);
    let mut merged = 0.0;
    let neg = [0.2, 0.5];
    unsafe { unpg_unified_loss(pos.as_ptr(), 1, neg.as_ptr(), 2, 2.0, &mut merged) };
    assert!((out - merged).abs() < 1e-12);

    let s = unsafe {
        unpg_unified_loss_unpg(
            pos.as_ptr(),
            1,
            ptr::null(),
            0,
            ptr::null(),
            0,
            2.0,
            &mut out,
        )
    };
    assert_eq!(s, UnpgStatus::Ok);
    // No negatives at all: log(1 + 0).
    assert_eq!(out, 0.0);
}

#[test]
fn status_codes() {
    let mut out = 0.0;
    let neg = [0.1];
    let s = unsafe { unpg_unified_loss(ptr::null(), 0, neg.as_ptr(), 1, 1.0, &mut out) };
    assert_eq!(s, UnpgStatus::DataError);
    assert!(last_error().contains("positive"));

    let pos = [0.5];
    let s = unsafe { unpg_unified_loss(pos.as_ptr(), 1, neg.as_ptr(), 1, 0.0, &mut out) };
    assert_eq!(s, UnpgStatus::ConfigInvalid);
    assert!(last_error().contains("gamma"));

    let s = unsafe { unpg_unified_loss(ptr::null(), 3, neg.as_ptr(), 1, 1.0, &mut out) };
    assert_eq!(s, UnpgStatus::NullPointer);

    let s = unsafe { unpg_unified_loss(pos.as_ptr(), 1, neg.as_ptr(), 1, 1.0, ptr::null_mut()) };
    assert_eq!(s, UnpgStatus::NullPointer);
}

#[test]
fn filter_mask() {
    let sims = [0.0, 0.1, 0.2, 0.3, 1.0];
    let mut mask = [9u8; 5];
    let s = unsafe { unpg_filter_noise(sims.as_ptr(), 5, 1.0, mask.as_mut_ptr()) };
    assert_eq!(s, UnpgStatus::Ok);
    assert_eq!(mask, [1, 1, 1, 1, 0]);
    let s = unsafe { unpg_filter_noise(sims.as_ptr(), 5, -1.0, mask.as_mut_ptr()) };
    assert_eq!(s, UnpgStatus::ConfigInvalid);
    let s = unsafe { unpg_filter_noise(ptr::null(), 0, 1.0, ptr::null_mut()) };
    assert_eq!(s, UnpgStatus::DataError);
}

#[test]
fn metrics() {
    let pos = [0.9, 0.8, 0.4];
    let neg = [0.7, 0.3, 0.2, 0.1];
    let fars = [0.25, 0.0, 1.0];
    let mut tar = [0.0; 3];
    let s = unsafe {
        unpg_tar_at_far(
            pos.as_ptr(),
            3,
            neg.as_ptr(),
            4,
            fars.as_ptr(),
            3,
            tar.as_mut_ptr(),
        )
    };
    assert_eq!(s, UnpgStatus::Ok);
    assert_eq!(tar[0], 1.0);
    assert!((tar[1] - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(tar[2], 1.0);

    let (p, n) = ([0.9, 0.8], [0.1, 0.85]);
    let (mut acc, mut thr) = (0.0, 0.0);
    let s = unsafe { unpg_verification_accuracy(p.as_ptr(), 2, n.as_ptr(), 2, &mut acc, &mut thr) };
    assert_eq!(s, UnpgStatus::Ok);
    assert_eq!(acc, 0.75);

    let (p, n) = ([0.5, 0.5], [0.5]);
    let mut count = 0;
    let s = unsafe { unpg_overlap_count(p.as_ptr(), 2, n.as_ptr(), 1, 20, &mut count) };
    assert_eq!(s, UnpgStatus::Ok);
    assert_eq!(count, 1);
}

const CONFIG: &str = r#"{
  "data": {"num_classes": 4, "samples_per_class": 6, "dim": 4, "cluster_concentration": 2.0, "seed": 5},
  "train": {"batch_size": 8, "classes_per_batch": 4, "samples_per_class_per_batch": 2,
            "warmup_epochs": 1, "max_epochs": 2, "steps_per_epoch": 3,
            "loss": {"gamma": 16.0, "margin": {"variant": "cosface", "m": 0.2}}}
}"#;

#[test]
fn trainer_lifecycle() {
    let cfg = CString::new(CONFIG).unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { unpg_trainer_new(cfg.as_ptr(), &mut t) },
        UnpgStatus::Ok
    );
    assert!(!t.is_null());
    let (mut done, mut total) = (0, 0);
    unsafe { unpg_trainer_progress(t, &mut done, &mut total) };
    assert_eq!((done, total), (0, 6));
    let mut losses = Vec::new();
    for _ in 0..6 {
        let mut l = f64::NAN;
        assert_eq!(unsafe { unpg_trainer_step(t, &mut l) }, UnpgStatus::Ok);
        assert!(l.is_finite());
        losses.push(l);
    }
    assert_eq!(
        unsafe { unpg_trainer_step(t, ptr::null_mut()) },
        UnpgStatus::InvalidArgument
    );

    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { unpg_trainer_metrics_json(t, ptr::null(), &mut json) },
        UnpgStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { unpg_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["rank1"].as_f64().unwrap() <= 1.0);
    unsafe { unpg_trainer_free(t) };

    // Same config, same trajectory.
    let mut t2 = ptr::null_mut();
    unsafe { unpg_trainer_new(cfg.as_ptr(), &mut t2) };
    for &l in &losses {
        let mut l2 = 0.0;
        unsafe { unpg_trainer_step(t2, &mut l2) };
        assert_eq!(l.to_bits(), l2.to_bits());
    }
    unsafe { unpg_trainer_free(t2) };
    unsafe { unpg_trainer_free(ptr::null_mut()) };
}

#[test]
fn trainer_rejects_bad_config() {
    let mut t = ptr::null_mut();
    let bad = CString::new(CONFIG.replace("16.0", "-1.0")).unwrap();
    assert_eq!(
        unsafe { unpg_trainer_new(bad.as_ptr(), &mut t) },
        UnpgStatus::ConfigInvalid
    );
    assert!(t.is_null());
    let junk = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { unpg_trainer_new(junk.as_ptr(), &mut t) },
        UnpgStatus::ConfigInvalid
    );
    assert_eq!(
        unsafe { unpg_trainer_new(ptr::null(), &mut t) },
        UnpgStatus::NullPointer
    );
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(unpg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
