use std::ffi::{CStr, CString};
use std::ptr;

use nrdc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nrdc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn tiny_config() -> *mut NrdcConfig {
    let name = CString::new("lq_fbm_markov").unwrap();
    let profile = CString::new("smoke").unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(
            nrdc_config_from_preset(name.as_ptr(), profile.as_ptr(), &mut cfg),
            NrdcStatus::Ok
        );
        assert_eq!(nrdc_config_set_batches(cfg, 2), NrdcStatus::Ok);
    }
    cfg
}

#[test]
fn train_through_the_c_abi_is_deterministic() {
    unsafe {
        let cfg = tiny_config();
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(nrdc_train(cfg, 1, &mut a), NrdcStatus::Ok);
        assert_eq!(nrdc_train(cfg, 2, &mut b), NrdcStatus::Ok);
        let (mut mean, mut se) = (0.0, 0.0);
        assert_eq!(nrdc_run_evaluation(a, &mut mean, &mut se), NrdcStatus::Ok);
        assert!(mean > 0.0 && se > 0.0);
        let mut params = 0;
        assert_eq!(nrdc_run_param_count(a, &mut params), NrdcStatus::Ok);
        assert!(params > 0);

        let (mut ja, mut jb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(nrdc_run_result_json(a, &mut ja), NrdcStatus::Ok);
        assert_eq!(nrdc_run_result_json(b, &mut jb), NrdcStatus::Ok);
        assert_eq!(CStr::from_ptr(ja), CStr::from_ptr(jb));
        nrdc_string_free(ja);
        nrdc_string_free(jb);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(nrdc_run_save(a, path.as_ptr()), NrdcStatus::Ok);
        assert!(dir.path().join("policy.json").exists());

        nrdc_run_free(a);
        nrdc_run_free(b);
        nrdc_config_free(cfg);
    }
}

#[test]
fn config_round_trips_through_toml() {
    unsafe {
        let cfg = tiny_config();
        assert_eq!(nrdc_config_set_seed(cfg, 77), NrdcStatus::Ok);
        let mut text = ptr::null_mut();
        assert_eq!(nrdc_config_to_toml(cfg, &mut text), NrdcStatus::Ok);
        let s = CStr::from_ptr(text).to_str().unwrap().to_owned();
        assert!(s.contains("seed = 77"));
        let mut again = ptr::null_mut();
        assert_eq!(nrdc_config_from_toml(text, ptr::null(), &mut again), NrdcStatus::Ok);
        let mut text2 = ptr::null_mut();
        assert_eq!(nrdc_config_to_toml(again, &mut text2), NrdcStatus::Ok);
        assert_eq!(CStr::from_ptr(text2).to_str().unwrap(), s);
        nrdc_string_free(text);
        nrdc_string_free(text2);
        nrdc_config_free(again);

        assert_eq!(nrdc_config_set_seed(cfg, u64::MAX), NrdcStatus::Config);
        assert!(last_error().contains("seed"));
        nrdc_config_free(cfg);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("nope").unwrap();
        assert_eq!(
            nrdc_config_from_preset(bad.as_ptr(), ptr::null(), &mut cfg),
            NrdcStatus::Config
        );
        assert!(last_error().contains("nope"));
        assert!(cfg.is_null());

        assert_eq!(
            nrdc_config_from_preset(ptr::null(), ptr::null(), &mut cfg),
            NrdcStatus::NullPointer
        );
        assert!(last_error().contains("name"));

        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(
            nrdc_config_from_preset(invalid.as_ptr().cast(), ptr::null(), &mut cfg),
            NrdcStatus::InvalidUtf8
        );

        let text = CString::new("name = 1").unwrap();
        assert_eq!(
            nrdc_config_from_toml(text.as_ptr(), ptr::null(), &mut cfg),
            NrdcStatus::Config
        );

        let mut mean = 0.0;
        assert_eq!(
            nrdc_run_evaluation(ptr::null(), &mut mean, &mut mean),
            NrdcStatus::NullPointer
        );
        // freeing null handles is a no-op
        nrdc_config_free(ptr::null_mut());
        nrdc_run_free(ptr::null_mut());
        nrdc_signature_free(ptr::null_mut());
        nrdc_string_free(ptr::null_mut());
    }
}

#[test]
fn signatures_through_the_c_abi() {
    unsafe {
        // L-shaped path (0,0) -> (1,0) -> (1,1)
        let pts = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut sig = ptr::null_mut();
        assert_eq!(nrdc_signature_of_path(pts.as_ptr(), 3, 2, 2, &mut sig), NrdcStatus::Ok);
        let mut v = 0.0;
        assert_eq!(
            nrdc_signature_coeff(sig, [0usize, 1].as_ptr(), 2, &mut v),
            NrdcStatus::Ok
        );
        assert_eq!(v, 1.0);
        assert_eq!(
            nrdc_signature_coeff(sig, [1usize, 0].as_ptr(), 2, &mut v),
            NrdcStatus::Ok
        );
        assert_eq!(v, 0.0);
        assert_eq!(nrdc_signature_coeff(sig, ptr::null(), 0, &mut v), NrdcStatus::Ok);
        assert_eq!(v, 1.0);

        let mut len = 0;
        assert_eq!(nrdc_signature_len(sig, &mut len), NrdcStatus::Ok);
        assert_eq!(len, 1 + 2 + 4);
        let mut buf = vec![0.0; len];
        assert_eq!(
            nrdc_signature_values(sig, buf.as_mut_ptr(), 3),
            NrdcStatus::BufferTooSmall
        );
        assert_eq!(nrdc_signature_values(sig, buf.as_mut_ptr(), len), NrdcStatus::Ok);
        assert_eq!(buf, vec![1.0, 1.0, 1.0, 0.5, 1.0, 0.0, 0.5]);

        // retracing the path gives the identity
        let back = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let mut rev = ptr::null_mut();
        let mut both = ptr::null_mut();
        assert_eq!(nrdc_signature_of_path(back.as_ptr(), 3, 2, 2, &mut rev), NrdcStatus::Ok);
        assert_eq!(nrdc_signature_concat(sig, rev, &mut both), NrdcStatus::Ok);
        assert_eq!(nrdc_signature_values(both, buf.as_mut_ptr(), len), NrdcStatus::Ok);
        assert!(buf
            .iter()
            .zip([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .all(|(a, b)| (a - b).abs() < 1e-14));

        assert_eq!(
            nrdc_signature_of_path(pts.as_ptr(), 3, 2, 9, &mut both),
            NrdcStatus::InvalidArgument
        );
        nrdc_signature_free(sig);
        nrdc_signature_free(rev);
        nrdc_signature_free(both);
    }
}

#[test]
fn noise_and_gradcheck() {
    unsafe {
        let mut buf = vec![0.0; 2 * 4 * 3];
        assert_eq!(
            nrdc_noise_increments(0.3, 3, 1.0, 4, 5, 2, buf.as_mut_ptr(), buf.len()),
            NrdcStatus::Ok
        );
        let mut again = vec![0.0; buf.len()];
        assert_eq!(
            nrdc_noise_increments(0.3, 3, 1.0, 4, 5, 2, again.as_mut_ptr(), again.len()),
            NrdcStatus::Ok
        );
        assert_eq!(buf, again);
        assert!(buf.iter().all(|v| *v != 0.0));
        assert_eq!(
            nrdc_noise_increments(0.3, 3, 1.0, 4, 5, 2, buf.as_mut_ptr(), 5),
            NrdcStatus::BufferTooSmall
        );
        assert_eq!(
            nrdc_noise_increments(1.5, 3, 1.0, 4, 5, 2, buf.as_mut_ptr(), buf.len()),
            NrdcStatus::InvalidArgument
        );

        let mut passed = 0;
        assert_eq!(nrdc_gradcheck(0, 20, &mut passed), NrdcStatus::Ok);
        assert_eq!(passed, 1);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(nrdc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
