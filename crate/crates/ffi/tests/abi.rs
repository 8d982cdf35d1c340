use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dragguide::data::synth_vehicle_dataset;
use dragguide::experiments::train_surrogate;
use dragguide::rng;
use dragguide::{Denoiser, MixtureDenoiser};
use dragguide_ffi::*;

fn last_error() -> String {
    let p = dg_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn schedule(sigmas: &[f64]) -> *mut DgSchedule {
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { dg_schedule_from_sigmas(sigmas.as_ptr(), sigmas.len(), &mut s) },
        DgStatus::Ok
    );
    s
}

#[test]
fn schedule_handle_round_trip() {
    let mut s = ptr::null_mut();
    let st = unsafe { dg_schedule_new(DgScheduleKind::LogLinear, 10, 0.1, 20.0, &mut s) };
    assert_eq!(st, DgStatus::Ok);
    assert!(dg_last_error_message().is_null());
    assert_eq!(unsafe { dg_schedule_steps(s) }, 10);
    let mut top = 0.0;
    assert_eq!(unsafe { dg_schedule_sigma(s, 10, &mut top) }, DgStatus::Ok);
    assert!((top - 20.0).abs() < 1e-12);
    assert_eq!(unsafe { dg_schedule_sigma(s, 11, &mut top) }, DgStatus::StepOutOfRange);
    assert!(last_error().contains("11"));
    unsafe { dg_schedule_free(s) };
}

#[test]
fn invalid_arguments_report_status_and_message() {
    let mut s = ptr::null_mut();
    let st = unsafe { dg_schedule_new(DgScheduleKind::Linear, 0, 0.0, 1.0, &mut s) };
    assert_eq!(st, DgStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(!last_error().is_empty());

    let bad = [2.0, 1.0];
    assert_eq!(
        unsafe { dg_schedule_from_sigmas(bad.as_ptr(), 2, &mut s) },
        DgStatus::InvalidArgument
    );
}

#[test]
fn null_pointers_are_rejected() {
    let mut out = 0.0;
    assert_eq!(
        unsafe { dg_schedule_sigma(ptr::null(), 0, &mut out) },
        DgStatus::NullPointer
    );
    assert_eq!(
        unsafe { dg_schedule_new(DgScheduleKind::Linear, 4, 0.0, 1.0, ptr::null_mut()) },
        DgStatus::NullPointer
    );
    assert_eq!(
        unsafe { dg_mixture_load(ptr::null(), &mut ptr::null_mut()) },
        DgStatus::NullPointer
    );
    assert_eq!(unsafe { dg_schedule_steps(ptr::null()) }, 0);
    assert_eq!(unsafe { dg_model_is_guidable(ptr::null()) }, 0);
    unsafe {
        dg_schedule_free(ptr::null_mut());
        dg_mixture_free(ptr::null_mut());
        dg_model_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let path = CString::new("/nonexistent/mixture.json").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dg_mixture_load(path.as_ptr(), &mut m) }, DgStatus::Io);
    assert!(m.is_null());
}

#[test]
fn worked_step_agrees_in_both_forms() {
    let s = schedule(&[0.5, 1.0, 2.0]);
    let (x, eps, g) = ([4.0], [2.0], [0.001]);
    let (mut a, mut b) = ([0.0], [0.0]);
    unsafe {
        assert_eq!(
            dg_guided_step(s, 2, x.as_ptr(), eps.as_ptr(), g.as_ptr(), 1, 400.0, a.as_mut_ptr()),
            DgStatus::Ok
        );
        assert_eq!(
            dg_pgd_step(s, 2, x.as_ptr(), eps.as_ptr(), g.as_ptr(), 1, 400.0, b.as_mut_ptr()),
            DgStatus::Ok
        );
    }
    let sigma = 2.0_f64;
    let expected = 4.0 - (2.0 - 1.0) * (2.0 + 400.0 * sigma / (sigma * sigma + 1.0).sqrt() * 0.001);
    assert!((a[0] - expected).abs() < 1e-12);
    assert!((a[0] - 1.6422291).abs() < 1e-7);
    assert!((b[0] - a[0]).abs() <= 1e-12);

    let mut c = [0.0];
    unsafe {
        assert_eq!(
            dg_ddim_step(s, 2, x.as_ptr(), eps.as_ptr(), 1, c.as_mut_ptr()),
            DgStatus::Ok
        );
        assert_eq!(
            dg_ddim_step(s, 3, x.as_ptr(), eps.as_ptr(), 1, c.as_mut_ptr()),
            DgStatus::StepOutOfRange
        );
        assert_eq!(
            dg_guided_step(s, 2, x.as_ptr(), eps.as_ptr(), g.as_ptr(), 1, -1.0, c.as_mut_ptr()),
            DgStatus::InvalidArgument
        );
        dg_schedule_free(s);
    }
    assert_eq!(c[0], 2.0);
}

#[test]
fn mixture_prediction_matches_the_library() {
    let mut r = rng::stream(3, 0);
    let pts: Vec<_> = (0..4).map(|_| rng::normal_tensor(&mut r, 2, 3, 3)).collect();
    let flat: Vec<f64> = pts.iter().flat_map(|p| p.as_slice().to_vec()).collect();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dg_mixture_empirical(flat.as_ptr(), 4, 2, 3, 3, &mut m) },
        DgStatus::Ok
    );

    let (mut c, mut h, mut w) = (0, 0, 0);
    assert_eq!(unsafe { dg_mixture_shape(m, &mut c, &mut h, &mut w) }, DgStatus::Ok);
    assert_eq!((c, h, w), (2, 3, 3));

    let y = rng::normal_tensor(&mut r, 2, 3, 3);
    let mut out = vec![0.0; 18];
    let st = unsafe { dg_mixture_predict_epsilon(m, y.as_slice().as_ptr(), 18, 1.5, ptr::null(), out.as_mut_ptr()) };
    assert_eq!(st, DgStatus::Ok);
    let reference = MixtureDenoiser::empirical(&pts)
        .unwrap()
        .predict_epsilon(&y, 1.5, None)
        .unwrap();
    assert_eq!(out.as_slice(), reference.as_slice());

    let st = unsafe { dg_mixture_predict_epsilon(m, y.as_slice().as_ptr(), 17, 1.5, ptr::null(), out.as_mut_ptr()) };
    assert_eq!(st, DgStatus::ShapeMismatch);
    let st = unsafe { dg_mixture_predict_epsilon(m, y.as_slice().as_ptr(), 18, 0.0, ptr::null(), out.as_mut_ptr()) };
    assert_eq!(st, DgStatus::InvalidArgument);
    let tag = CString::new("fastback").unwrap();
    let st = unsafe { dg_mixture_predict_epsilon(m, y.as_slice().as_ptr(), 18, 1.0, tag.as_ptr(), out.as_mut_ptr()) };
    assert_eq!(st, DgStatus::NoMatchingComponent);
    unsafe { dg_mixture_free(m) };
}

#[test]
fn sampling_is_deterministic_and_reaches_a_data_point() {
    let s = {
        let mut s = ptr::null_mut();
        assert_eq!(
            unsafe { dg_schedule_new(DgScheduleKind::LogLinear, 60, 0.0, 20.0, &mut s) },
            DgStatus::Ok
        );
        s
    };
    let points = [-2.0, 1.0, 5.0];
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dg_mixture_empirical(points.as_ptr(), 3, 1, 1, 1, &mut m) },
        DgStatus::Ok
    );
    let mut opts = dg_sample_options_default();
    opts.seed = 9;
    let (mut a, mut b) = ([0.0], [0.0]);
    unsafe {
        assert_eq!(
            dg_sample(m, ptr::null(), s, &opts, a.as_mut_ptr(), 1, ptr::null_mut()),
            DgStatus::Ok
        );
        assert_eq!(
            dg_sample(m, ptr::null(), s, &opts, b.as_mut_ptr(), 1, ptr::null_mut()),
            DgStatus::Ok
        );
    }
    assert_eq!(a, b);
    assert!(points.iter().any(|p| (p - a[0]).abs() < 1e-6), "{}", a[0]);

    opts.eta0 = 1.0;
    let st = unsafe { dg_sample(m, ptr::null(), s, &opts, a.as_mut_ptr(), 1, ptr::null_mut()) };
    assert_eq!(st, DgStatus::InvalidArgument);
    unsafe {
        dg_mixture_free(m);
        dg_schedule_free(s);
    }
}

#[test]
fn model_handle_matches_the_library() {
    let records = synth_vehicle_dataset(24, 4, 16).unwrap();
    let (model, _) = train_surrogate(&records, 10.0, false, 4, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.json");
    model.save(&file).unwrap();

    let cpath = CString::new(file.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dg_model_load(cpath.as_ptr(), &mut h) }, DgStatus::Ok);
    assert_eq!(unsafe { dg_model_is_guidable(h) }, 1);

    let img = &records[0].image;
    let (c, hh, w) = img.shape();
    let mut drag = 0.0;
    let mut grad = vec![0.0; img.len()];
    unsafe {
        assert_eq!(
            dg_model_predict_drag(h, img.as_slice().as_ptr(), c, hh, w, &mut drag),
            DgStatus::Ok
        );
        assert_eq!(
            dg_model_grad_drag(h, img.as_slice().as_ptr(), c, hh, w, grad.as_mut_ptr()),
            DgStatus::Ok
        );
    }
    assert_eq!(drag, model.predict_drag(img).unwrap());
    assert_eq!(grad.as_slice(), model.grad_drag(img).unwrap().as_slice());

    let mixture_points: Vec<f64> = records
        .iter()
        .take(3)
        .flat_map(|r| r.image.as_slice().to_vec())
        .collect();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dg_mixture_empirical(mixture_points.as_ptr(), 3, c, hh, w, &mut m) },
        DgStatus::Ok
    );
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { dg_schedule_new(DgScheduleKind::LogLinear, 8, 0.0, 20.0, &mut s) },
        DgStatus::Ok
    );
    let mut opts = dg_sample_options_default();
    opts.eta0 = 5.0;
    opts.kind = DgSamplerKind::DdimPgdForm;
    let mut state = vec![0.0; img.len()];
    let mut final_drag = f64::NAN;
    let st = unsafe { dg_sample(m, h, s, &opts, state.as_mut_ptr(), state.len(), &mut final_drag) };
    assert_eq!(st, DgStatus::Ok, "{}", last_error());
    assert!(final_drag.is_finite());
    unsafe {
        dg_mixture_free(m);
        dg_schedule_free(s);
        dg_model_free(h);
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let staticlib = target_dir().join("libdragguide_ffi.a");
    assert!(staticlib.exists(), "missing {}", staticlib.display());
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&staticlib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
