use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use satdeblur_ffi::*;

fn last_error() -> Option<String> {
    let p = sd_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn interleaved(h: usize, w: usize, c: usize) -> Vec<f64> {
    (0..h * w * c).map(|i| ((i * 37) % 101) as f64 / 120.0).collect()
}

unsafe fn image(h: usize, w: usize, c: usize, data: &[f64]) -> *mut SdImage {
    let mut out = ptr::null_mut();
    assert_eq!(sd_image_new(h, w, c, data.as_ptr(), &mut out), SdStatus::Ok);
    out
}

unsafe fn kernel(taps: &[f64], h: usize, w: usize) -> *mut SdKernel {
    let mut out = ptr::null_mut();
    assert_eq!(sd_kernel_new(h, w, taps.as_ptr(), &mut out), SdStatus::Ok);
    out
}

#[test]
fn image_data_round_trips_in_interleaved_order() {
    unsafe {
        let data = interleaved(5, 7, 3);
        let img = image(5, 7, 3, &data);
        let (mut h, mut w, mut c) = (0, 0, 0);
        assert_eq!(sd_image_dims(img, &mut h, &mut w, &mut c), SdStatus::Ok);
        assert_eq!((h, w, c), (5, 7, 3));
        let mut back = vec![0.0; data.len()];
        assert_eq!(
            sd_image_copy_data(img, back.as_mut_ptr(), back.len()),
            SdStatus::Ok
        );
        assert_eq!(back, data);
        assert_eq!(
            sd_image_copy_data(img, back.as_mut_ptr(), 3),
            SdStatus::InvalidArgument
        );
        assert!(last_error().unwrap().contains("buffer holds 3"));
        sd_image_free(img);
    }
}

#[test]
fn delta_kernel_unit_map_single_step_is_identity() {
    unsafe {
        let data = interleaved(12, 12, 1);
        let img = image(12, 12, 1, &data);
        let k = kernel(&[1.0], 1, 1);
        let mut cfg = ptr::null_mut();
        assert_eq!(sd_solver_config_new(&mut cfg), SdStatus::Ok);
        assert_eq!(sd_solver_config_set_map(cfg, cstr("unit").as_ptr()), SdStatus::Ok);
        assert_eq!(
            sd_solver_config_set_prior(cfg, cstr("none").as_ptr()),
            SdStatus::Ok
        );
        assert_eq!(sd_solver_config_set_iterations(cfg, 1), SdStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(sd_deblur(img, k, cfg, &mut out), SdStatus::Ok);
        assert!(last_error().is_none());
        // I·B/(B + ε) − I = −I·ε/(B + ε), at most ε in magnitude
        let mut got = vec![0.0; data.len()];
        sd_image_copy_data(out, got.as_mut_ptr(), got.len());
        let worst = got
            .iter()
            .zip(&data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-11, "{worst}");
        let mut psnr = 0.0;
        assert_eq!(sd_psnr(out, img, &mut psnr), SdStatus::Ok);
        assert!(psnr > 200.0);
        assert_eq!(sd_psnr(img, img, &mut psnr), SdStatus::Ok);
        assert_eq!(psnr, f64::INFINITY);
        let mut s = 0.0;
        assert_eq!(sd_ssim(img, img, &mut s), SdStatus::Ok);
        assert_eq!(s, 1.0);
        sd_image_free(out);
        sd_image_free(img);
        sd_kernel_free(k);
        sd_solver_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let img = image(8, 8, 1, &interleaved(8, 8, 1));
        let k = kernel(&[1.0; 9], 3, 3);
        let mut cfg = ptr::null_mut();
        sd_solver_config_new(&mut cfg);
        let mut out = ptr::null_mut();

        assert_eq!(
            sd_solver_config_set_map(cfg, cstr("bogus").as_ptr()),
            SdStatus::Ok
        );
        assert_eq!(sd_deblur(img, k, cfg, &mut out), SdStatus::Config);
        assert!(last_error().unwrap().contains("bogus"));
        assert!(out.is_null());

        sd_solver_config_set_map(cfg, cstr("men_cnn").as_ptr());
        assert_eq!(sd_deblur(img, k, cfg, &mut out), SdStatus::Config);
        let missing = cstr("/nonexistent/men.sdnw");
        sd_solver_config_set_weights(cfg, missing.as_ptr(), ptr::null());
        assert_eq!(sd_deblur(img, k, cfg, &mut out), SdStatus::Io);

        sd_solver_config_set_map(cfg, cstr("unit").as_ptr());
        sd_solver_config_set_clamp(cfg, 1, -1.0);
        assert_eq!(sd_deblur(img, k, cfg, &mut out), SdStatus::Config);

        assert_eq!(
            sd_deblur(ptr::null(), k, cfg, &mut out),
            SdStatus::InvalidArgument
        );
        assert_eq!(
            sd_image_new(2, 2, 1, ptr::null(), &mut out),
            SdStatus::InvalidArgument
        );
        let mut kout = ptr::null_mut();
        assert_eq!(
            sd_kernel_new(2, 2, [0.25; 4].as_ptr(), &mut kout),
            SdStatus::Config
        );
        let nan = [f64::NAN; 4];
        assert_eq!(
            sd_image_new(2, 2, 1, nan.as_ptr(), &mut out),
            SdStatus::InvalidArgument
        );
        let mut dummy = ptr::null_mut();
        assert_eq!(
            sd_image_read(cstr("/nonexistent.png").as_ptr(), &mut dummy),
            SdStatus::Io
        );

        let mut v = 0.0;
        let other = image(4, 4, 1, &interleaved(4, 4, 1));
        assert_eq!(sd_psnr(img, other, &mut v), SdStatus::Config);
        sd_image_free(other);

        // a later success clears the message
        assert_eq!(sd_solver_config_set_iterations(cfg, 3), SdStatus::Ok);
        assert!(last_error().is_none());

        sd_image_free(img);
        sd_kernel_free(k);
        sd_solver_config_free(cfg);
        sd_image_free(ptr::null_mut());
    }
}

#[test]
fn files_round_trip() {
    let tmp = tempfile::TempDir::new().unwrap();
    unsafe {
        let data = interleaved(6, 6, 3);
        let img = image(6, 6, 3, &data);
        let path = cstr(tmp.path().join("x.sdbf").to_str().unwrap());
        assert_eq!(sd_image_write(img, path.as_ptr()), SdStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(sd_image_read(path.as_ptr(), &mut back), SdStatus::Ok);
        let mut got = vec![0.0; data.len()];
        sd_image_copy_data(back, got.as_mut_ptr(), got.len());
        for (a, b) in got.iter().zip(&data) {
            assert_eq!(*a, *b as f32 as f64);
        }
        sd_image_free(img);
        sd_image_free(back);

        let kpath = tmp.path().join("k.txt");
        std::fs::write(&kpath, "3 1\n1\n2\n1\n").unwrap();
        let mut k = ptr::null_mut();
        assert_eq!(
            sd_kernel_read(cstr(kpath.to_str().unwrap()).as_ptr(), &mut k),
            SdStatus::Ok
        );
        sd_kernel_free(k);
    }
    let v = unsafe { CStr::from_ptr(sd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn static_lib() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent()
        .and_then(Path::parent)
        .unwrap()
        .join("libsatdeblur_ffi.a")
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(crate_dir().join("include/satdeblur.h")).unwrap();
    for name in [
        "sd_last_error_message",
        "sd_image_new",
        "sd_image_copy_data",
        "sd_kernel_new",
        "sd_solver_config_set_map",
        "sd_deblur",
        "sd_psnr",
        "typedef struct SdImage SdImage;",
        "SD_STATUS_NUMERICAL = 4",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let tmp = tempfile::TempDir::new().unwrap();
    let lib = static_lib();
    assert!(lib.is_file(), "{} not built", lib.display());
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir().join("tests/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("improved"), "{stdout}");
}
