//! Forward passes against activations produced by an independent float64
//! implementation (`tools/nn_reference.py`).

use std::path::PathBuf;

use satdeblur::io::RawRaster;
use satdeblur::nn::{load_weights, men_forward, pen_forward, Architecture, Tensor4, WeightsBundle};

const TOLERANCE: f64 = 1e-4;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/nn")
        .join(name)
}

fn tensor(name: &str) -> Tensor4 {
    let raw = RawRaster::read(&fixture(name)).unwrap();
    Tensor4::new([1, raw.channels, raw.height, raw.width], raw.planar()).unwrap()
}

fn check(case: &str, arch: Architecture) {
    let w = load_weights(&fixture(&format!("{case}.sdnw"))).unwrap();
    assert_eq!(w.arch(), arch);
    let x = tensor(&format!("{case}_input.sdbf"));
    let want = tensor(&format!("{case}_expected.sdbf"));
    let got = match arch {
        Architecture::Men => men_forward(&x, &w),
        Architecture::Pen => pen_forward(&x, &w),
    }
    .unwrap();
    assert_eq!(got.dims(), want.dims());
    let err = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= TOLERANCE, "{case}: max abs error {err:.3e}");
    // weights survive a save/load cycle unchanged
    assert_eq!(WeightsBundle::decode(&w.encode()).unwrap(), w);
}

#[test]
fn men_grey() {
    check("men_c1", Architecture::Men);
}

#[test]
fn men_colour() {
    check("men_c3", Architecture::Men);
}

#[test]
fn pen_grey_with_padding() {
    check("pen_c1", Architecture::Pen);
}

#[test]
fn pen_colour() {
    check("pen_c3", Architecture::Pen);
}
