//! PSNR and SSIM on `[0, 1]` images.
//!
//! SSIM follows the usual single-scale form: an 11×11 Gaussian window with
//! σ = 1.5 evaluated over valid positions only, `K1 = 0.01`, `K2 = 0.03`,
//! dynamic range 1. Colour inputs are reduced to luma
//! (0.299, 0.587, 0.114) first.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    /// The two images are equal; PSNR is unbounded.
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(v),
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.4} dB"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    a.expect_shape(b.shape())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64)
}

/// `10·log10(1 / MSE)` over all channels.
pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    let e = mse(a, b)?;
    Ok(if e == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(-10.0 * e.log10())
    })
}

fn luma(img: &Image) -> Vec<f64> {
    if img.channels() == 1 {
        return img.data().to_vec();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..r.len())
        .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `h × w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| g[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mu_x = filter_valid(&x, h, w, &g);
    let mu_y = filter_valid(&y, h, w, &g);
    let xx = filter_valid(&prod(&x, &x), h, w, &g);
    let yy = filter_valid(&prod(&y, &y), h, w, &g);
    let xy = filter_valid(&prod(&x, &y), h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cxy = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricReport {
    pub psnr: Psnr,
    pub ssim: f64,
}

impl MetricReport {
    /// Scores `estimate` against `reference`; the estimate is clipped to
    /// `[0, 1]` first.
    pub fn evaluate(estimate: &Image, reference: &Image) -> Result<Self> {
        let clipped = estimate.clamp(0.0, 1.0);
        Ok(MetricReport {
            psnr: psnr(&clipped, reference)?,
            ssim: ssim(&clipped, reference)?,
        })
    }
}

/// Corpus means. Identical pairs are counted but left out of the PSNR mean.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct MetricSummary {
    pub count: usize,
    pub identical: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricSummary {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Self {
        let (mut n, mut same, mut psum, mut ssum) = (0usize, 0usize, 0.0, 0.0);
        for r in reports {
            n += 1;
            ssum += r.ssim;
            match r.psnr {
                Psnr::Db(v) => psum += v,
                Psnr::Identical => same += 1,
            }
        }
        let finite = n - same;
        MetricSummary {
            count: n,
            identical: same,
            mean_psnr: if finite > 0 {
                psum / finite as f64
            } else {
                f64::NAN
            },
            mean_ssim: if n > 0 { ssum / n as f64 } else { f64::NAN },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;

    #[test]
    fn psnr_analytic_values() {
        let shape = Shape::new(4, 4, 1);
        let a = Image::filled(shape, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        let b = Image::filled(shape, 0.6);
        let p = psnr(&a, &b).unwrap().db().unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        let c = Image::filled(shape, 0.51);
        assert!((psnr(&a, &c).unwrap().db().unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(Shape::new(4, 5, 1), 0.5)).is_err());
    }

    #[test]
    fn ssim_of_constant_images_matches_closed_form() {
        let shape = Shape::new(16, 16, 1);
        let a = Image::filled(shape, 0.2);
        let b = Image::filled(shape, 0.7);
        let c1 = 0.0001;
        let expect = (2.0 * 0.2 * 0.7 + c1) / (0.04 + 0.49 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!(ssim(&a, &b).unwrap() < 1.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(Shape::new(10, 40, 1), 0.2);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn colour_uses_luma() {
        let shape = Shape::new(12, 12, 3);
        let a = Image::from_fn(shape, |y, x, c| ((y + x + c) % 5) as f64 / 5.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn summary_skips_identical_psnr() {
        let r = [
            MetricReport {
                psnr: Psnr::Db(20.0),
                ssim: 0.5,
            },
            MetricReport {
                psnr: Psnr::Identical,
                ssim: 1.0,
            },
            MetricReport {
                psnr: Psnr::Db(30.0),
                ssim: 0.6,
            },
        ];
        let s = MetricSummary::from_reports(&r);
        assert_eq!((s.count, s.identical), (3, 1));
        assert!((s.mean_psnr - 25.0).abs() < 1e-12);
        assert!((s.mean_ssim - 0.7).abs() < 1e-12);
    }
}
