//! Saturated blurry pair synthesis.
//!
//! Bright pixels of a sharp `[0, 1]` image are scaled up to emulate light
//! sources beyond the sensor range, the result is blurred with a random
//! motion kernel, and both the blurred and the sharp HDR images are clipped
//! to `[0, 1]`.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64`, whose stream is fixed
//! by the `rand_chacha` crate and independent of platform. Batch jobs derive
//! a per-image seed with [`derive_seed`] (SplitMix64 of `base ^ index`
//! mixing), so generation order does not matter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{map_ratio_oracle, LatentMap};
use crate::image::{Convolver, Image, Kernel, Shape};

pub const MAX_KERNEL_SIZE: usize = 33;
pub const MAX_NOISE_SIGMA: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Poisson counts at `peak` photons per unit intensity.
    Poisson {
        peak: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub threshold: (f64, f64),
    pub enlarge: (f64, f64),
    pub kernel_size: (usize, usize),
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            threshold: (0.75, 0.95),
            enlarge: (1.5, 5.0),
            kernel_size: (11, 33),
            noise: NoiseModel::None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (t0, t1) = self.threshold;
        if !(t0 > 0.0 && t0 <= t1 && t1 < 1.0) {
            return bad(format!(
                "threshold range ({t0}, {t1}) must satisfy 0 < min <= max < 1"
            ));
        }
        let (n0, n1) = self.enlarge;
        if !(n0 >= 1.0 && n0 <= n1 && n1.is_finite()) {
            return bad(format!("enlarge range ({n0}, {n1}) must satisfy 1 <= min <= max"));
        }
        let (k0, k1) = self.kernel_size;
        if k0 % 2 == 0 || k1 % 2 == 0 || k0 < 3 || k0 > k1 || k1 > MAX_KERNEL_SIZE {
            return bad(format!(
                "kernel size range ({k0}, {k1}) must be odd, ascending, within 3..={MAX_KERNEL_SIZE}"
            ));
        }
        match self.noise {
            NoiseModel::Gaussian { sigma } if !(0.0..=MAX_NOISE_SIGMA).contains(&sigma) => {
                bad(format!("noise sigma {sigma} must lie in [0, {MAX_NOISE_SIGMA}]"))
            }
            NoiseModel::Poisson { peak } if !(peak > 0.0 && peak.is_finite()) => {
                bad(format!("poisson peak {peak} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-item seed for batch generation.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multiplies every value above `threshold` by `factor`. No clipping.
pub fn enlarge_saturate(sharp: &Image, threshold: f64, factor: f64) -> Result<Image> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold {threshold} must lie in (0, 1]"
        )));
    }
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "enlarge factor {factor} must be >= 1"
        )));
    }
    if !sharp.is_observed_range() {
        return Err(Error::InvalidImage("sharp image must lie in [0, 1]".into()));
    }
    Ok(sharp.map(|v| if v > threshold { v * factor } else { v }))
}

/// Random camera-shake kernel of side `size` (odd, 3..=33).
pub fn generate_kernel(size: usize, seed: u64) -> Result<Kernel> {
    check_kernel_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = max_reach(size);
    let length = rng.random_range(0.4..1.0) * 2.0 * reach;
    trajectory_kernel(size, length, &mut rng)
}

/// Kernel from a trajectory spanning roughly `length` pixels. A zero length
/// gives the centred delta.
pub fn generate_kernel_with_length(size: usize, length: f64, seed: u64) -> Result<Kernel> {
    check_kernel_size(size)?;
    if !(length >= 0.0 && length.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "trajectory length {length} must be >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trajectory_kernel(size, length, &mut rng)
}

fn check_kernel_size(size: usize) -> Result<()> {
    if size.is_multiple_of(2) || !(3..=MAX_KERNEL_SIZE).contains(&size) {
        return Err(Error::InvalidParameter(format!(
            "kernel size {size} must be odd and within 3..={MAX_KERNEL_SIZE}"
        )));
    }
    Ok(())
}

/// Largest sample offset from the centre that keeps the bilinear splat and
/// the 3×3 smoothing inside the kernel window.
fn max_reach(size: usize) -> f64 {
    (size / 2) as f64 - 2.0
}

const TRAJECTORY_SAMPLES: usize = 96;
const SMOOTH_SIGMA: f64 = 0.5;

fn trajectory_kernel(size: usize, length: f64, rng: &mut ChaCha8Rng) -> Result<Kernel> {
    let reach = max_reach(size);
    if length <= 0.0 || reach <= 0.0 {
        return Kernel::delta(size);
    }
    // Random walk in velocity space: heading drifts, speed jitters.
    let mut heading = rng.random_range(0.0..2.0 * PI);
    let turn = Normal::new(0.0, 0.25).expect("valid sigma");
    let mut p = (0.0f64, 0.0f64);
    let mut points = Vec::with_capacity(TRAJECTORY_SAMPLES);
    points.push(p);
    for _ in 1..TRAJECTORY_SAMPLES {
        heading += turn.sample(rng);
        let speed = rng.random_range(0.5..1.5);
        p = (p.0 + speed * heading.cos(), p.1 + speed * heading.sin());
        points.push(p);
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0, a.1 + q.1));
    let (mx, my) = (mx / n, my / n);
    let extent = points
        .iter()
        .map(|q| (q.0 - mx).abs().max((q.1 - my).abs()))
        .fold(0.0, f64::max);
    if extent <= 0.0 {
        return Kernel::delta(size);
    }
    // span `length` pixels along the widest axis, capped by the window
    let scale = (0.5 * length).min(reach) / extent;
    let c = (size / 2) as f64;
    let mut grid = vec![0.0; size * size];
    for q in &points {
        let x = c + (q.0 - mx) * scale;
        let y = c + (q.1 - my) * scale;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as usize, y0 as usize);
        grid[yi * size + xi] += (1.0 - fx) * (1.0 - fy);
        grid[yi * size + xi + 1] += fx * (1.0 - fy);
        grid[(yi + 1) * size + xi] += (1.0 - fx) * fy;
        grid[(yi + 1) * size + xi + 1] += fx * fy;
    }
    let g1 = (-1.0 / (2.0 * SMOOTH_SIGMA * SMOOTH_SIGMA)).exp();
    let taps = [g1, 1.0, g1];
    let norm: f64 = taps.iter().sum();
    let smooth_axis = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let v = src[y * size + x];
                if v == 0.0 {
                    continue;
                }
                // the reach margin keeps the ±1 neighbours inside the window
                for (d, t) in taps.iter().enumerate() {
                    let (yy, xx) = if horizontal {
                        (y, x + d - 1)
                    } else {
                        (y + d - 1, x)
                    };
                    out[yy * size + xx] += v * t / norm;
                }
            }
        }
        out
    };
    let smoothed = smooth_axis(&smooth_axis(&grid, true), false);
    Kernel::normalized(size, size, smoothed).map(|(k, _)| k)
}

/// Synthesised training/testing sample.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub blurry: Image,
    pub gt: Image,
    pub kernel: Kernel,
    pub map_gt: LatentMap,
    pub meta: SynthMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub seed: u64,
    pub threshold: f64,
    pub enlarge: f64,
    pub kernel_size: usize,
    pub kernel_seed: u64,
    pub noise: NoiseModel,
    /// Fraction of blurry samples equal to 1.
    pub clipped_fraction: f64,
}

/// Draws threshold, factor and kernel from `cfg` and synthesises one pair.
pub fn synth_pair(sharp: &Image, cfg: &SynthConfig) -> Result<SynthPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let threshold = sample_range(&mut rng, cfg.threshold);
    let enlarge = sample_range(&mut rng, cfg.enlarge);
    let (k0, k1) = cfg.kernel_size;
    let kernel_size = k0 + 2 * rng.random_range(0..=(k1 - k0) / 2);
    let kernel_seed: u64 = rng.random();
    let kernel = generate_kernel(kernel_size, kernel_seed)?;
    let mut pair = synth_pair_with(sharp, &kernel, threshold, enlarge, cfg.noise, &mut rng)?;
    pair.meta.seed = cfg.seed;
    pair.meta.kernel_seed = kernel_seed;
    Ok(pair)
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Synthesises a pair with explicit parameters. Noise draws come from `rng`.
pub fn synth_pair_with(
    sharp: &Image,
    kernel: &Kernel,
    threshold: f64,
    enlarge: f64,
    noise: NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<SynthPair> {
    let hdr = enlarge_saturate(sharp, threshold, enlarge)?;
    let blur = Convolver::new(kernel, hdr.shape())?.forward(&hdr);
    let clipped = blur.clamp(0.0, 1.0);
    let blurry = match noise {
        NoiseModel::None => clipped.clone(),
        NoiseModel::Gaussian { sigma } => {
            let dist =
                Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
            Image::from_raw(
                clipped.shape(),
                clipped
                    .data()
                    .iter()
                    .map(|&v| (v + dist.sample(rng)).clamp(0.0, 1.0))
                    .collect(),
            )
        }
        NoiseModel::Poisson { peak } => Image::from_raw(
            blur.shape(),
            blur.data()
                .iter()
                .map(|&v| {
                    let lambda = (v * peak).max(0.0);
                    let count = if lambda > 0.0 {
                        Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(lambda)
                    } else {
                        0.0
                    };
                    (count / peak).clamp(0.0, 1.0)
                })
                .collect(),
        ),
    };
    let map_gt = map_ratio_oracle(&clipped, &hdr, kernel)?;
    let clipped_fraction =
        blurry.data().iter().filter(|&&v| v >= 1.0).count() as f64 / blurry.data().len() as f64;
    Ok(SynthPair {
        gt: hdr.clamp(0.0, 1.0),
        blurry,
        kernel: kernel.clone(),
        map_gt,
        meta: SynthMeta {
            seed: 0,
            threshold,
            enlarge,
            kernel_size: kernel.height(),
            kernel_seed: 0,
            noise,
            clipped_fraction,
        },
    })
}

/// Procedural low-light scene: a dim graded background, mid-grey blocks
/// and stripes, and small bright light sources near the top of the range.
pub fn night_scene(shape: Shape, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (shape.height as f64, shape.width as f64);
    let base = rng.random_range(0.03..0.10);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.01..0.05),
                rng.random_range(0.5..3.0) * 2.0 * PI / w,
                rng.random_range(0.5..3.0) * 2.0 * PI / h,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let tint: Vec<f64> = (0..shape.channels)
        .map(|_| rng.random_range(0.85..1.15))
        .collect();

    struct Block {
        y0: f64,
        x0: f64,
        y1: f64,
        x1: f64,
        level: f64,
        stripes: f64,
    }
    let blocks: Vec<Block> = (0..rng.random_range(5..10))
        .map(|_| {
            let bh = rng.random_range(0.1..0.45) * h;
            let bw = rng.random_range(0.08..0.35) * w;
            let y0 = rng.random_range(0.0..h - bh);
            let x0 = rng.random_range(0.0..w - bw);
            Block {
                y0,
                x0,
                y1: y0 + bh,
                x1: x0 + bw,
                level: rng.random_range(0.08..0.45),
                stripes: if rng.random_bool(0.5) {
                    rng.random_range(2.0..6.0)
                } else {
                    0.0
                },
            }
        })
        .collect();

    struct Light {
        y: f64,
        x: f64,
        r: f64,
        level: f64,
    }
    let lights: Vec<Light> = (0..rng.random_range(4..9))
        .map(|_| Light {
            y: rng.random_range(0.05..0.95) * h,
            x: rng.random_range(0.05..0.95) * w,
            r: rng.random_range(0.025..0.07) * w.min(h),
            level: rng.random_range(0.92..1.0),
        })
        .collect();

    Image::from_fn(shape, |y, x, c| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut v = base;
        for &(amp, fx, fy, ph) in &waves {
            v += amp * (fx * xf + fy * yf + ph).sin();
        }
        for b in &blocks {
            if yf >= b.y0 && yf < b.y1 && xf >= b.x0 && xf < b.x1 {
                v = b.level;
                if b.stripes > 0.0 && (((xf - b.x0) / b.stripes) as usize).is_multiple_of(2) {
                    v *= 0.6;
                }
            }
        }
        v *= tint[c];
        for l in &lights {
            let d = ((yf - l.y).powi(2) + (xf - l.x).powi(2)).sqrt();
            if d <= l.r {
                v = l.level;
            } else if d <= l.r + 1.0 {
                let t = d - l.r;
                v = v * t + l.level * (1.0 - t);
            }
        }
        v.clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enlarge_rule() {
        let img = Image::new(1, 3, 1, vec![0.8, 0.5, 1.0]).unwrap();
        let out = enlarge_saturate(&img, 0.75, 2.0).unwrap();
        assert_eq!(out.data(), &[1.6, 0.5, 2.0]);
        assert_eq!(enlarge_saturate(&img, 0.75, 1.0).unwrap(), img);
        assert!(enlarge_saturate(&img, 1.2, 2.0).is_err());
        assert!(enlarge_saturate(&img, 0.8, 0.5).is_err());
    }

    #[test]
    fn kernels_are_normalised_and_deterministic() {
        for (size, seed) in [(11, 1), (15, 2), (21, 3), (33, 4), (3, 5), (5, 6)] {
            let k = generate_kernel(size, seed).unwrap();
            assert_eq!(k.height(), size);
            assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(k.taps().iter().all(|&t| t >= 0.0));
            assert_eq!(generate_kernel(size, seed).unwrap(), k);
        }
        assert_ne!(generate_kernel(15, 1).unwrap(), generate_kernel(15, 2).unwrap());
        assert!(generate_kernel(12, 1).is_err());
        assert!(generate_kernel(35, 1).is_err());
    }

    #[test]
    fn kernel_centroid_is_centred() {
        let k = generate_kernel(25, 9).unwrap();
        let (mut cy, mut cx) = (0.0, 0.0);
        for i in 0..25 {
            for j in 0..25 {
                cy += i as f64 * k.tap(i, j);
                cx += j as f64 * k.tap(i, j);
            }
        }
        assert!((cy - 12.0).abs() < 1e-9 && (cx - 12.0).abs() < 1e-9, "{cy} {cx}");
    }

    #[test]
    fn zero_length_trajectory_is_delta() {
        let k = generate_kernel_with_length(15, 0.0, 3).unwrap();
        assert_eq!(k, Kernel::delta(15).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = SynthConfig {
            threshold: (0.75, 1.2),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            kernel_size: (12, 33),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            noise: NoiseModel::Gaussian { sigma: 0.1 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unsaturated_noiseless_pair_is_plain_blur() {
        let sharp = Image::from_fn(Shape::new(32, 32, 1), |y, x, _| {
            0.1 + 0.5 * ((x * y) % 7) as f64 / 7.0
        });
        let cfg = SynthConfig {
            seed: 5,
            ..Default::default()
        };
        let pair = synth_pair(&sharp, &cfg).unwrap();
        let blur = Convolver::new(&pair.kernel, sharp.shape())
            .unwrap()
            .forward(&sharp);
        assert_eq!(pair.blurry, blur);
        assert_eq!(pair.gt, sharp);
        assert!(pair.map_gt.data().iter().all(|&m| (m - 1.0).abs() < 1e-9));
    }

    #[test]
    fn delta_kernel_pair_equals_clipped_hdr() {
        let sharp = night_scene(Shape::new(24, 24, 3), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = Kernel::delta(3).unwrap();
        let pair = synth_pair_with(&sharp, &k, 0.8, 3.0, NoiseModel::None, &mut rng).unwrap();
        assert_eq!(pair.blurry, pair.gt);
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..8).map(|i| derive_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 8);
    }
}
