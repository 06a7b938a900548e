#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satdeblur::synth::{derive_seed, night_scene, synth_pair, NoiseModel, SynthConfig, SynthPair};
use satdeblur::{Image, Kernel, Shape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Image {
    Image::from_fn(shape, |_, _, _| rng.random_range(lo..hi))
}

/// Odd-sized kernel with random non-negative taps.
pub fn random_kernel(rng: &mut ChaCha8Rng, kh: usize, kw: usize) -> Kernel {
    let taps = (0..kh * kw).map(|_| rng.random_range(0.0..1.0)).collect();
    Kernel::normalized(kh, kw, taps).unwrap().0
}

pub fn random_odd(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    let n = rng.random_range(lo..=hi);
    if n % 2 == 0 {
        n - 1
    } else {
        n
    }
}

/// Textbook circular convolution written out with modular indices.
pub fn convolve_oracle(img: &Image, k: &Kernel) -> Image {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let (ch, cw) = ((k.height() / 2) as i64, (k.width() / 2) as i64);
    Image::from_fn(img.shape(), |y, x, c| {
        let mut acc = 0.0;
        for i in 0..k.height() {
            for j in 0..k.width() {
                let yy = (y as i64 - (i as i64 - ch)).rem_euclid(h) as usize;
                let xx = (x as i64 - (j as i64 - cw)).rem_euclid(w) as usize;
                acc += k.tap(i, j) * img.get(yy, xx, c);
            }
        }
        acc
    })
}

/// `img ⊗ K̃`: correlation with modular indices.
pub fn correlate_oracle(img: &Image, k: &Kernel) -> Image {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let (ch, cw) = ((k.height() / 2) as i64, (k.width() / 2) as i64);
    Image::from_fn(img.shape(), |y, x, c| {
        let mut acc = 0.0;
        for i in 0..k.height() {
            for j in 0..k.width() {
                let yy = (y as i64 + (i as i64 - ch)).rem_euclid(h) as usize;
                let xx = (x as i64 + (j as i64 - cw)).rem_euclid(w) as usize;
                acc += k.tap(i, j) * img.get(yy, xx, c);
            }
        }
        acc
    })
}

pub fn with_value(img: &Image, idx: usize, v: f64) -> Image {
    let s = img.shape();
    let mut data = img.data().to_vec();
    data[idx] = v;
    Image::new(s.height, s.width, s.channels, data).unwrap()
}

/// Saturated procedural pairs: candidates are drawn from the seed sequence
/// and kept when at least `min_clipped` of the blurry samples are 1.
pub fn saturated_set(
    base: u64,
    count: usize,
    size: usize,
    enlarge: (f64, f64),
    noise: NoiseModel,
    min_clipped: f64,
) -> Vec<SynthPair> {
    let mut out = Vec::new();
    let mut index = 0;
    while out.len() < count {
        let seed = derive_seed(base, index);
        index += 1;
        let scene = night_scene(Shape::new(size, size, 1), seed);
        let cfg = SynthConfig {
            enlarge,
            noise,
            seed,
            ..SynthConfig::default()
        };
        let pair = synth_pair(&scene, &cfg).unwrap();
        if pair.meta.clipped_fraction >= min_clipped {
            out.push(pair);
        }
        assert!(index < 1000, "fixture search did not terminate");
    }
    out
}
