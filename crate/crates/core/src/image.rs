//! Image and kernel containers plus circular convolution.
//!
//! Images are stored planar: all of channel 0 row by row, then channel 1, and
//! so on. Every convolution in this crate uses a periodic boundary, which is
//! what makes `1 ⊗ K̃ = 1` and the adjoint identity hold exactly.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Tolerance on `Σ taps = 1` accepted by [`Kernel::new`].
pub const KERNEL_SUM_TOLERANCE: f64 = 1e-6;

/// Kernels with at most this many taps are applied with the direct loop.
const DIRECT_TAP_LIMIT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A planar `height × width × channels` raster of finite, non-negative values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from planar data, rejecting wrong lengths, negative and
    /// non-finite values.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width, channels);
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image value {v}")));
        }
        if let Some(v) = data.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidImage(format!("negative image value {v}")));
        }
        Ok(Image { shape, data })
    }

    /// Internal constructor for results the caller has already validated.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Image { shape, data }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Image {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Builds an image by evaluating `f(y, x, c)` for every sample.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(y, x, c));
                }
            }
        }
        Image { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Applies `f` to every value. The result is not re-validated.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.expect_shape(other.shape)?;
        Ok(Image::from_raw(
            self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_observed_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(Error::shape(shape, self.shape))
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().find(|v| !v.is_finite()) {
            Some(v) => Err(Error::NonFinite(format!("{what} contains {v}"))),
            None => Ok(()),
        }
    }
}

/// A signed raster with the same layout as [`Image`], used for gradients and
/// prior fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    shape: Shape,
    data: Vec<f64>,
}

impl Field {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value {v}")));
        }
        Ok(Field { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Field {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// A normalised, odd-sized point-spread function.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Validates a kernel: odd sizes, non-negative finite taps, unit sum.
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        Self::check_layout(height, width, &taps)?;
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOLERANCE {
            return Err(Error::InvalidKernel(format!("taps sum to {sum}, expected 1")));
        }
        Ok(Kernel { height, width, taps })
    }

    /// Rescales taps to sum to one. Returns the kernel and the absolute
    /// correction `|Σ taps − 1|` that was applied.
    pub fn normalized(height: usize, width: usize, mut taps: Vec<f64>) -> Result<(Self, f64)> {
        Self::check_layout(height, width, &taps)?;
        let sum: f64 = taps.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidKernel("kernel taps sum to zero".into()));
        }
        taps.iter_mut().for_each(|t| *t /= sum);
        Ok((Kernel { height, width, taps }, (sum - 1.0).abs()))
    }

    fn check_layout(height: usize, width: usize, taps: &[f64]) -> Result<()> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!(
                "kernel size {height}x{width} must be odd in both dimensions"
            )));
        }
        if taps.len() != height * width {
            return Err(Error::shape(
                format!("{} taps", height * width),
                format!("{} taps", taps.len()),
            ));
        }
        if let Some(t) = taps.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::InvalidKernel(format!("invalid tap {t}")));
        }
        Ok(())
    }

    /// Centered unit impulse.
    pub fn delta(size: usize) -> Result<Self> {
        let mut taps = vec![0.0; size * size];
        if let Some(center) = taps.get_mut(size * size / 2) {
            *center = 1.0;
        }
        Kernel::new(size, size, taps)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, i: usize, j: usize) -> f64 {
        self.taps[i * self.width + j]
    }

    /// The adjoint kernel `K̃`: taps reversed along both axes.
    pub fn flip(&self) -> Kernel {
        Kernel {
            height: self.height,
            width: self.width,
            taps: self.taps.iter().rev().copied().collect(),
        }
    }

    fn fits(&self, shape: Shape) -> Result<()> {
        if self.height > shape.height || self.width > shape.width {
            return Err(Error::KernelTooLarge {
                kh: self.height,
                kw: self.width,
                h: shape.height,
                w: shape.width,
            });
        }
        Ok(())
    }
}

/// Reverses taps along both axes. `flip_kernel(&flip_kernel(k)) == k`.
pub fn flip_kernel(k: &Kernel) -> Kernel {
    k.flip()
}

/// Circular convolution `img ⊗ k`.
pub fn convolve(img: &Image, k: &Kernel) -> Result<Image> {
    Ok(Convolver::new(k, img.shape())?.forward(img))
}

/// Circular correlation `img ⊗ K̃`, the adjoint of [`convolve`].
pub fn adjoint_convolve(img: &Image, k: &Kernel) -> Result<Image> {
    Ok(Convolver::new(k, img.shape())?.adjoint(img))
}

/// Blends each border band of width `kh` (rows) or `kw` (columns) towards
/// `img ⊗ k` with a raised-cosine ramp. Suppresses ringing from the periodic
/// wrap on photographs whose opposite edges do not match.
pub fn edge_taper(img: &Image, k: &Kernel) -> Result<Image> {
    let blurred = convolve(img, k)?;
    let ramp = |d: usize, n: usize, band: usize| -> f64 {
        let d = d.min(n - 1 - d);
        if d >= band {
            1.0
        } else {
            0.5 - 0.5 * (std::f64::consts::PI * (d as f64 + 0.5) / band as f64).cos()
        }
    };
    let (h, w) = (img.height(), img.width());
    let weight: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| ramp(y, h, k.height) * ramp(x, w, k.width))
        .collect();
    let n = h * w;
    let data = img
        .data()
        .iter()
        .zip(blurred.data())
        .enumerate()
        .map(|(i, (&v, &b))| {
            let a = weight[i % n];
            a * v + (1.0 - a) * b
        })
        .collect();
    Ok(Image::from_raw(img.shape(), data))
}

/// Nested-loop circular convolution.
pub fn convolve_direct(img: &Image, k: &Kernel) -> Result<Image> {
    k.fits(img.shape())?;
    Ok(direct(img, k, false))
}

/// FFT circular convolution.
pub fn convolve_fft(img: &Image, k: &Kernel) -> Result<Image> {
    k.fits(img.shape())?;
    let plan = SpectralPlan::new(k, img.height(), img.width());
    Ok(plan.apply(img, false))
}

fn direct(img: &Image, k: &Kernel, adjoint: bool) -> Image {
    let (h, w) = (img.height(), img.width());
    let (ch, cw) = (k.height / 2, k.width / 2);
    let mut out = Image::zeros(img.shape());
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = &mut out.data_mut()[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for i in 0..k.height {
                    // convolution reads y - (i - ch), correlation reads y + (i - ch)
                    let yy = if adjoint {
                        (y + i + h - ch) % h
                    } else {
                        (y + h + ch - i) % h
                    };
                    let row = &src[yy * w..(yy + 1) * w];
                    for j in 0..k.width {
                        let xx = if adjoint {
                            (x + j + w - cw) % w
                        } else {
                            (x + w + cw - j) % w
                        };
                        acc += k.taps[i * k.width + j] * row[xx];
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

/// 2-D complex FFT over a fixed `h × w` grid.
struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            col_fwd: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex::new(0.0, 0.0); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                column[y] = buf[y * self.w + x];
            }
            col.process(&mut column);
            for y in 0..self.h {
                buf[y * self.w + x] = column[y];
            }
        }
    }
}

/// Kernel spectrum embedded on a periodic grid, reusable across images.
struct SpectralPlan {
    fft: Fft2,
    spectrum: Vec<Complex<f64>>,
}

impl SpectralPlan {
    fn new(k: &Kernel, h: usize, w: usize) -> Self {
        let fft = Fft2::new(h, w);
        let mut spectrum = vec![Complex::new(0.0, 0.0); h * w];
        let (ch, cw) = (k.height / 2, k.width / 2);
        for i in 0..k.height {
            for j in 0..k.width {
                let y = (i + h - ch) % h;
                let x = (j + w - cw) % w;
                spectrum[y * w + x].re += k.tap(i, j);
            }
        }
        fft.run(&mut spectrum, false);
        SpectralPlan { fft, spectrum }
    }

    fn apply(&self, img: &Image, adjoint: bool) -> Image {
        let n = self.fft.h * self.fft.w;
        let scale = 1.0 / n as f64;
        let mut out = Image::zeros(img.shape());
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for c in 0..img.channels() {
            for (b, &v) in buf.iter_mut().zip(img.plane(c)) {
                *b = Complex::new(v, 0.0);
            }
            self.fft.run(&mut buf, false);
            for (b, s) in buf.iter_mut().zip(&self.spectrum) {
                *b *= if adjoint { s.conj() } else { *s };
            }
            self.fft.run(&mut buf, true);
            for (o, b) in out.data_mut()[c * n..(c + 1) * n].iter_mut().zip(&buf) {
                *o = b.re * scale;
            }
        }
        out
    }
}

enum Method {
    Direct,
    Spectral(Box<SpectralPlan>),
}

/// A kernel bound to an image shape. Picks the direct loop for small kernels
/// and the FFT otherwise; both paths agree to round-off.
pub struct Convolver {
    kernel: Kernel,
    shape: Shape,
    method: Method,
}

impl Convolver {
    pub fn new(k: &Kernel, shape: Shape) -> Result<Self> {
        k.fits(shape)?;
        let method = if k.taps.len() <= DIRECT_TAP_LIMIT {
            Method::Direct
        } else {
            Method::Spectral(Box::new(SpectralPlan::new(k, shape.height, shape.width)))
        };
        Ok(Convolver {
            kernel: k.clone(),
            shape,
            method,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `img ⊗ K`. Panics if `img` does not have the bound shape's plane size.
    pub fn forward(&self, img: &Image) -> Image {
        self.run(img, false)
    }

    /// `img ⊗ K̃`.
    pub fn adjoint(&self, img: &Image) -> Image {
        self.run(img, true)
    }

    fn run(&self, img: &Image, adjoint: bool) -> Image {
        assert_eq!(
            (img.height(), img.width()),
            (self.shape.height, self.shape.width),
            "convolver bound to a different image size"
        );
        match &self.method {
            Method::Direct => direct(img, &self.kernel, adjoint),
            Method::Spectral(plan) => plan.apply(img, adjoint),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(Shape::new(h, w, 1), |y, x, _| (y * w + x) as f64 / (h * w) as f64)
    }

    #[test]
    fn delta_is_identity() {
        let img = ramp(6, 7);
        let k = Kernel::delta(3).unwrap();
        assert_eq!(convolve(&img, &k).unwrap().max_abs_diff(&img).unwrap(), 0.0);
        assert_eq!(
            adjoint_convolve(&img, &k).unwrap().max_abs_diff(&img).unwrap(),
            0.0
        );
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Image::filled(Shape::new(9, 9, 3), 0.37);
        let (k, _) = Kernel::normalized(5, 3, (1..=15).map(f64::from).collect()).unwrap();
        let out = convolve_fft(&img, &k).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        let out = convolve_direct(&img, &k).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn flip_reverses_both_axes() {
        let taps: Vec<f64> = (1..=9).map(|v| v as f64 / 45.0).collect();
        let k = Kernel::new(3, 3, taps.clone()).unwrap();
        let f = flip_kernel(&k);
        let expect: Vec<f64> = [9, 8, 7, 6, 5, 4, 3, 2, 1]
            .iter()
            .map(|&v| v as f64 / 45.0)
            .collect();
        assert_eq!(f.taps(), &expect[..]);
        assert_eq!(flip_kernel(&f), k);
    }

    #[test]
    fn symmetric_kernel_adjoint_matches_forward() {
        let (k, _) = Kernel::normalized(3, 3, vec![1., 2., 1., 2., 4., 2., 1., 2., 1.]).unwrap();
        assert_eq!(flip_kernel(&k), k);
        let img = ramp(8, 8);
        let a = convolve(&img, &k).unwrap();
        let b = adjoint_convolve(&img, &k).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
    }

    #[test]
    fn edge_taper_keeps_interior_and_range() {
        let img = Image::from_fn(Shape::new(20, 24, 1), |y, x, _| {
            ((y * 7 + x * 3) % 10) as f64 / 9.0
        });
        let k = Kernel::normalized(5, 5, vec![1.0; 25]).unwrap().0;
        let t = edge_taper(&img, &k).unwrap();
        assert_eq!(t.get(10, 12, 0), img.get(10, 12, 0));
        let b = convolve(&img, &k).unwrap();
        assert!((t.get(0, 0, 0) - b.get(0, 0, 0)).abs() < 0.05);
        assert!(t.is_observed_range());
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let img = ramp(4, 4);
        let k = Kernel::delta(5).unwrap();
        assert!(matches!(convolve(&img, &k), Err(Error::KernelTooLarge { .. })));
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::new(2, 3, vec![1.0 / 6.0; 6]).is_err());
        assert!(Kernel::new(1, 3, vec![0.5, 0.6, -0.1]).is_err());
        assert!(Kernel::new(1, 3, vec![0.5, 0.5, 0.5]).is_err());
        let (k, fix) = Kernel::normalized(1, 3, vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(k.taps(), &[0.25, 0.25, 0.5]);
        assert!((fix - 3.0).abs() < 1e-12);
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 1, vec![-0.1]).is_err());
        assert!(Image::new(1, 1, 1, vec![3.0]).is_ok());
    }
}
