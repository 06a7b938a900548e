//! Latent-map and prior-field estimators plugged into each solver iteration.
//!
//! A latent map `M ∈ [0, 1]` scales the blurred estimate so that the Poisson
//! mean `M∘(I⊗K)` stays inside the sensor range. A prior field is the
//! per-pixel term `λP'(I)` that enters the update's denominator.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{Convolver, Field, Image, Kernel, Shape};
use crate::nn::{Men, Pen, Tensor4, WeightsBundle};
use crate::objective::EPSILON;

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SHARPNESS: f64 = 50.0;
pub const DEFAULT_LAMBDA: f64 = 0.003;
pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_PRIOR_CAP: f64 = 0.5;
/// Offset inside `(|g| + ε)^(α−2)` for the hyper-Laplacian derivative.
pub const PRIOR_EPSILON: f64 = 1e-4;
/// Oracle-map level at or above which the binary weighting mask is 1.
pub const BINARY_MASK_LEVEL: f64 = 0.99;

/// Per-pixel map with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap(Image);

impl LatentMap {
    pub fn new(values: Image) -> Result<Self> {
        if !values.is_observed_range() {
            return Err(Error::InvalidParameter(
                "latent map values must lie in [0, 1]".into(),
            ));
        }
        Ok(LatentMap(values))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn mse(&self, other: &LatentMap) -> Result<f64> {
        self.0.expect_shape(other.shape())?;
        let n = self.data().len() as f64;
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }
}

/// Signed prior field `λP'(I)`, magnitude-capped so `1 + field > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorField(Field);

impl PriorField {
    /// Clamps `field` into `[−cap, cap]`. `cap` must lie in `[0, 1)`.
    pub fn capped(field: Field, cap: f64) -> Result<Self> {
        check_cap(cap)?;
        let shape = field.shape();
        let data = field
            .into_data()
            .into_iter()
            .map(|v| v.clamp(-cap, cap))
            .collect();
        Ok(PriorField(Field::new(shape, data)?))
    }

    pub fn zeros(shape: Shape) -> Self {
        PriorField(Field::zeros(shape))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn is_zero(&self) -> bool {
        self.data().iter().all(|v| *v == 0.0)
    }
}

fn check_cap(cap: f64) -> Result<()> {
    if !(0.0..1.0).contains(&cap) {
        return Err(Error::InvalidParameter(format!(
            "prior cap {cap} must lie in [0, 1)"
        )));
    }
    Ok(())
}

pub fn map_unit(shape: Shape) -> LatentMap {
    LatentMap(Image::filled(shape, 1.0))
}

fn naive_threshold_from_blurred(blurred: &Image, v: f64) -> LatentMap {
    LatentMap(blurred.map(|c| if c <= v { 1.0 } else { (v / c).clamp(0.0, 1.0) }))
}

fn check_threshold(v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold {v} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// `M = 1` where `I⊗K ≤ v`, else `v / (I⊗K)`.
pub fn map_naive_threshold(i: &Image, k: &Kernel, v: f64) -> Result<LatentMap> {
    check_threshold(v)?;
    let blurred = Convolver::new(k, i.shape())?.forward(i);
    Ok(naive_threshold_from_blurred(&blurred, v))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Smooth saturating response: `x − softplus(a(x−1))/a + softplus(−a)/a`.
/// Zero at the origin, close to `x` well below 1 and approaching 1 from
/// above as `x` grows.
pub fn soft_clip(x: f64, a: f64) -> f64 {
    x - softplus(a * (x - 1.0)) / a + softplus(-a) / a
}

fn smooth_clip_ratio(c: f64, a: f64) -> f64 {
    if c < 1e-8 {
        // limit of soft_clip(c)/c at the origin, its slope
        return 1.0 - 1.0 / (1.0 + (-a * (c - 1.0)).exp());
    }
    (soft_clip(c, a) / c.max(EPSILON)).clamp(0.0, 1.0)
}

fn smooth_clip_from_blurred(blurred: &Image, a: f64) -> LatentMap {
    LatentMap(blurred.map(|c| smooth_clip_ratio(c, a)))
}

/// `M = soft_clip(I⊗K) / (I⊗K)`.
pub fn map_smooth_clip(i: &Image, k: &Kernel, a: f64) -> Result<LatentMap> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("sharpness {a} must be positive")));
    }
    let blurred = Convolver::new(k, i.shape())?.forward(i);
    Ok(smooth_clip_from_blurred(&blurred, a))
}

/// Reference map `clamp(B / (I⊗K + ε), 0, 1)` from a known latent image.
pub fn map_ratio_oracle(b: &Image, i: &Image, k: &Kernel) -> Result<LatentMap> {
    i.expect_shape(b.shape())?;
    let blurred = Convolver::new(k, i.shape())?.forward(i);
    let m = b.zip_map(&blurred, |bv, cv| (bv / (cv + EPSILON)).clamp(0.0, 1.0))?;
    Ok(LatentMap(m))
}

/// Binary weighting map: 1 where the reference map is at least
/// [`BINARY_MASK_LEVEL`], 0 elsewhere. Evaluation only.
pub fn map_binary_mask(reference: &LatentMap) -> LatentMap {
    LatentMap(
        reference
            .image()
            .map(|m| if m >= BINARY_MASK_LEVEL { 1.0 } else { 0.0 }),
    )
}

fn image_tensor(img: &Image) -> Tensor4 {
    let s = img.shape();
    Tensor4::new([1, s.channels, s.height, s.width], img.data().to_vec()).expect("finite image data")
}

fn stacked_tensor(i: &Image, blurred: &Image) -> Tensor4 {
    image_tensor(i)
        .concat_channels(&image_tensor(blurred))
        .expect("matching shapes")
}

fn check_net_channels(expected: usize, img: &Image) -> Result<()> {
    if expected != img.channels() {
        return Err(Error::Weights(format!(
            "network built for {expected}-channel images, got {}",
            img.channels()
        )));
    }
    Ok(())
}

fn men_map(net: &Men, i: &Image, blurred: &Image) -> Result<LatentMap> {
    check_net_channels(net.channels(), i)?;
    let out = net.forward(&stacked_tensor(i, blurred))?;
    Ok(LatentMap(Image::from_raw(i.shape(), out.into_data())))
}

/// Runs MEN on the stacked pair `(I, I⊗K)`.
pub fn map_men(i: &Image, k: &Kernel, w: &WeightsBundle) -> Result<LatentMap> {
    let net = Men::new(w)?;
    let blurred = Convolver::new(k, i.shape())?.forward(i);
    men_map(&net, i, &blurred)
}

/// `φ'(g) = α g (|g| + ε)^(α−2)`, the guarded derivative of `|g|^α`.
fn hl_slope(g: f64, alpha: f64) -> f64 {
    alpha * g * (g.abs() + PRIOR_EPSILON).powf(alpha - 2.0)
}

/// Smoothed penalty whose derivative is `hl_slope`.
fn hl_penalty(g: f64, alpha: f64) -> f64 {
    let u = g.abs() + PRIOR_EPSILON;
    if (alpha - 1.0).abs() < 1e-12 {
        u - PRIOR_EPSILON * u.ln()
    } else {
        u.powf(alpha) - alpha * PRIOR_EPSILON * u.powf(alpha - 1.0) / (alpha - 1.0)
    }
}

fn check_hl(lambda: f64, alpha: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} must be >= 0")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// Smoothed hyper-Laplacian energy `λ Σ φ(∇h I) + φ(∇v I)` using circular
/// forward differences. [`prior_hyper_laplacian_uncapped`] is its gradient.
pub fn hyper_laplacian_energy(i: &Image, lambda: f64, alpha: f64) -> Result<f64> {
    check_hl(lambda, alpha)?;
    let (h, w) = (i.height(), i.width());
    let mut e = 0.0;
    for c in 0..i.channels() {
        let p = i.plane(c);
        for y in 0..h {
            for x in 0..w {
                let v = p[y * w + x];
                e += hl_penalty(p[y * w + (x + 1) % w] - v, alpha);
                e += hl_penalty(p[((y + 1) % h) * w + x] - v, alpha);
            }
        }
    }
    Ok(lambda * e)
}

/// Gradient of [`hyper_laplacian_energy`] without the magnitude cap.
pub fn prior_hyper_laplacian_uncapped(i: &Image, lambda: f64, alpha: f64) -> Result<Field> {
    check_hl(lambda, alpha)?;
    let (h, w) = (i.height(), i.width());
    let mut out = vec![0.0; i.data().len()];
    if lambda == 0.0 {
        return Field::new(i.shape(), out);
    }
    let mut sh = vec![0.0; h * w];
    let mut sv = vec![0.0; h * w];
    for c in 0..i.channels() {
        let p = i.plane(c);
        for y in 0..h {
            for x in 0..w {
                let v = p[y * w + x];
                sh[y * w + x] = hl_slope(p[y * w + (x + 1) % w] - v, alpha);
                sv[y * w + x] = hl_slope(p[((y + 1) % h) * w + x] - v, alpha);
            }
        }
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let left = sh[y * w + (x + w - 1) % w];
                let up = sv[((y + h - 1) % h) * w + x];
                dst[y * w + x] = lambda * (left - sh[y * w + x] + up - sv[y * w + x]);
            }
        }
    }
    Field::new(i.shape(), out)
}

/// Hyper-Laplacian prior field with the default cap.
pub fn prior_hyper_laplacian(i: &Image, lambda: f64, alpha: f64) -> Result<PriorField> {
    PriorField::capped(
        prior_hyper_laplacian_uncapped(i, lambda, alpha)?,
        DEFAULT_PRIOR_CAP,
    )
}

fn pen_field(net: &Pen, i: &Image, cap: f64) -> Result<PriorField> {
    check_net_channels(net.channels(), i)?;
    let out = net.forward(&image_tensor(i))?;
    PriorField::capped(Field::new(i.shape(), out.into_data())?, cap)
}

/// Runs PEN on `I` and caps the result.
pub fn prior_pen(i: &Image, w: &WeightsBundle) -> Result<PriorField> {
    pen_field(&Pen::new(w)?, i, DEFAULT_PRIOR_CAP)
}

#[derive(Clone)]
pub enum MapKind {
    Unit,
    NaiveThreshold {
        v: f64,
    },
    SmoothClip {
        a: f64,
    },
    /// The reference map supplied to the solver, held fixed.
    RatioOracle,
    /// Binary mask thresholded from the reference map.
    BinaryMask,
    Men(Arc<Men>),
}

impl MapKind {
    pub fn men(w: &WeightsBundle) -> Result<Self> {
        Ok(MapKind::Men(Arc::new(Men::new(w)?)))
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self, MapKind::RatioOracle | MapKind::BinaryMask)
    }
}

impl fmt::Debug for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::Unit => write!(f, "unit"),
            MapKind::NaiveThreshold { v } => write!(f, "naive_threshold:{v}"),
            MapKind::SmoothClip { a } => write!(f, "smooth_clip:{a}"),
            MapKind::RatioOracle => write!(f, "ratio_oracle"),
            MapKind::BinaryMask => write!(f, "binary_mask"),
            MapKind::Men(_) => write!(f, "men_cnn"),
        }
    }
}

#[derive(Clone)]
pub enum PriorKind {
    None,
    HyperLaplacian { lambda: f64, alpha: f64 },
    Pen(Arc<Pen>),
}

impl PriorKind {
    pub fn pen(w: &WeightsBundle) -> Result<Self> {
        Ok(PriorKind::Pen(Arc::new(Pen::new(w)?)))
    }

    pub fn hyper_laplacian() -> Self {
        PriorKind::HyperLaplacian {
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl fmt::Debug for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorKind::None => write!(f, "none"),
            PriorKind::HyperLaplacian { lambda, alpha } => {
                write!(f, "hyper_laplacian:{lambda}:{alpha}")
            }
            PriorKind::Pen(_) => write!(f, "pen_cnn"),
        }
    }
}

/// Inputs available to a map estimator at one iteration.
pub struct MapContext<'a> {
    pub latent: &'a Image,
    /// `latent ⊗ K`.
    pub blurred: &'a Image,
    pub reference: Option<&'a LatentMap>,
}

#[derive(Clone, Debug)]
pub struct EstimatorChoice {
    pub map: MapKind,
    pub prior: PriorKind,
    pub prior_cap: f64,
}

impl Default for EstimatorChoice {
    fn default() -> Self {
        EstimatorChoice::new(MapKind::Unit, PriorKind::None)
    }
}

impl EstimatorChoice {
    pub fn new(map: MapKind, prior: PriorKind) -> Self {
        EstimatorChoice {
            map,
            prior,
            prior_cap: DEFAULT_PRIOR_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.map {
            MapKind::NaiveThreshold { v } => check_threshold(v)?,
            MapKind::SmoothClip { a } if !(a > 0.0 && a.is_finite()) => {
                return Err(Error::InvalidParameter(format!("sharpness {a} must be positive")))
            }
            _ => {}
        }
        if let PriorKind::HyperLaplacian { lambda, alpha } = self.prior {
            check_hl(lambda, alpha)?;
        }
        check_cap(self.prior_cap)
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.map, self.prior)
    }

    pub fn estimate_map(&self, ctx: &MapContext<'_>) -> Result<LatentMap> {
        let shape = ctx.latent.shape();
        let reference = || {
            ctx.reference
                .ok_or_else(|| Error::InvalidParameter(format!("{} map needs a reference map", self.map)))
        };
        let m = match &self.map {
            MapKind::Unit => map_unit(shape),
            MapKind::NaiveThreshold { v } => naive_threshold_from_blurred(ctx.blurred, *v),
            MapKind::SmoothClip { a } => smooth_clip_from_blurred(ctx.blurred, *a),
            MapKind::RatioOracle => reference()?.clone(),
            MapKind::BinaryMask => map_binary_mask(reference()?),
            MapKind::Men(net) => men_map(net, ctx.latent, ctx.blurred)?,
        };
        m.image().expect_shape(shape)?;
        Ok(m)
    }

    pub fn estimate_prior(&self, latent: &Image) -> Result<PriorField> {
        match &self.prior {
            PriorKind::None => Ok(PriorField::zeros(latent.shape())),
            PriorKind::HyperLaplacian { lambda, alpha } => PriorField::capped(
                prior_hyper_laplacian_uncapped(latent, *lambda, *alpha)?,
                self.prior_cap,
            ),
            PriorKind::Pen(net) => pen_field(net, latent, self.prior_cap),
        }
    }
}
