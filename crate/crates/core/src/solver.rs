//! Alternating latent-map / latent-image Richardson-Lucy iteration.
//!
//! Each step estimates `M` and `λP'(I)` from the current iterate, then
//! applies the multiplicative update
//!
//! ```text
//! Ī⁺ = I ∘ max((B / (I⊗K + ε) − M + 1) ⊗ K̃, 0)
//! I⁺ = Ī⁺ / (1 + λP'(I))
//! ```
//!
//! The zero floor keeps iterates non-negative when round-off pushes the
//! correction below zero. With `clamp_output` the iterate is also clamped to
//! `[0, clamp_ceiling]`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{
    hyper_laplacian_energy, EstimatorChoice, LatentMap, MapContext, PriorField, PriorKind,
};
use crate::image::{Convolver, Image, Kernel};
use crate::objective::{nll_from_blurred, ObjectiveValue, EPSILON};

pub const DEFAULT_ITERATIONS: usize = 30;
pub const DEFAULT_CLAMP_CEILING: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub iterations: usize,
    pub epsilon: f64,
    pub estimators: EstimatorChoice,
    pub clamp_output: bool,
    pub clamp_ceiling: f64,
    pub record_trace: bool,
    /// Keep `Ī^{t+1}` and `I^{t+1}` in every trace record.
    pub record_images: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: DEFAULT_ITERATIONS,
            epsilon: EPSILON,
            estimators: EstimatorChoice::default(),
            clamp_output: true,
            clamp_ceiling: DEFAULT_CLAMP_CEILING,
            record_trace: false,
            record_images: false,
        }
    }
}

impl SolverConfig {
    pub fn with_estimators(estimators: EstimatorChoice) -> Self {
        SolverConfig {
            estimators,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.clamp_output && (self.clamp_ceiling.is_nan() || self.clamp_ceiling <= 0.0) {
            return Err(Error::InvalidParameter("clamp ceiling must be positive".into()));
        }
        self.estimators.validate()
    }

    fn ceiling(&self) -> Option<f64> {
        self.clamp_output.then_some(self.clamp_ceiling)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRecord {
    /// 1-based: the record for iteration `t` describes `I^t`.
    pub iteration: usize,
    pub objective: f64,
    pub nll: f64,
    pub prior: f64,
    pub map_mse: Option<f64>,
    #[serde(skip)]
    pub intermediate: Option<Image>,
    #[serde(skip)]
    pub latent: Option<Image>,
}

#[derive(Clone, Debug, Default)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record for 1-based iteration `t`.
    pub fn at(&self, t: usize) -> Option<&TraceRecord> {
        self.records.get(t.checked_sub(1)?)
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Ground truth carried alongside a solve for diagnostics and oracle maps.
#[derive(Clone, Copy, Debug)]
pub struct Reference<'a> {
    pub map: &'a LatentMap,
}

struct Step {
    intermediate: Image,
    next: Image,
}

fn check_step_shapes(i: &Image, b: &Image, m: &LatentMap, p: &PriorField) -> Result<()> {
    b.expect_shape(i.shape())?;
    m.image().expect_shape(i.shape())?;
    if p.shape() != i.shape() {
        return Err(Error::shape(i.shape(), p.shape()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_step(
    conv: &Convolver,
    i: &Image,
    blurred: &Image,
    b: &Image,
    m: &LatentMap,
    p: &PriorField,
    eps: f64,
    ceiling: Option<f64>,
) -> Step {
    let factor: Vec<f64> = b
        .data()
        .iter()
        .zip(blurred.data())
        .zip(m.data())
        .map(|((&bv, &cv), &mv)| bv / (cv + eps) + (1.0 - mv))
        .collect();
    let correction = conv.adjoint(&Image::from_raw(i.shape(), factor));
    let intermediate: Vec<f64> = i
        .data()
        .iter()
        .zip(correction.data())
        .map(|(&iv, &cv)| iv * cv.max(0.0))
        .collect();
    let next = intermediate
        .iter()
        .zip(p.data())
        .map(|(&n, &pv)| {
            let v = n / (1.0 + pv);
            match ceiling {
                Some(hi) => v.clamp(0.0, hi),
                None => v,
            }
        })
        .collect();
    Step {
        intermediate: Image::from_raw(i.shape(), intermediate),
        next: Image::from_raw(i.shape(), next),
    }
}

fn ensure_finite(img: &Image, iteration: usize) -> Result<()> {
    if img.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical {
            iteration,
            reason: "non-finite value in updated image".into(),
        })
    }
}

/// One update with the given map and prior field. No output clamp.
pub fn rl_update(i: &Image, b: &Image, k: &Kernel, m: &LatentMap, p: &PriorField, eps: f64) -> Result<Image> {
    check_step_shapes(i, b, m, p)?;
    let conv = Convolver::new(k, i.shape())?;
    let blurred = conv.forward(i);
    let step = update_step(&conv, i, &blurred, b, m, p, eps, None);
    ensure_finite(&step.next, 1)?;
    Ok(step.next)
}

/// The update numerator `Ī⁺` before division by `1 + λP'(I)`.
pub fn intermediate_image(i: &Image, b: &Image, k: &Kernel, m: &LatentMap, eps: f64) -> Result<Image> {
    let p = PriorField::zeros(i.shape());
    check_step_shapes(i, b, m, &p)?;
    let conv = Convolver::new(k, i.shape())?;
    let blurred = conv.forward(i);
    let step = update_step(&conv, i, &blurred, b, m, &p, eps, None);
    ensure_finite(&step.intermediate, 1)?;
    Ok(step.intermediate)
}

/// Plain Richardson-Lucy: `I⁺ = I ∘ ((B / (I⊗K + ε)) ⊗ K̃)` from `I⁰ = B`.
pub fn classic_rl(b: &Image, k: &Kernel, iterations: usize) -> Result<Image> {
    let conv = Convolver::new(k, b.shape())?;
    let mut i = b.clone();
    for t in 1..=iterations {
        let blurred = conv.forward(&i);
        let ratio: Vec<f64> = b
            .data()
            .iter()
            .zip(blurred.data())
            .map(|(&bv, &cv)| bv / (cv + EPSILON))
            .collect();
        let correction = conv.adjoint(&Image::from_raw(b.shape(), ratio));
        let next: Vec<f64> = i
            .data()
            .iter()
            .zip(correction.data())
            .map(|(&iv, &cv)| iv * cv.max(0.0))
            .collect();
        i = Image::from_raw(b.shape(), next);
        ensure_finite(&i, t)?;
    }
    Ok(i)
}

pub fn solve(b: &Image, k: &Kernel, cfg: &SolverConfig) -> Result<(Image, SolverTrace)> {
    solve_with_reference(b, k, cfg, None)
}

/// Runs the alternating iteration from `I⁰ = B`. A reference map, when
/// given, feeds the oracle map kinds and the trace's map error.
pub fn solve_with_reference(
    b: &Image,
    k: &Kernel,
    cfg: &SolverConfig,
    reference: Option<Reference<'_>>,
) -> Result<(Image, SolverTrace)> {
    cfg.validate()?;
    b.check_finite("blurry image")?;
    if !b.is_observed_range() {
        return Err(Error::InvalidImage(
            "blurry image values must lie in [0, 1]".into(),
        ));
    }
    if let Some(r) = reference {
        r.map.image().expect_shape(b.shape())?;
    }
    if cfg.estimators.map.needs_reference() && reference.is_none() {
        return Err(Error::InvalidParameter(format!(
            "{} map requires a reference map",
            cfg.estimators.map
        )));
    }
    let conv = Convolver::new(k, b.shape())?;
    let mut i = b.clone();
    let mut trace = SolverTrace::default();
    for t in 1..=cfg.iterations {
        let blurred = conv.forward(&i);
        let ctx = MapContext {
            latent: &i,
            blurred: &blurred,
            reference: reference.map(|r| r.map),
        };
        let m = cfg
            .estimators
            .estimate_map(&ctx)
            .map_err(|e| at_iteration(e, t))?;
        let p = cfg
            .estimators
            .estimate_prior(&i)
            .map_err(|e| at_iteration(e, t))?;
        let step = update_step(&conv, &i, &blurred, b, &m, &p, cfg.epsilon, cfg.ceiling());
        ensure_finite(&step.next, t)?;
        if cfg.record_trace {
            let next_blurred = conv.forward(&step.next);
            let nll = nll_from_blurred(b, &next_blurred, &m, cfg.epsilon);
            let prior = match cfg.estimators.prior {
                PriorKind::HyperLaplacian { lambda, alpha } => {
                    hyper_laplacian_energy(&step.next, lambda, alpha)?
                }
                _ => 0.0,
            };
            let value = ObjectiveValue::new(nll, prior);
            let map_mse = reference.map(|r| m.mse(r.map)).transpose()?;
            trace.records.push(TraceRecord {
                iteration: t,
                objective: value.total,
                nll: value.nll,
                prior: value.prior,
                map_mse,
                intermediate: cfg.record_images.then(|| step.intermediate.clone()),
                latent: cfg.record_images.then(|| step.next.clone()),
            });
        }
        i = step.next;
    }
    Ok((i, trace))
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numerical { .. } => e,
        other => Error::Numerical {
            iteration,
            reason: other.to_string(),
        },
    }
}

/// Unit map, zero prior: the configuration that reduces to [`classic_rl`].
pub fn unit_config(iterations: usize) -> SolverConfig {
    SolverConfig {
        iterations,
        ..Default::default()
    }
}
