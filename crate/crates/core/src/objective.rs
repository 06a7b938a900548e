//! Poisson negative log-likelihood of the latent-map blur model and its
//! gradient with respect to the latent image.
//!
//! The constant `log(B!)` term is dropped; it does not move the minimiser.

use crate::error::{Error, Result};
use crate::estimators::LatentMap;
use crate::image::{Convolver, Field, Image, Kernel};

/// Guard added inside logarithms and denominators. Shared with the solver.
pub const EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub nll: f64,
    pub prior: f64,
    pub total: f64,
}

impl ObjectiveValue {
    pub fn new(nll: f64, prior: f64) -> Self {
        ObjectiveValue {
            nll,
            prior,
            total: nll + prior,
        }
    }
}

fn check_inputs(b: &Image, i: &Image, m: &LatentMap) -> Result<()> {
    i.expect_shape(b.shape())?;
    m.image().expect_shape(b.shape())?;
    b.check_finite("blurry image")?;
    i.check_finite("latent image")?;
    Ok(())
}

/// `Σ (M∘c) − B·log(M∘c + ε)` with `c = I ⊗ K`, given the blurred estimate.
pub(crate) fn nll_from_blurred(b: &Image, blurred: &Image, m: &LatentMap, eps: f64) -> f64 {
    b.data()
        .iter()
        .zip(blurred.data())
        .zip(m.data())
        .map(|((&bv, &cv), &mv)| {
            let mean = mv * cv;
            mean - bv * (mean + eps).ln()
        })
        .sum()
}

pub fn poisson_nll(b: &Image, i: &Image, k: &Kernel, m: &LatentMap) -> Result<ObjectiveValue> {
    check_inputs(b, i, m)?;
    let conv = Convolver::new(k, b.shape())?;
    let nll = nll_from_blurred(b, &conv.forward(i), m, EPSILON);
    if !nll.is_finite() {
        return Err(Error::NonFinite(format!("negative log-likelihood {nll}")));
    }
    Ok(ObjectiveValue::new(nll, 0.0))
}

/// Gradient of [`poisson_nll`] with respect to `I`:
/// `M ⊗ K̃ − ((M∘B) / (M∘(I⊗K) + ε)) ⊗ K̃`.
pub fn poisson_nll_grad(b: &Image, i: &Image, k: &Kernel, m: &LatentMap) -> Result<Field> {
    check_inputs(b, i, m)?;
    let conv = Convolver::new(k, b.shape())?;
    let blurred = conv.forward(i);
    let ratio = Image::from_raw(
        b.shape(),
        b.data()
            .iter()
            .zip(blurred.data())
            .zip(m.data())
            .map(|((&bv, &cv), &mv)| mv * bv / (mv * cv + EPSILON))
            .collect(),
    );
    let data_term = conv.adjoint(m.image());
    let ratio_term = conv.adjoint(&ratio);
    let grad = data_term
        .data()
        .iter()
        .zip(ratio_term.data())
        .map(|(a, r)| a - r)
        .collect();
    Field::new(b.shape(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::map_unit;
    use crate::image::{convolve, Shape};

    #[test]
    fn zero_observation_leaves_only_mean_term() {
        let shape = Shape::new(3, 3, 1);
        let i = Image::from_fn(shape, |y, x, _| 0.1 + (y * 3 + x) as f64 * 0.05);
        let b = Image::zeros(shape);
        let k = Kernel::new(1, 3, vec![0.25, 0.5, 0.25]).unwrap();
        let m = LatentMap::new(Image::filled(shape, 0.7)).unwrap();
        let v = poisson_nll(&b, &i, &k, &m).unwrap();
        let expect: f64 = convolve(&i, &k).unwrap().data().iter().map(|c| 0.7 * c).sum();
        assert!((v.nll - expect).abs() < 1e-12);
        assert_eq!(v.total, v.nll);
    }

    #[test]
    fn delta_kernel_gradient_is_one_minus_ratio() {
        let shape = Shape::new(2, 3, 1);
        let i = Image::from_fn(shape, |y, x, _| 0.2 + 0.1 * (y + x) as f64);
        let b = Image::from_fn(shape, |y, x, _| 0.3 + 0.05 * (2 * y + x) as f64);
        let g = poisson_nll_grad(&b, &i, &Kernel::delta(1).unwrap(), &map_unit(shape)).unwrap();
        for (n, gv) in g.data().iter().enumerate() {
            let expect = 1.0 - b.data()[n] / i.data()[n];
            assert!((gv - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Image::zeros(Shape::new(3, 3, 1));
        let b = Image::zeros(Shape::new(3, 4, 1));
        let k = Kernel::delta(1).unwrap();
        assert!(poisson_nll(&a, &b, &k, &map_unit(a.shape())).is_err());
    }
}
