//! Non-blind deblurring for images with saturated pixels.
//!
//! The solver alternates between estimating a per-pixel latent map `M`,
//! which keeps the Poisson mean `M∘(I⊗K)` inside the sensor range, and a
//! multiplicative Richardson-Lucy update of the latent image that also
//! accounts for an image prior. Map and prior estimators are pluggable:
//! analytic rules or two small CNNs evaluated by [`nn`].

pub mod cli;
pub mod error;
pub mod estimators;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use estimators::{EstimatorChoice, LatentMap, MapKind, PriorField, PriorKind};
pub use image::{adjoint_convolve, convolve, flip_kernel, Field, Image, Kernel, Shape};
pub use solver::{classic_rl, solve, SolverConfig, SolverTrace};
