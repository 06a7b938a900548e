//! Forward inference for the two fixed estimator networks.
//!
//! MEN: 3×3 stem to 32 channels, six residual blocks (conv, ReLU, conv, plus
//! skip), 3×3 head back to `C` channels and a sigmoid. No activation follows
//! the stem or the residual sums.
//!
//! PEN: a three-scale U-net with 8/16/32 features. Each scale runs two 3×3
//! convolutions with ReLU; scales are linked by 2×2 average pooling on the
//! way down and nearest-neighbour upsampling on the way up. Decoder inputs
//! are `[upsampled, skip]` concatenated in that order. The head is a linear
//! 3×3 convolution. Inputs whose sides are not multiples of four are
//! reflect-padded on the bottom and right and cropped back afterwards.
//!
//! All convolutions are stride 1, zero padding 1, cross-correlation.

mod tensor;
mod weights;

pub use tensor::{conv2d, Tensor4};
pub use weights::{
    load_weights, save_weights, Architecture, WeightEntry, WeightsBundle, MEN_BLOCKS, MEN_FEATURES,
    PEN_FEATURES, SDNW_MAGIC, SDNW_VERSION,
};

use crate::error::{Error, Result};

struct Conv {
    weight: Tensor4,
    bias: Vec<f64>,
}

impl Conv {
    fn from_bundle(w: &WeightsBundle, name: &str) -> Result<Self> {
        let missing = || Error::Weights(format!("missing entry {name}"));
        let wt = w.get(&format!("{name}.weight")).ok_or_else(missing)?;
        let b = w.get(&format!("{name}.bias")).ok_or_else(missing)?;
        let dims: [usize; 4] = wt
            .shape
            .clone()
            .try_into()
            .map_err(|_| Error::Weights(format!("{name}.weight is not rank 4")))?;
        Ok(Conv {
            weight: Tensor4::new(dims, wt.values.iter().map(|&v| v as f64).collect())?,
            bias: b.values.iter().map(|&v| v as f64).collect(),
        })
    }

    fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d(x, &self.weight, &self.bias, 1, 1)
    }
}

fn expect_arch(w: &WeightsBundle, arch: Architecture) -> Result<()> {
    if w.arch() != arch {
        return Err(Error::Weights(format!(
            "expected {arch} weights, got {}",
            w.arch()
        )));
    }
    Ok(())
}

/// Map estimation network ready for repeated inference.
pub struct Men {
    channels: usize,
    stem: Conv,
    blocks: Vec<(Conv, Conv)>,
    head: Conv,
}

impl Men {
    pub fn new(w: &WeightsBundle) -> Result<Self> {
        expect_arch(w, Architecture::Men)?;
        let blocks = (0..MEN_BLOCKS)
            .map(|b| {
                Ok((
                    Conv::from_bundle(w, &format!("blocks.{b}.conv1"))?,
                    Conv::from_bundle(w, &format!("blocks.{b}.conv2"))?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Men {
            channels: w.channels(),
            stem: Conv::from_bundle(w, "stem")?,
            blocks,
            head: Conv::from_bundle(w, "head")?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `stacked` carries the image channels followed by the blurred-image
    /// channels; the output has `C` channels in `(0, 1)`.
    pub fn forward(&self, stacked: &Tensor4) -> Result<Tensor4> {
        if stacked.c() != 2 * self.channels {
            return Err(Error::shape(
                format!("{} input channels", 2 * self.channels),
                stacked.c(),
            ));
        }
        let mut x = self.stem.apply(stacked)?;
        for (c1, c2) in &self.blocks {
            let r = c2.apply(&c1.apply(&x)?.relu())?;
            x = x.add_tensor(&r)?;
        }
        Ok(self.head.apply(&x)?.sigmoid())
    }
}

/// Prior estimation network ready for repeated inference.
pub struct Pen {
    channels: usize,
    layers: Vec<Conv>,
}

const PEN_LAYERS: [&str; 11] = [
    "enc0.conv1",
    "enc0.conv2",
    "enc1.conv1",
    "enc1.conv2",
    "enc2.conv1",
    "enc2.conv2",
    "dec1.conv1",
    "dec1.conv2",
    "dec0.conv1",
    "dec0.conv2",
    "head",
];

impl Pen {
    pub fn new(w: &WeightsBundle) -> Result<Self> {
        expect_arch(w, Architecture::Pen)?;
        let layers = PEN_LAYERS
            .iter()
            .map(|n| Conv::from_bundle(w, n))
            .collect::<Result<_>>()?;
        Ok(Pen {
            channels: w.channels(),
            layers,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.c() != self.channels {
            return Err(Error::shape(format!("{} input channels", self.channels), x.c()));
        }
        let (h, w) = (x.h(), x.w());
        let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
        let padded = if (ph, pw) == (h, w) {
            x.clone()
        } else {
            x.reflect_pad_to(ph, pw)
        };
        let l = &self.layers;
        let pair =
            |a: &Conv, b: &Conv, t: &Tensor4| -> Result<Tensor4> { Ok(b.apply(&a.apply(t)?.relu())?.relu()) };
        let e0 = pair(&l[0], &l[1], &padded)?;
        let e1 = pair(&l[2], &l[3], &e0.avg_pool2()?)?;
        let e2 = pair(&l[4], &l[5], &e1.avg_pool2()?)?;
        let d1 = pair(&l[6], &l[7], &e2.upsample2().concat_channels(&e1)?)?;
        let d0 = pair(&l[8], &l[9], &d1.upsample2().concat_channels(&e0)?)?;
        let out = l[10].apply(&d0)?;
        Ok(if (ph, pw) == (h, w) { out } else { out.crop(h, w) })
    }
}

pub fn men_forward(stacked: &Tensor4, w: &WeightsBundle) -> Result<Tensor4> {
    Men::new(w)?.forward(stacked)
}

pub fn pen_forward(x: &Tensor4, w: &WeightsBundle) -> Result<Tensor4> {
    Pen::new(w)?.forward(x)
}
