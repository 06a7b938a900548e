use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense `n × c × h × w` tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape("all dims >= 1", format!("{dims:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(
                format!("{} values for {dims:?}", dims.iter().product::<usize>()),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor value".into()));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.dims;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    pub fn relu(self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn sigmoid(self) -> Self {
        self.map(|v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn add_tensor(mut self, other: &Tensor4) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(self)
    }

    /// Concatenates along the channel axis, `self` first.
    pub fn concat_channels(&self, other: &Tensor4) -> Result<Self> {
        let [n, c1, h, w] = self.dims;
        let [n2, c2, h2, w2] = other.dims;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::shape(
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c1 + c2) * plane);
        for b in 0..n {
            data.extend_from_slice(&self.data[b * c1 * plane..(b + 1) * c1 * plane]);
            data.extend_from_slice(&other.data[b * c2 * plane..(b + 1) * c2 * plane]);
        }
        Ok(Tensor4 {
            dims: [n, c1 + c2, h, w],
            data,
        })
    }

    /// 2×2 average pooling with stride 2. `h` and `w` must be even.
    pub fn avg_pool2(&self) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("even spatial dims", format!("{h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor4::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let s = src[2 * y * w + 2 * x]
                        + src[2 * y * w + 2 * x + 1]
                        + src[(2 * y + 1) * w + 2 * x]
                        + src[(2 * y + 1) * w + 2 * x + 1];
                    dst[y * ow + x] = 0.25 * s;
                }
            }
        }
        Ok(out)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&self) -> Self {
        let [n, c, h, w] = self.dims;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor4::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        out
    }

    /// Extends `h` and `w` to `th`, `tw` by mirroring about the last row and
    /// column (the edge sample is not repeated).
    pub fn reflect_pad_to(&self, th: usize, tw: usize) -> Self {
        let [n, c, h, w] = self.dims;
        let mut out = Tensor4::zeros([n, c, th, tw]);
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * th * tw..(p + 1) * th * tw];
            for y in 0..th {
                let sy = reflect_index(y, h);
                for x in 0..tw {
                    dst[y * tw + x] = src[sy * w + reflect_index(x, w)];
                }
            }
        }
        out
    }

    /// Keeps the top-left `h × w` window.
    pub fn crop(&self, h: usize, w: usize) -> Self {
        let [n, c, sh, sw] = self.dims;
        let mut out = Tensor4::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..h {
                let s = &self.data[(p * sh + y) * sw..(p * sh + y) * sw + w];
                out.data[(p * h + y) * w..(p * h + y + 1) * w].copy_from_slice(s);
            }
        }
        out
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Zero-padded 2-D cross-correlation.
///
/// `weight` is `out_c × in_c × kh × kw`, `bias` has `out_c` entries. Output
/// channels are computed independently, so the result does not depend on
/// the worker count.
pub fn conv2d(x: &Tensor4, weight: &Tensor4, bias: &[f64], stride: usize, padding: usize) -> Result<Tensor4> {
    let [n, ic, h, w] = x.dims;
    let [oc, wic, kh, kw] = weight.dims;
    if wic != ic {
        return Err(Error::shape(
            format!("{wic} input channels"),
            format!("{ic} input channels"),
        ));
    }
    if bias.len() != oc {
        return Err(Error::shape(format!("{oc} biases"), bias.len()));
    }
    if !(stride == 1 || stride == 2) {
        return Err(Error::InvalidParameter(format!(
            "stride {stride} not in {{1, 2}}"
        )));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(
            format!("input at least {kh}x{kw} after padding"),
            format!("{h}x{w}"),
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor4::zeros([n, oc, oh, ow]);
    let plane = oh * ow;
    out.data.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, o) = (idx / oc, idx % oc);
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for ci in 0..ic {
            let src = &x.data[(b * ic + ci) * h * w..(b * ic + ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = weight.data[((o * ic + ci) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}
