//! File formats: PNG images, the raw `SDBF` float raster and plain-text kernels.
//!
//! `SDBF` layout (little-endian): magic `b"SDBF"`, `u32` height, `u32` width,
//! `u32` channels, then `height·width·channels` `f32` values ordered row by
//! row with channels interleaved inside each pixel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
#[cfg(test)]
use crate::image::Shape;
use crate::image::{Image, Kernel};

pub const SDBF_MAGIC: &[u8; 4] = b"SDBF";

/// Kernels whose taps are renormalised by more than this are reported.
pub const KERNEL_RENORM_WARN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// A raw float raster as stored in `SDBF`, without the image value checks.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRaster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Interleaved (`y`, `x`, `c`) order, exactly as on disk.
    pub values: Vec<f32>,
}

impl RawRaster {
    pub fn from_image(img: &Image) -> Self {
        let s = img.shape();
        let mut values = Vec::with_capacity(s.len());
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..s.channels {
                    values.push(img.get(y, x, c) as f32);
                }
            }
        }
        RawRaster {
            height: s.height,
            width: s.width,
            channels: s.channels,
            values,
        }
    }

    /// Planar `f64` copy of the values (channel-major).
    pub fn planar(&self) -> Vec<f64> {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * ch];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    out[(c * h + y) * w + x] = self.values[(y * w + x) * ch + c] as f64;
                }
            }
        }
        out
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::new(self.height, self.width, self.channels, self.planar())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(SDBF_MAGIC);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Parse("SDBF header truncated".into()));
        }
        if &bytes[..4] != SDBF_MAGIC {
            return Err(Error::Parse("bad SDBF magic".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Parse("SDBF dimensions overflow".into()))?;
        let body = &bytes[16..];
        if body.len() != count * 4 {
            return Err(Error::Parse(format!(
                "SDBF body holds {} bytes, header implies {}",
                body.len(),
                count * 4
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RawRaster {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

pub fn read_sdbf(path: &Path) -> Result<Image> {
    RawRaster::read(path)?.to_image()
}

pub fn write_sdbf(img: &Image, path: &Path) -> Result<()> {
    RawRaster::from_image(img).write(path)
}

/// Loads an 8- or 16-bit PNG, mapping code values linearly onto `[0, 1]`.
/// Grey images load with one channel, everything else with three; alpha is
/// discarded.
pub fn read_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)?;
    let sixteen = matches!(
        dynimg,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let grey = !dynimg.color().has_color();
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let channels = if grey { 1 } else { 3 };
    let interleaved: Vec<f64> = match (grey, sixteen) {
        (true, true) => dynimg
            .to_luma16()
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 65535.0)
            .collect(),
        (true, false) => dynimg
            .to_luma8()
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        (false, true) => dynimg
            .to_rgb16()
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 65535.0)
            .collect(),
        (false, false) => dynimg
            .to_rgb8()
            .into_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
    };
    let mut planar = vec![0.0; interleaved.len()];
    for (i, v) in interleaved.into_iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        planar[c * h * w + p] = v;
    }
    Image::new(h, w, channels, planar)
}

/// Encodes an image as PNG. Values are clamped to `[0, 1]` and rounded.
pub fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let s = img.shape();
    let (w, h) = (s.width as u32, s.height as u32);
    let interleaved = |scale: f64| -> Vec<f64> {
        let mut v = Vec::with_capacity(s.len());
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..s.channels {
                    v.push((img.get(y, x, c).clamp(0.0, 1.0) * scale).round());
                }
            }
        }
        v
    };
    let dynimg = match (s.channels, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, interleaved(255.0).iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(
                w,
                h,
                interleaved(65535.0).iter().map(|&v| v as u16).collect(),
            )
            .expect("buffer size"),
        ),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleaved(255.0).iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(
                w,
                h,
                interleaved(65535.0).iter().map(|&v| v as u16).collect(),
            )
            .expect("buffer size"),
        ),
    };
    let mut bytes = Vec::new();
    dynimg.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(bytes)
}

pub fn write_png(img: &Image, path: &Path, depth: BitDepth) -> Result<()> {
    write_atomic(path, &encode_png(img, depth)?)
}

/// Reads `.sdbf` rasters or PNG images, chosen by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("sdbf") => read_sdbf(path),
        _ => read_png(path),
    }
}

/// Writes `.sdbf` or 16-bit PNG, chosen by extension.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("sdbf") => write_sdbf(img, path),
        _ => write_png(img, path, BitDepth::Sixteen),
    }
}

/// Parses the text kernel format: a `kh kw` header line followed by `kh`
/// rows of `kw` numbers. Taps are renormalised; the applied correction is
/// returned alongside the kernel.
pub fn parse_kernel(text: &str) -> Result<(Kernel, f64)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty kernel file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("bad kernel header {header:?}")))
        })
        .collect::<Result<_>>()?;
    let [kh, kw] = dims[..] else {
        return Err(Error::Parse(format!(
            "kernel header must be `kh kw`, got {header:?}"
        )));
    };
    let mut taps = Vec::with_capacity(kh * kw);
    for row in 0..kh {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("kernel truncated at row {row}")))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad kernel tap {t:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != kw {
            return Err(Error::Parse(format!(
                "kernel row {row} has {} values, expected {kw}",
                values.len()
            )));
        }
        taps.extend(values);
    }
    if lines.next().is_some() {
        return Err(Error::Parse("trailing data after kernel rows".into()));
    }
    Kernel::normalized(kh, kw, taps)
}

pub fn format_kernel(k: &Kernel) -> String {
    let mut s = format!("{} {}\n", k.height(), k.width());
    for i in 0..k.height() {
        let row: Vec<String> = (0..k.width()).map(|j| format!("{}", k.tap(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_kernel(path: &Path) -> Result<Kernel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (k, correction) = parse_kernel(&text)?;
    if correction > KERNEL_RENORM_WARN {
        log::warn!(
            "{}: kernel taps renormalised (sum was off by {correction:.3e})",
            path.display()
        );
    }
    Ok(k)
}

pub fn write_kernel(k: &Kernel, path: &Path) -> Result<()> {
    write_atomic(path, format_kernel(k).as_bytes())
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = dir.join(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdbf_roundtrip_and_truncation() {
        let img = Image::from_fn(Shape::new(3, 2, 3), |y, x, c| (y + 2 * x + 5 * c) as f64 * 0.125);
        let bytes = RawRaster::from_image(&img).encode();
        assert_eq!(&bytes[..4], b"SDBF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        // first pixel, channel 1 sits at offset 16 + 4
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 5.0 * 0.125);
        let back = RawRaster::decode(&bytes).unwrap().to_image().unwrap();
        assert_eq!(back, img);
        assert!(RawRaster::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(RawRaster::decode(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(RawRaster::decode(&bad).is_err());
    }

    #[test]
    fn kernel_text_format() {
        let (k, fix) = parse_kernel("3 1\n1\n2\n1\n").unwrap();
        assert_eq!(k.taps(), &[0.25, 0.5, 0.25]);
        assert!((fix - 3.0).abs() < 1e-12);
        let (again, fix) = parse_kernel(&format_kernel(&k)).unwrap();
        assert_eq!(again, k);
        assert_eq!(fix, 0.0);
        assert!(parse_kernel("3 1\n1\n2\n").is_err());
        assert!(parse_kernel("1 2\n1 x\n").is_err());
        assert!(parse_kernel("2 1\n1\n1\n").is_err());
    }

    #[test]
    fn png_roundtrip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(Shape::new(4, 5, 3), |y, x, c| ((y * 5 + x) * 3 + c) as f64 / 60.0);
        let path = dir.path().join("a.png");
        write_png(&img, &path, BitDepth::Sixteen).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 65535.0 + 1e-12);

        let grey = Image::from_fn(Shape::new(2, 2, 1), |y, x, _| (y * 2 + x) as f64 / 3.0);
        let path = dir.path().join("g.png");
        write_png(&grey, &path, BitDepth::Eight).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert!(back.max_abs_diff(&grey).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
}
