//! The `SDNW` weights container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"SDNW" | u16 version (=1) | u8 arch tag | u32 entry count
//! per entry: u16 name length | name (UTF-8) | u8 rank | u32 dims[rank] | f32 values
//! ```
//!
//! Arch tags: 1 = MEN, 2 = PEN.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const SDNW_MAGIC: &[u8; 4] = b"SDNW";
pub const SDNW_VERSION: u16 = 1;

/// Channel width of every MEN layer between stem and head.
pub const MEN_FEATURES: usize = 32;
pub const MEN_BLOCKS: usize = 6;
/// PEN feature counts from the finest to the coarsest scale.
pub const PEN_FEATURES: [usize; 3] = [8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Men,
    Pen,
}

impl Architecture {
    pub fn tag(self) -> u8 {
        match self {
            Architecture::Men => 1,
            Architecture::Pen => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Architecture::Men),
            2 => Ok(Architecture::Pen),
            t => Err(Error::Weights(format!("unknown architecture tag {t}"))),
        }
    }

    /// Ordered `(name, shape)` list a bundle for `channels`-channel images
    /// must match exactly.
    pub fn signature(self, channels: usize) -> Vec<(String, Vec<usize>)> {
        let mut sig = Vec::new();
        let mut conv = |name: &str, out_c: usize, in_c: usize| {
            sig.push((format!("{name}.weight"), vec![out_c, in_c, 3, 3]));
            sig.push((format!("{name}.bias"), vec![out_c]));
        };
        match self {
            Architecture::Men => {
                conv("stem", MEN_FEATURES, 2 * channels);
                for b in 0..MEN_BLOCKS {
                    conv(&format!("blocks.{b}.conv1"), MEN_FEATURES, MEN_FEATURES);
                    conv(&format!("blocks.{b}.conv2"), MEN_FEATURES, MEN_FEATURES);
                }
                conv("head", channels, MEN_FEATURES);
            }
            Architecture::Pen => {
                let [f0, f1, f2] = PEN_FEATURES;
                conv("enc0.conv1", f0, channels);
                conv("enc0.conv2", f0, f0);
                conv("enc1.conv1", f1, f0);
                conv("enc1.conv2", f1, f1);
                conv("enc2.conv1", f2, f1);
                conv("enc2.conv2", f2, f2);
                conv("dec1.conv1", f1, f2 + f1);
                conv("dec1.conv2", f1, f1);
                conv("dec0.conv1", f0, f1 + f0);
                conv("dec0.conv2", f0, f0);
                conv("head", channels, f0);
            }
        }
        sig
    }

    /// Image channel count implied by the shape of the first weight entry.
    fn channels_from(self, first: &[usize]) -> Option<usize> {
        let in_c = *first.get(1)?;
        match self {
            Architecture::Men if in_c % 2 == 0 => Some(in_c / 2),
            Architecture::Men => None,
            Architecture::Pen => Some(in_c),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Men => "MEN",
            Architecture::Pen => "PEN",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Named parameter tensors for one of the two estimator networks.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightsBundle {
    arch: Architecture,
    channels: usize,
    entries: Vec<WeightEntry>,
}

impl WeightsBundle {
    /// Validates entries against the architecture signature.
    pub fn new(arch: Architecture, entries: Vec<WeightEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Weights(format!("{arch} bundle has no entries")))?;
        let channels = arch
            .channels_from(&first.shape)
            .filter(|c| *c == 1 || *c == 3)
            .ok_or_else(|| {
                Error::Weights(format!(
                    "{arch}: cannot infer channel count from {:?}",
                    first.shape
                ))
            })?;
        let sig = arch.signature(channels);
        if sig.len() != entries.len() {
            return Err(Error::Weights(format!(
                "{arch} expects {} entries, found {}",
                sig.len(),
                entries.len()
            )));
        }
        for ((name, shape), e) in sig.iter().zip(&entries) {
            if &e.name != name || &e.shape != shape {
                return Err(Error::Weights(format!(
                    "{arch} entry mismatch: expected {name} {shape:?}, found {} {:?}",
                    e.name, e.shape
                )));
            }
            if e.values.len() != shape.iter().product::<usize>() {
                return Err(Error::Weights(format!(
                    "{name}: value count does not match shape"
                )));
            }
            if e.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("{name}: non-finite value")));
            }
        }
        Ok(WeightsBundle {
            arch,
            channels,
            entries,
        })
    }

    pub fn zeros(arch: Architecture, channels: usize) -> Result<Self> {
        let entries = arch
            .signature(channels)
            .into_iter()
            .map(|(name, shape)| WeightEntry {
                values: vec![0.0; shape.iter().product()],
                name,
                shape,
            })
            .collect();
        Self::new(arch, entries)
    }

    /// Fan-in scaled uniform initialisation from a ChaCha8 stream; biases get
    /// a small uniform offset so they are exercised too.
    pub fn seeded(arch: Architecture, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = arch
            .signature(channels)
            .into_iter()
            .map(|(name, shape)| {
                let count: usize = shape.iter().product();
                let bound = if shape.len() == 4 {
                    (6.0 / (shape[1] * shape[2] * shape[3]) as f64).sqrt() * 0.5
                } else {
                    0.05
                };
                let values = (0..count)
                    .map(|_| rng.random_range(-bound..bound) as f32)
                    .collect();
                WeightEntry { name, shape, values }
            })
            .collect();
        Self::new(arch, entries)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    /// Image channels the network consumes and produces.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SDNW_MAGIC);
        out.extend_from_slice(&SDNW_VERSION.to_le_bytes());
        out.push(self.arch.tag());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for d in &e.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SDNW_MAGIC {
            return Err(Error::Weights("bad SDNW magic".into()));
        }
        let version = r.u16()?;
        if version != SDNW_VERSION {
            return Err(Error::Weights(format!("unsupported SDNW version {version}")));
        }
        let arch = Architecture::from_tag(r.u8()?)?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Weights("entry name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Weights(format!("{name}: shape overflows")))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Weights("size overflow".into()))?,
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(WeightEntry { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Weights(format!(
                "{} trailing bytes after last entry",
                bytes.len() - r.pos
            )));
        }
        Self::new(arch, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub fn load_weights(path: &Path) -> Result<WeightsBundle> {
    WeightsBundle::load(path)
}

pub fn save_weights(w: &WeightsBundle, path: &Path) -> Result<()> {
    w.save(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Weights(format!("truncated SDNW file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
