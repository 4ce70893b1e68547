//! Named-tensor weight sources and the binary weight container.
//!
//! A model is built by pulling tensors by name from a [`ParamSource`]. The
//! seeded source derives each tensor from a ChaCha stream keyed by
//! `sha256(seed || name)`, so every tensor is reproducible on any platform and
//! independent of construction order. The file source looks tensors up in a
//! parsed container. Either way the [`Loader`] records what was taken so the
//! model can be written back out verbatim.
//!
//! Container layout (all integers little-endian, no padding):
//!
//! ```text
//! magic      4 bytes  "ULVW"
//! version    u8       1
//! kind       u8       0 = tensor list, 1 = seeded
//! kind 1:    seed u64
//! kind 0:    count u32, then per tensor:
//!              name_len u16, name (utf-8), dims 4 x u32 (n, c, h, w),
//!              data f32 x n*c*h*w
//! ```

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"ULVW";
pub const WEIGHT_VERSION: u8 = 1;

/// How the seeded source fills a tensor. File sources ignore it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f32),
    Normal(f32),
    Uniform(f32, f32),
    /// `exp(mean + std * N(0,1))`, strictly positive.
    LogNormal(f32, f32),
    /// Random orthogonal `(h, w)` matrix with `h == w` (Gram-Schmidt on Gaussian columns).
    Orthogonal,
    /// Values increasing geometrically from `lo` to `hi` across the flat index.
    GeometricRamp(f32, f32),
    /// One `Normal(0, std)` row of width `w` repeated over every row.
    SharedRows(f32),
}

pub trait ParamSource {
    fn fetch(&mut self, name: &str, shape: Shape, init: Init) -> Result<Tensor>;

    /// Called once the model has taken every tensor it needs.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Deterministic counter-based initializer.
#[derive(Clone, Debug)]
pub struct SeededSource {
    seed: u64,
}

impl SeededSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, name: &str) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha20Rng::from_seed(key)
    }
}

impl ParamSource for SeededSource {
    fn fetch(&mut self, name: &str, shape: Shape, init: Init) -> Result<Tensor> {
        let numel = shape.numel();
        let mut rng = self.rng_for(name);
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Const(v) => vec![v; numel],
            Init::Normal(std) => {
                let normal = Normal::new(0.0f32, std).map_err(|e| Error::weight(name, e.to_string()))?;
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            }
            Init::Uniform(lo, hi) => (0..numel).map(|_| rng.random_range(lo..hi)).collect(),
            Init::LogNormal(mean, std) => {
                let normal = Normal::new(0.0f32, 1.0).map_err(|e| Error::weight(name, e.to_string()))?;
                (0..numel)
                    .map(|_| (mean + std * normal.sample(&mut rng)).exp())
                    .collect()
            }
            Init::Orthogonal => {
                if shape.h != shape.w || shape.n * shape.c != 1 {
                    return Err(Error::weight(name, "orthogonal init needs a 1x1xNxN shape"));
                }
                random_orthogonal(shape.h, &mut rng)
            }
            Init::GeometricRamp(lo, hi) => {
                let steps = numel.saturating_sub(1).max(1) as f64;
                (0..numel)
                    .map(|i| {
                        let t = i as f64 / steps;
                        ((lo as f64).ln() * (1.0 - t) + (hi as f64).ln() * t).exp() as f32
                    })
                    .collect()
            }
            Init::SharedRows(std) => {
                let normal = Normal::new(0.0f32, std).map_err(|e| Error::weight(name, e.to_string()))?;
                let row: Vec<f32> = (0..shape.w).map(|_| normal.sample(&mut rng)).collect();
                row.iter().copied().cycle().take(numel).collect()
            }
        };
        Tensor::new(shape, data).map_err(|e| Error::weight(name, e.to_string()))
    }
}

fn random_orthogonal(n: usize, rng: &mut ChaCha20Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    loop {
        // columns of a Gaussian matrix, orthonormalized twice for stability
        let mut cols: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| normal.sample(rng)).collect()).collect();
        let mut ok = true;
        for _pass in 0..2 {
            for j in 0..n {
                for k in 0..j {
                    let dot: f64 = (0..n).map(|i| cols[j][i] * cols[k][i]).sum();
                    for i in 0..n {
                        cols[j][i] -= dot * cols[k][i];
                    }
                }
                let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-6 {
                    ok = false;
                    break;
                }
                cols[j].iter_mut().for_each(|v| *v /= norm);
            }
        }
        if ok {
            // row-major: element (i, j) is column j, row i
            let mut out = vec![0.0f32; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = cols[j][i] as f32;
                }
            }
            return out;
        }
    }
}

/// Tensor-list source backed by a parsed weight container.
#[derive(Clone, Debug, Default)]
pub struct MapSource {
    tensors: HashMap<String, Tensor>,
}

impl MapSource {
    pub fn new(tensors: Vec<(String, Tensor)>) -> Self {
        Self {
            tensors: tensors.into_iter().collect(),
        }
    }
}

impl ParamSource for MapSource {
    fn fetch(&mut self, name: &str, shape: Shape, _init: Init) -> Result<Tensor> {
        let tensor = self
            .tensors
            .remove(name)
            .ok_or_else(|| Error::weight(name, "missing from weight file"))?;
        if tensor.shape() != shape {
            return Err(Error::weight(
                name,
                format!("expected shape {shape}, found {}", tensor.shape()),
            ));
        }
        Ok(tensor)
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(name) = self.tensors.keys().min() {
            return Err(Error::weight(name.clone(), "unexpected tensor in weight file"));
        }
        Ok(())
    }
}

/// Pulls tensors from a source and records them in acquisition order.
pub struct Loader<'a> {
    source: &'a mut dyn ParamSource,
    record: Vec<(String, Tensor)>,
}

impl<'a> Loader<'a> {
    pub fn new(source: &'a mut dyn ParamSource) -> Self {
        Self {
            source,
            record: Vec::new(),
        }
    }

    pub fn take(&mut self, name: &str, shape: Shape, init: Init) -> Result<Tensor> {
        let tensor = self.source.fetch(name, shape, init)?;
        self.record.push((name.to_owned(), tensor.clone()));
        Ok(tensor)
    }

    /// Shorthand for a `(c_out, c_in, 1, 1)` linear weight.
    pub fn linear(&mut self, name: &str, c_out: usize, c_in: usize, init: Init) -> Result<Tensor> {
        self.take(name, Shape::new(c_out, c_in, 1, 1), init)
    }

    /// Shorthand for a `(1, len, 1, 1)` vector.
    pub fn vector(&mut self, name: &str, len: usize, init: Init) -> Result<Tensor> {
        self.take(name, Shape::new(1, len, 1, 1), init)
    }

    pub fn finish(self) -> Result<Vec<(String, Tensor)>> {
        self.source.finish()?;
        Ok(self.record)
    }
}

/// Serializes a tensor list into the container format.
pub fn encode_tensor_file(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|(name, t)| 2 + name.len() + 16 + 4 * t.len()).sum();
    let mut out = Vec::with_capacity(10 + payload);
    out.extend_from_slice(WEIGHT_MAGIC);
    out.push(WEIGHT_VERSION);
    out.push(0);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let s = tensor.shape();
        for d in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Serializes a seeded-initializer container.
pub fn encode_seed_file(seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(14);
    out.extend_from_slice(WEIGHT_MAGIC);
    out.push(WEIGHT_VERSION);
    out.push(1);
    out.extend_from_slice(&seed.to_le_bytes());
    out
}

/// Parsed weight container.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightFile {
    Seeded(u64),
    Tensors(Vec<(String, Tensor)>),
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated: need {n} more bytes")));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_weight_file(data: &[u8]) -> Result<WeightFile> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.bytes(4)? != WEIGHT_MAGIC {
        return Err(Error::format(0, "bad weight file magic"));
    }
    let version = cur.u8()?;
    if version != WEIGHT_VERSION {
        return Err(Error::format(4, format!("unsupported weight file version {version}")));
    }
    let kind = cur.u8()?;
    let parsed = match kind {
        1 => WeightFile::Seeded(cur.u64()?),
        0 => {
            let count = cur.u32()? as usize;
            let mut tensors = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                let name_len = cur.u16()? as usize;
                let at = cur.pos;
                let name = std::str::from_utf8(cur.bytes(name_len)?)
                    .map_err(|_| Error::format(at, "tensor name is not utf-8"))?
                    .to_owned();
                let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
                let shape = Shape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
                let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
                let numel = numel
                    .filter(|n| n.checked_mul(4).is_some_and(|b| b <= data.len()))
                    .ok_or_else(|| Error::format(cur.pos, format!("tensor `{name}` too large")))?;
                let raw = cur.bytes(numel * 4)?;
                let values = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                let tensor = Tensor::new(shape, values).map_err(|e| Error::weight(&name, e.to_string()))?;
                tensors.push((name, tensor));
            }
            WeightFile::Tensors(tensors)
        }
        other => return Err(Error::format(5, format!("unknown weight file kind {other}"))),
    };
    if cur.pos != data.len() {
        return Err(Error::format(cur.pos, "trailing bytes after weight container"));
    }
    Ok(parsed)
}

/// 64-bit fingerprint of a tensor list: the first 8 bytes of the SHA-256 of
/// its container encoding, little-endian.
pub fn fingerprint(tensors: &[(String, Tensor)]) -> u64 {
    let digest = Sha256::digest(encode_tensor_file(tensors));
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
