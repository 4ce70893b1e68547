use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{bits_per_pixel, psnr_from_mse};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const RAW_MAGIC: &str = "ULVCRAW";

/// 8-bit planar RGB frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB frame needs {} bytes, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Planes R, G, B, each row-major.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Unit-range tensor `(1, 3, h, w)`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            Shape::new(1, 3, self.height, self.width),
            self.data.iter().map(|&v| v as f32 / 255.0).collect(),
        )
        .expect("sizes match by construction")
    }

    /// Rounds the top-left `width x height` window of a unit-range tensor.
    pub fn from_tensor(t: &Tensor, width: usize, height: usize) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 || s.h < height || s.w < width {
            return Err(Error::invalid(format!("cannot take {width}x{height} RGB from {s:?}")));
        }
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for i in 0..height {
                for j in 0..width {
                    data.push((t.at(0, c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Ok(Self { width, height, data })
    }
}

/// `ULVCRAW <w> <h> <n>\n` followed by `n` planar RGB24 frames.
/// Deterministic test clip: a drifting colour gradient with a moving square
/// and mild per-pixel noise.
pub fn synthetic_clip(seed: u64, frames: usize, width: usize, height: usize) -> Result<Vec<Frame>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy): (f64, f64) = (rng.random_range(0.02..0.2), rng.random_range(0.02..0.2));
    let phase: [f64; 3] = [
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..6.3),
    ];
    let side = (width.min(height) / 4).max(2);
    let (vx, vy) = (rng.random_range(-3i64..=3), rng.random_range(-3i64..=3));
    (0..frames)
        .map(|t| {
            let mut data = Vec::with_capacity(3 * width * height);
            let ox = (width as i64 / 3 + vx * t as i64).rem_euclid(width as i64) as usize;
            let oy = (height as i64 / 3 + vy * t as i64).rem_euclid(height as i64) as usize;
            for (c, ph) in phase.iter().enumerate() {
                for i in 0..height {
                    for j in 0..width {
                        let base = 127.5 + 100.0 * ((j as f64 + 2.0 * t as f64) * fx + i as f64 * fy + ph).sin();
                        let inside = (i + height - oy) % height < side && (j + width - ox) % width < side;
                        let v = if inside { 40.0 + 70.0 * c as f64 } else { base };
                        let noise: f64 = rng.random_range(-6.0..6.0);
                        data.push((v + noise).round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            Frame::new(width, height, data)
        })
        .collect()
}

pub fn write_raw(frames: &[Frame]) -> Result<Vec<u8>> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::invalid("frames differ in size"));
    }
    let mut out = format!("{RAW_MAGIC} {w} {h} {}\n", frames.len()).into_bytes();
    for f in frames {
        out.extend_from_slice(&f.data);
    }
    Ok(out)
}

pub fn read_raw(data: &[u8]) -> Result<Vec<Frame>> {
    let end = data
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(0, "missing raw header line"))?;
    let line = std::str::from_utf8(&data[..end]).map_err(|_| Error::format(0, "raw header is not text"))?;
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 || fields[0] != RAW_MAGIC {
        return Err(Error::format(0, format!("bad raw header `{line}`")));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(0, format!("bad number `{s}`")))
    };
    let (w, h, n) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    let frame_bytes = 3 * w * h;
    let body = &data[end + 1..];
    let expected = frame_bytes
        .checked_mul(n)
        .ok_or_else(|| Error::format(0, "raw size overflow"))?;
    if body.len() != expected {
        return Err(Error::format(
            end + 1 + body.len().min(expected),
            format!("raw body holds {} bytes, header implies {expected}", body.len()),
        ));
    }
    if n > 0 && frame_bytes == 0 {
        return Err(Error::format(0, "zero-sized frames"));
    }
    Ok(body
        .chunks_exact(frame_bytes.max(1))
        .take(n)
        .map(|c| Frame {
            width: w,
            height: h,
            data: c.to_vec(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameStats {
    pub payload_bytes: usize,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceStats {
    pub frames: Vec<FrameStats>,
    pub mean_bpp: f64,
    pub mean_mse: f64,
    /// PSNR of the mean MSE.
    pub mean_psnr: f64,
    /// Whole stream including headers.
    pub stream_bpp: f64,
}

pub fn frame_mse(a: &Frame, b: &Frame) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::invalid("frame sizes differ"));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Per-frame distortion and rate. `payload_bytes[i]` is the payload of
/// display-order frame `i`.
pub fn compute_stats(
    original: &[Frame],
    reconstructed: &[Frame],
    payload_bytes: &[usize],
    stream_bytes: usize,
) -> Result<SequenceStats> {
    if original.len() != reconstructed.len() || original.len() != payload_bytes.len() {
        return Err(Error::invalid("frame counts differ"));
    }
    let frames = original
        .iter()
        .zip(reconstructed)
        .zip(payload_bytes)
        .map(|((o, r), &bytes)| {
            let mse = frame_mse(o, r)?;
            Ok(FrameStats {
                payload_bytes: bytes,
                bpp: bits_per_pixel(bytes, o.height, o.width),
                mse,
                psnr: psnr_from_mse(mse),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len().max(1) as f64;
    let mean_mse = frames.iter().map(|f| f.mse).sum::<f64>() / n;
    let pixels = original.first().map_or(1, |f| f.width * f.height) * original.len().max(1);
    Ok(SequenceStats {
        mean_bpp: frames.iter().map(|f| f.bpp).sum::<f64>() / n,
        mean_mse,
        mean_psnr: psnr_from_mse(mean_mse),
        stream_bpp: 8.0 * stream_bytes as f64 / pixels as f64,
        frames,
    })
}
