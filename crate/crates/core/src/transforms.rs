//! Analysis and synthesis trunks, quality configurations and the full weight set.

use crate::blocks::{
    cross_attn, dc_block, dc_stack, AttentionWeights, DcBlockWeights, Projection, DEFAULT_HEADS, DEFAULT_NEIGHBORHOOD,
};
use crate::entropy::Beta;
use crate::error::{Error, Result};
use crate::hpcm::{HpcmWeights, HyperWeights};
use crate::lattice::{LatticeBasis, LATTICE_DIM};
use crate::temporal::TemporalWeights;
use crate::tensor::{apply_rate_vector, pixel_shuffle, pixel_unshuffle, Shape, Tensor};
use crate::weights::{Init, Loader};

pub const TRUNK_CHANNELS: usize = 64;
pub const LATENT_CHANNELS: usize = 32;
pub const DC_BLOCKS: usize = 4;
pub const MLP_RATIO: usize = 2;
pub const SHUFFLE_GROUPS: usize = 4;
/// Pixel-unshuffle factor at the trunk input.
pub const PATCH: usize = 8;
/// Total spatial downsampling from frame to latent.
pub const FRAME_ALIGN: usize = 16;
pub const QUALITY_LEVELS: usize = 64;
pub const LAMBDA_MIN: f64 = 0.0009;
pub const LAMBDA_MAX: f64 = 0.0483;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodingMode {
    Ai,
    Ld,
    Ra,
}

impl CodingMode {
    pub fn index(self) -> usize {
        match self {
            Self::Ai => 0,
            Self::Ld => 1,
            Self::Ra => 2,
        }
    }
}

/// Lagrange multiplier of quality `index`, log-spaced over the 64 levels.
pub fn lambda_for(index: usize) -> f64 {
    let t = index as f64 / (QUALITY_LEVELS - 1) as f64;
    (LAMBDA_MIN.ln() * (1.0 - t) + LAMBDA_MAX.ln() * t).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityConfig {
    pub index: usize,
    pub lambda: f64,
    pub q_e: Vec<f32>,
    pub q_d: Vec<f32>,
    pub q_f: Vec<f32>,
    pub q_r: Vec<f32>,
    /// Density scalar.
    pub a: f64,
    pub beta_by_mode: [Beta; 3],
    /// Intra prior feature, one value per trunk channel.
    pub f_p: Vec<f32>,
}

impl QualityConfig {
    pub fn beta(&self, mode: CodingMode) -> Beta {
        self.beta_by_mode[mode.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrunkWeights {
    pub enc_in: Projection,
    pub enc_attn: AttentionWeights,
    pub enc_blocks: Vec<DcBlockWeights>,
    pub enc_down: Projection,
    pub dec_up: Projection,
    pub dec_attn: AttentionWeights,
    pub dec_blocks: Vec<DcBlockWeights>,
    pub head_block: DcBlockWeights,
    pub head_out: Projection,
}

impl TrunkWeights {
    pub fn zeros() -> Self {
        let (c, l) = (TRUNK_CHANNELS, LATENT_CHANNELS);
        let block = DcBlockWeights::zeros(c, MLP_RATIO, SHUFFLE_GROUPS);
        let attn = AttentionWeights::zeros(c, DEFAULT_HEADS, DEFAULT_NEIGHBORHOOD);
        Self {
            enc_in: Projection::zeros(c, 3 * PATCH * PATCH),
            enc_attn: attn.clone(),
            enc_blocks: vec![block.clone(); DC_BLOCKS],
            enc_down: Projection::zeros(l, 4 * c),
            dec_up: Projection::zeros(4 * c, l),
            dec_attn: attn,
            dec_blocks: vec![block.clone(); DC_BLOCKS],
            head_block: block,
            head_out: Projection::zeros(3 * PATCH * PATCH, c),
        }
    }

    pub fn load(loader: &mut Loader<'_>) -> Result<Self> {
        let (c, l) = (TRUNK_CHANNELS, LATENT_CHANNELS);
        let blocks = |loader: &mut Loader<'_>, prefix: &str| {
            (0..DC_BLOCKS)
                .map(|i| DcBlockWeights::load(loader, &format!("{prefix}.{i}"), c, MLP_RATIO, SHUFFLE_GROUPS))
                .collect::<Result<Vec<_>>>()
        };
        let attn = |loader: &mut Loader<'_>, prefix: &str| {
            AttentionWeights::load(loader, prefix, c, DEFAULT_HEADS, DEFAULT_NEIGHBORHOOD)
        };
        Ok(Self {
            enc_in: Projection::load(loader, "enc.in", c, 3 * PATCH * PATCH, 1.0, Init::Zeros)?,
            enc_attn: attn(loader, "enc.attn")?,
            enc_blocks: blocks(loader, "enc.block")?,
            enc_down: Projection::load(loader, "enc.down", l, 4 * c, 1.5, Init::Zeros)?,
            dec_up: Projection::load(loader, "dec.up", 4 * c, l, 1.0, Init::Zeros)?,
            dec_attn: attn(loader, "dec.attn")?,
            dec_blocks: blocks(loader, "dec.block")?,
            head_block: DcBlockWeights::load(loader, "head.block", c, MLP_RATIO, SHUFFLE_GROUPS)?,
            head_out: Projection::load(loader, "head.out", 3 * PATCH * PATCH, c, 0.3, Init::Const(0.5))?,
        })
    }
}

/// Every parameter of the codec.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecWeights {
    pub trunk: TrunkWeights,
    pub hyper: HyperWeights,
    pub hpcm: HpcmWeights,
    pub basis: LatticeBasis,
    pub temporal: TemporalWeights,
    pub qualities: Vec<QualityConfig>,
}

fn positive(name: &str, t: &Tensor) -> Result<()> {
    match t.data().iter().find(|&&v| !(v > 0.0)) {
        Some(bad) => Err(Error::weight(name, format!("expected positive values, found {bad}"))),
        None => Ok(()),
    }
}

fn load_qualities(loader: &mut Loader<'_>) -> Result<Vec<QualityConfig>> {
    let (q, c) = (QUALITY_LEVELS, TRUNK_CHANNELS);
    let betas = loader.vector("entropy.beta", 3, Init::Uniform(1.0, 2.0))?;
    let beta_by_mode = {
        let mut out = [Beta::new(2.0)?; 3];
        for (slot, &b) in out.iter_mut().zip(betas.data()) {
            *slot = Beta::new(b as f64).map_err(|e| Error::weight("entropy.beta", e.to_string()))?;
        }
        out
    };
    let a = loader.vector("quality.a", q, Init::GeometricRamp(0.25, 8.0))?;
    positive("quality.a", &a)?;
    let mut banks = Vec::new();
    for bank in ["q_e", "q_d", "q_f", "q_r"] {
        let base = loader.vector(&format!("quality.{bank}.base"), c, Init::LogNormal(0.0, 0.1))?;
        positive(&format!("quality.{bank}.base"), &base)?;
        let name = format!("quality.{bank}.level");
        let level = loader.take(&name, Shape::new(1, 1, q, c), Init::Uniform(0.95, 1.05))?;
        positive(&name, &level)?;
        banks.push((base, level));
    }
    let f_p = loader.take("quality.f_p", Shape::new(1, 1, q, c), Init::SharedRows(0.1))?;
    let vector = |(base, level): &(Tensor, Tensor), i: usize| -> Vec<f32> {
        (0..c).map(|ch| base.data()[ch] * level.data()[i * c + ch]).collect()
    };
    Ok((0..q)
        .map(|i| QualityConfig {
            index: i,
            lambda: lambda_for(i),
            q_e: vector(&banks[0], i),
            q_d: vector(&banks[1], i),
            q_f: vector(&banks[2], i),
            q_r: vector(&banks[3], i),
            a: a.data()[i] as f64,
            beta_by_mode,
            f_p: f_p.data()[i * c..(i + 1) * c].to_vec(),
        })
        .collect())
}

fn load_basis(loader: &mut Loader<'_>) -> Result<LatticeBasis> {
    let n = LATTICE_DIM;
    let u = loader.take("lattice.u", Shape::new(1, 1, n, n), Init::Orthogonal)?;
    let sigma = loader.vector("lattice.sigma", n, Init::Uniform(0.8, 1.25))?;
    let v = loader.take("lattice.v", Shape::new(1, 1, n, n), Init::Orthogonal)?;
    let f64s = |t: &Tensor| t.data().iter().map(|&x| x as f64).collect::<Vec<_>>();
    LatticeBasis::from_svd(&f64s(&u), &f64s(&sigma), &f64s(&v)).map_err(|e| Error::weight("lattice", e.to_string()))
}

impl CodecWeights {
    /// Pulls every tensor from `loader` in a fixed order and validates it.
    pub fn load(loader: &mut Loader<'_>) -> Result<Self> {
        let trunk = TrunkWeights::load(loader)?;
        let hyper = HyperWeights::load(loader, "hyper", LATENT_CHANNELS, TRUNK_CHANNELS)?;
        let hpcm = HpcmWeights::load(loader, "hpcm", LATENT_CHANNELS)?;
        let basis = load_basis(loader)?;
        let temporal = TemporalWeights::load(loader, "temporal", TRUNK_CHANNELS, MLP_RATIO, SHUFFLE_GROUPS)?;
        let qualities = load_qualities(loader)?;
        Ok(Self {
            trunk,
            hyper,
            hpcm,
            basis,
            temporal,
            qualities,
        })
    }

    pub fn quality(&self, index: usize) -> Result<&QualityConfig> {
        self.qualities
            .get(index)
            .ok_or_else(|| Error::invalid(format!("quality index {index} outside [0, {}]", QUALITY_LEVELS - 1)))
    }
}

fn check_frame(frame: &Tensor) -> Result<()> {
    let s = frame.shape();
    if s.n != 1
        || s.c != 3
        || s.h == 0
        || s.w == 0
        || !s.h.is_multiple_of(FRAME_ALIGN)
        || !s.w.is_multiple_of(FRAME_ALIGN)
    {
        return Err(Error::invalid(format!(
            "frame must be (1, 3, H, W) with H, W positive multiples of {FRAME_ALIGN}, got {s:?}"
        )));
    }
    Ok(())
}

/// Frame to latent. Returns the latent `(1, 32, H/16, W/16)` and the trunk
/// features after the rate vector.
pub fn analyze(frame: &Tensor, temporal: &Tensor, q: &QualityConfig, w: &TrunkWeights) -> Result<(Tensor, Tensor)> {
    check_frame(frame)?;
    let f = w.enc_in.apply(&pixel_unshuffle(frame, PATCH)?)?;
    let f = cross_attn(&f, temporal, &w.enc_attn)?;
    let f = apply_rate_vector(&dc_stack(&f, &w.enc_blocks)?, &q.q_e)?;
    let y = w.enc_down.apply(&pixel_unshuffle(&f, 2)?)?;
    Ok((y, f))
}

/// Latent to frame. Returns `(x_hat, f_d, f_r)`.
pub fn synthesize(
    y_hat: &Tensor,
    temporal: &Tensor,
    q: &QualityConfig,
    w: &TrunkWeights,
) -> Result<(Tensor, Tensor, Tensor)> {
    let u = pixel_shuffle(&w.dec_up.apply(y_hat)?, 2)?;
    let u = cross_attn(&u, temporal, &w.dec_attn)?;
    let f_d = apply_rate_vector(&dc_stack(&u, &w.dec_blocks)?, &q.q_d)?;
    let f_r = apply_rate_vector(&dc_block(&f_d, &w.head_block)?, &q.q_r)?;
    let x_hat = pixel_shuffle(&w.head_out.apply(&f_r)?, PATCH)?;
    Ok((x_hat, f_d, f_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::SeededSource;

    fn unit_quality() -> QualityConfig {
        QualityConfig {
            index: 0,
            lambda: LAMBDA_MIN,
            q_e: vec![1.0; TRUNK_CHANNELS],
            q_d: vec![1.0; TRUNK_CHANNELS],
            q_f: vec![1.0; TRUNK_CHANNELS],
            q_r: vec![1.0; TRUNK_CHANNELS],
            a: 1.0,
            beta_by_mode: [Beta::new(2.0).unwrap(); 3],
            f_p: vec![0.0; TRUNK_CHANNELS],
        }
    }

    fn frame(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, i, j| {
            ((c * 31 + i * 7 + j * 13) % 29) as f32 / 28.0
        })
    }

    #[test]
    fn lambda_endpoints() {
        assert!((lambda_for(0) - LAMBDA_MIN).abs() < 1e-12);
        assert!((lambda_for(63) - LAMBDA_MAX).abs() < 1e-12);
    }

    #[test]
    fn zero_trunk_gives_bias_fields() {
        let mut w = TrunkWeights::zeros();
        w.enc_down.bias = Tensor::from_fn(w.enc_down.bias.shape(), |_, c, _, _| c as f32 * 0.1);
        w.head_out.bias = Tensor::full(w.head_out.bias.shape(), 0.5);
        let q = unit_quality();
        let x = frame(32, 48);
        let t = Tensor::zeros(Shape::new(1, TRUNK_CHANNELS, 4, 6));
        let (y, _) = analyze(&x, &t, &q, &w).unwrap();
        assert_eq!(y.shape(), Shape::new(1, LATENT_CHANNELS, 2, 3));
        for c in 0..LATENT_CHANNELS {
            assert!(y.plane(0, c).iter().all(|&v| v == c as f32 * 0.1));
        }
        let (x_hat, _, _) = synthesize(&y, &t, &q, &w).unwrap();
        assert_eq!(x_hat.shape(), x.shape());
        assert!(x_hat.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn seeded_shapes_and_determinism() {
        let mut src = SeededSource::new(5);
        let mut loader = Loader::new(&mut src);
        let w = CodecWeights::load(&mut loader).unwrap();
        assert_eq!(w.qualities.len(), QUALITY_LEVELS);
        let q = w.quality(20).unwrap();
        let x = frame(64, 32);
        let t = Tensor::broadcast_channels(&q.f_p, 8, 4);
        let (y1, _) = analyze(&x, &t, q, &w.trunk).unwrap();
        let (y2, _) = analyze(&x, &t, q, &w.trunk).unwrap();
        assert!(y1.bit_eq(&y2));
        assert_eq!(y1.shape(), Shape::new(1, LATENT_CHANNELS, 4, 2));
        let (x_hat, f_d, f_r) = synthesize(&y1, &t, q, &w.trunk).unwrap();
        assert_eq!(x_hat.shape(), x.shape());
        assert_eq!(f_d.shape(), f_r.shape());
        assert!(w.quality(64).is_err());
    }

    #[test]
    fn rejects_unaligned_frames() {
        let w = TrunkWeights::zeros();
        let t = Tensor::zeros(Shape::new(1, TRUNK_CHANNELS, 3, 3));
        assert!(analyze(&frame(24, 24), &t, &unit_quality(), &w).is_err());
    }
}
