use std::sync::Arc;

use crate::blocks::{cross_attn, AttentionWeights, Projection, DEFAULT_HEADS, DEFAULT_NEIGHBORHOOD};
use crate::entropy::{cached_pmf, range_decode, range_encode, snap_params, Beta, PmfTable, SYMBOL_MAX, SYMBOL_MIN};
use crate::error::{Error, Result};
use crate::tensor::{pixel_shuffle, pixel_unshuffle, wsilu, Shape, Tensor};
use crate::weights::{Init, Loader};

/// Range of the raw element-wise scale logits before `exp`.
pub const SCALE_LOGIT_LIMIT: f32 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HyperWeights {
    pub enc1: Projection,
    pub enc2: Projection,
    pub dec1: Projection,
    pub dec2: Projection,
    /// Static per-channel prior of `z`.
    pub z_mu: Tensor,
    pub z_sigma: Tensor,
    pub z_beta: Beta,
    /// Projects the trunk-grid temporal feature onto the latent grid.
    pub bridge: Projection,
    pub attn: AttentionWeights,
}

impl HyperWeights {
    pub fn latent_channels(&self) -> usize {
        self.enc1.weight.shape().c / 4
    }

    pub fn z_channels(&self) -> usize {
        self.enc2.out_channels()
    }

    pub fn load(loader: &mut Loader<'_>, prefix: &str, latent: usize, trunk: usize) -> Result<Self> {
        let zc = latent / 2;
        let hidden = latent * 2;
        let z_sigma = loader.vector(&format!("{prefix}.z_sigma"), zc, Init::Uniform(0.6, 1.6))?;
        if let Some(bad) = z_sigma.data().iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::weight(
                format!("{prefix}.z_sigma"),
                format!("scale must be positive, found {bad}"),
            ));
        }
        let z_beta_t = loader.vector(&format!("{prefix}.z_beta"), 1, Init::Const(1.5))?;
        let z_beta = Beta::new(z_beta_t.data()[0] as f64)
            .map_err(|e| Error::weight(format!("{prefix}.z_beta"), e.to_string()))?;
        Ok(Self {
            enc1: Projection::load(loader, &format!("{prefix}.enc1"), latent, latent * 4, 1.0, Init::Zeros)?,
            enc2: Projection::load(loader, &format!("{prefix}.enc2"), zc, latent, 1.0, Init::Zeros)?,
            dec1: Projection::load(loader, &format!("{prefix}.dec1"), hidden, zc, 1.0, Init::Zeros)?,
            dec2: Projection::load(
                loader,
                &format!("{prefix}.dec2"),
                latent * 3 * 4,
                hidden,
                0.5,
                Init::Zeros,
            )?,
            z_mu: loader.vector(&format!("{prefix}.z_mu"), zc, Init::Normal(0.1))?,
            z_sigma,
            z_beta,
            bridge: Projection::load(loader, &format!("{prefix}.bridge"), latent, trunk * 4, 0.5, Init::Zeros)?,
            attn: AttentionWeights::load(
                loader,
                &format!("{prefix}.attn"),
                latent,
                DEFAULT_HEADS,
                DEFAULT_NEIGHBORHOOD,
            )?,
        })
    }

    fn z_tables(&self) -> Vec<Arc<PmfTable>> {
        self.z_mu
            .data()
            .iter()
            .zip(self.z_sigma.data())
            .map(|(&mu, &sigma)| cached_pmf(&snap_params(mu as f64, sigma as f64, self.z_beta)))
            .collect()
    }

    /// One pmf per coded symbol of a `(1, zc, h, w)` hyper-latent, channel-major.
    fn z_pmfs(&self, h: usize, w: usize) -> Vec<Arc<PmfTable>> {
        self.z_tables()
            .into_iter()
            .flat_map(|t| std::iter::repeat_n(t, h * w))
            .collect()
    }
}

/// Decoded side information on the padded latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperLatent {
    /// Integer-valued hyper-latent.
    pub z: Tensor,
    /// Initial entropy features, `(1, C, h, w)`.
    pub features: Tensor,
    /// Encoder-side element-wise scale, strictly positive.
    pub w_e: Tensor,
    /// Decoder-side element-wise scale, strictly positive.
    pub w_d: Tensor,
}

#[derive(Clone, Debug)]
pub struct HyperCode {
    pub symbols: Vec<i32>,
    pub payload: Vec<u8>,
    pub ideal_bits: f64,
    pub latent: HyperLatent,
}

fn check_latent(y: &Tensor, w: &HyperWeights) -> Result<()> {
    let s = y.shape();
    if s.n != 1 || s.c != w.latent_channels() || !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "hyper path expects (1, {}, even, even), got {s:?}",
            w.latent_channels()
        )));
    }
    Ok(())
}

/// Strided analysis of the latent: unshuffle by 2, two pointwise layers.
pub fn hyper_analysis(y: &Tensor, w: &HyperWeights) -> Result<Tensor> {
    check_latent(y, w)?;
    let h = wsilu(&w.enc1.apply(&pixel_unshuffle(y, 2)?)?);
    w.enc2.apply(&h)
}

/// Maps the decoded hyper-latent to entropy features and the scales
/// `w = exp(clamp(logit, -3, 3))`.
pub fn hyper_synthesis(z: &Tensor, w: &HyperWeights) -> Result<HyperLatent> {
    let c = w.latent_channels();
    let h = wsilu(&w.dec1.apply(z)?);
    let out = pixel_shuffle(&w.dec2.apply(&h)?, 2)?;
    let positive = |t: Tensor| t.map(|v| v.clamp(-SCALE_LOGIT_LIMIT, SCALE_LOGIT_LIMIT).exp());
    Ok(HyperLatent {
        z: z.clone(),
        features: out.slice_channels(0, c)?,
        w_e: positive(out.slice_channels(c, c)?),
        w_d: positive(out.slice_channels(2 * c, c)?),
    })
}

pub fn hyper_encode(y: &Tensor, w: &HyperWeights) -> Result<HyperCode> {
    let z = hyper_analysis(y, w)?;
    let s = z.shape();
    let symbols: Vec<i32> = z
        .data()
        .iter()
        .map(|&v| (v.round() as i32).clamp(SYMBOL_MIN, SYMBOL_MAX))
        .collect();
    let pmfs = w.z_pmfs(s.h, s.w);
    let ideal_bits = symbols.iter().zip(&pmfs).map(|(&sym, p)| p.bits(sym)).sum();
    let payload = range_encode(&symbols, &pmfs)?;
    let z_hat = Tensor::new(s, symbols.iter().map(|&v| v as f32).collect())?;
    Ok(HyperCode {
        symbols,
        payload,
        ideal_bits,
        latent: hyper_synthesis(&z_hat, w)?,
    })
}

/// Decodes the hyper-latent of a `latent_h x latent_w` padded latent grid.
pub fn hyper_decode(payload: &[u8], latent_h: usize, latent_w: usize, w: &HyperWeights) -> Result<HyperLatent> {
    if !latent_h.is_multiple_of(2) || !latent_w.is_multiple_of(2) {
        return Err(Error::invalid("latent grid must be even"));
    }
    let (h, wd) = (latent_h / 2, latent_w / 2);
    let symbols = range_decode(payload, &w.z_pmfs(h, wd))?;
    let z_hat = Tensor::new(
        Shape::new(1, w.z_channels(), h, wd),
        symbols.iter().map(|&v| v as f32).collect(),
    )?;
    hyper_synthesis(&z_hat, w)
}

/// Entropy-model cross attention: the hyper features attend to the temporal
/// feature after it is brought onto the latent grid (unshuffle by 2, pointwise
/// projection, zero padding to the padded latent size).
pub fn condition_features(hyper: &HyperLatent, temporal: &Tensor, w: &HyperWeights) -> Result<Tensor> {
    let target = hyper.features.shape();
    let down = w.bridge.apply(&pixel_unshuffle(temporal, 2)?)?;
    let ds = down.shape();
    if ds.h > target.h || ds.w > target.w {
        return Err(Error::invalid(format!(
            "temporal grid {}x{} exceeds latent grid {}x{}",
            ds.h, ds.w, target.h, target.w
        )));
    }
    let aligned = down.pad_zero(target.w - ds.w, target.h - ds.h);
    cross_attn(&hyper.features, &aligned, &w.attn)
}
