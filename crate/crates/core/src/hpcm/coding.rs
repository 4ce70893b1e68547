use std::sync::Arc;

use super::hyper::HyperLatent;
use super::schedule::{build_schedule, scale_of_step, upscale_writeback, CodingSchedule, STEP_COUNT};
use crate::blocks::Projection;
use crate::entropy::{
    cached_pmf, snap_params, Beta, EntropyParams, PmfTable, RangeDecoder, RangeEncoder, SYMBOL_MAX, SYMBOL_MIN,
};
use crate::error::{Error, Result};
use crate::lattice::{babai_round, lattice_reconstruct, lattice_transform, LatticeBasis};
use crate::tensor::{depthwise_conv, wsilu, Shape, Tensor};
use crate::weights::{Init, Loader};

/// Bound on the raw log-scale output before `exp`.
pub const LOG_SIGMA_LIMIT: f32 = 10.0;

/// Parameter network of one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleWeights {
    pub proj_in: Projection,
    pub dw_kernel: Tensor,
    pub proj_out: Projection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HpcmWeights {
    pub scales: Vec<ScaleWeights>,
}

impl HpcmWeights {
    pub fn zeros(latent: usize) -> Self {
        let hidden = latent * 2;
        Self {
            scales: (0..3)
                .map(|_| ScaleWeights {
                    proj_in: Projection::zeros(hidden, latent * 3),
                    dw_kernel: Tensor::zeros(Shape::new(hidden, 1, 3, 3)),
                    proj_out: Projection::zeros(latent * 2, hidden),
                })
                .collect(),
        }
    }

    pub fn load(loader: &mut Loader<'_>, prefix: &str, latent: usize) -> Result<Self> {
        let hidden = latent * 2;
        let scales = (0..3)
            .map(|s| {
                let p = format!("{prefix}.scale{s}");
                Ok(ScaleWeights {
                    proj_in: Projection::load(loader, &format!("{p}.in"), hidden, latent * 3, 1.0, Init::Zeros)?,
                    dw_kernel: loader.take(&format!("{p}.dw"), Shape::new(hidden, 1, 3, 3), Init::Normal(0.15))?,
                    proj_out: Projection::load(loader, &format!("{p}.out"), latent * 2, hidden, 0.3, Init::Zeros)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales })
    }

    pub fn latent_channels(&self) -> usize {
        self.scales[0].proj_out.out_channels() / 2
    }
}

/// Predicted parameters for the positions of one step.
///
/// `mu` and `coef` are position-major, channel-minor. `coef[i]` is the
/// zero-mean prior of transformed coefficient `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepParams {
    pub positions: Vec<(usize, usize)>,
    pub mu: Vec<f64>,
    pub coef: Vec<EntropyParams>,
}

/// Entropy parameters for step `step`, computed from the decoded context
/// (positions of later steps are masked to zero here) and the conditioned
/// hyper features.
pub fn predict_params(
    step: usize,
    schedule: &CodingSchedule,
    context: &Tensor,
    hyper_features: &Tensor,
    w: &HpcmWeights,
    beta: Beta,
) -> Result<StepParams> {
    if step >= STEP_COUNT {
        return Err(Error::invalid(format!("step {step} out of range")));
    }
    let c = w.latent_channels();
    for t in [context, hyper_features] {
        schedule.check_grid(t)?;
        if t.shape().c != c || t.shape().n != 1 {
            return Err(Error::invalid(format!(
                "expected {c} latent channels, got {:?}",
                t.shape()
            )));
        }
    }
    let scale = scale_of_step(step);
    let masked = schedule.mask_from(context, step)?;
    let coarse = if scale == 0 {
        Tensor::zeros(masked.shape())
    } else {
        upscale_writeback(&masked, schedule, scale - 1, step)?
    };
    let sw = &w.scales[scale];
    let x = Tensor::concat_channels(&[&masked, &coarse, hyper_features])?;
    let h = wsilu(&sw.proj_in.apply(&x)?);
    let h = wsilu(&depthwise_conv(&h, &sw.dw_kernel, 1, 1)?);
    let out = sw.proj_out.apply(&h)?;

    let positions = schedule.steps()[step].positions.clone();
    let mut mu = Vec::with_capacity(positions.len() * c);
    let mut coef = Vec::with_capacity(positions.len() * c);
    for &(r, col) in &positions {
        for ch in 0..c {
            let m = snap_params(out.at(0, ch, r, col) as f64, 1.0, beta).mu();
            let log_sigma = out.at(0, c + ch, r, col).clamp(-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT);
            mu.push(m);
            coef.push(snap_params(0.0, (log_sigma as f64).exp(), beta));
        }
    }
    Ok(StepParams { positions, mu, coef })
}

/// Shared settings of one latent coding pass.
#[derive(Clone, Copy, Debug)]
pub struct LatentConfig<'a> {
    pub basis: &'a LatticeBasis,
    /// Density scalar.
    pub a: f64,
    pub beta: Beta,
    /// Unpadded latent size; positions outside are forced to zero and skipped.
    pub valid_h: usize,
    pub valid_w: usize,
}

#[derive(Clone, Debug)]
pub struct LatentCode {
    pub payload: Vec<u8>,
    /// Reconstruction cropped to the valid latent size.
    pub y_hat: Tensor,
    pub symbols: Vec<i32>,
    pub ideal_bits: f64,
}

fn check_config(cfg: &LatentConfig<'_>, hyper: &HyperLatent, c: usize) -> Result<CodingSchedule> {
    let s = hyper.features.shape();
    if s.c != c {
        return Err(Error::invalid(format!(
            "hyper features carry {} channels, expected {c}",
            s.c
        )));
    }
    let n = cfg.basis.dim();
    if !c.is_multiple_of(n) {
        return Err(Error::invalid(format!(
            "{c} channels not divisible by lattice dimension {n}"
        )));
    }
    if !(cfg.a > 0.0) || !cfg.a.is_finite() {
        return Err(Error::invalid(format!(
            "density scalar must be positive, got {}",
            cfg.a
        )));
    }
    if cfg.valid_h > s.h || cfg.valid_w > s.w || cfg.valid_h == 0 || cfg.valid_w == 0 {
        return Err(Error::invalid("valid latent region outside the padded grid"));
    }
    build_schedule(s.h, s.w)
}

/// Runs the schedule; `code` receives the lattice coordinates of a group
/// (rounded values on encode) with their pmfs and returns the coded ones.
fn run_latent<F>(
    y: Option<&Tensor>,
    hyper: &HyperLatent,
    conditioned: &Tensor,
    cfg: &LatentConfig<'_>,
    w: &HpcmWeights,
    mut code: F,
) -> Result<Tensor>
where
    F: FnMut(usize, &mut [i64], &[Arc<PmfTable>]) -> Result<()>,
{
    let c = w.latent_channels();
    let schedule = check_config(cfg, hyper, c)?;
    let n = cfg.basis.dim();
    let s = hyper.features.shape();
    let mut context = Tensor::zeros(Shape::new(1, c, s.h, s.w));
    let inv_a = 1.0 / cfg.a;
    for step in 0..STEP_COUNT {
        let params = predict_params(step, &schedule, &context, conditioned, w, cfg.beta)?;
        for (pi, &(r, col)) in params.positions.iter().enumerate() {
            if r >= cfg.valid_h || col >= cfg.valid_w {
                continue;
            }
            for g in 0..c / n {
                let base = pi * c + g * n;
                let mu = &params.mu[base..base + n];
                let mut coords = match y {
                    Some(y) => {
                        let scaled: Vec<f64> = (0..n)
                            .map(|k| {
                                let ch = g * n + k;
                                y.at(0, ch, r, col) as f64 * hyper.w_e.at(0, ch, r, col) as f64 * cfg.a
                            })
                            .collect();
                        babai_round(&lattice_transform(&scaled, mu, cfg.basis)?)
                            .into_iter()
                            .map(|v| v.clamp(SYMBOL_MIN as i64, SYMBOL_MAX as i64))
                            .collect()
                    }
                    None => vec![0i64; n],
                };
                let pmfs: Vec<Arc<PmfTable>> = params.coef[base..base + n].iter().map(cached_pmf).collect();
                code(step, &mut coords, &pmfs)?;
                let rec = lattice_reconstruct(&coords, mu, cfg.basis)?;
                for (k, v) in rec.into_iter().enumerate() {
                    let ch = g * n + k;
                    let value = v * inv_a * hyper.w_d.at(0, ch, r, col) as f64;
                    context.set(0, ch, r, col, value as f32);
                }
            }
        }
    }
    context.crop(cfg.valid_h, cfg.valid_w)
}

/// Codes `y` (valid size, unpadded) in schedule order into one range-coded
/// payload. `conditioned` is the entropy-model feature on the padded grid.
pub fn encode_latent(
    y: &Tensor,
    hyper: &HyperLatent,
    conditioned: &Tensor,
    cfg: &LatentConfig<'_>,
    w: &HpcmWeights,
) -> Result<LatentCode> {
    let ys = y.shape();
    if ys.h != cfg.valid_h || ys.w != cfg.valid_w || ys.c != w.latent_channels() || ys.n != 1 {
        return Err(Error::invalid(format!(
            "latent shape {ys:?} does not match the configuration"
        )));
    }
    let mut enc = RangeEncoder::new();
    let mut symbols = Vec::new();
    let mut ideal_bits = 0.0;
    let y_hat = run_latent(Some(y), hyper, conditioned, cfg, w, |_, coords, pmfs| {
        for (&u, pmf) in coords.iter().zip(pmfs) {
            let sym = u as i32;
            ideal_bits += pmf.bits(sym);
            enc.encode(sym, pmf)?;
            symbols.push(sym);
        }
        Ok(())
    })?;
    Ok(LatentCode {
        payload: enc.finish(),
        y_hat,
        symbols,
        ideal_bits,
    })
}

pub fn decode_latent(
    payload: &[u8],
    hyper: &HyperLatent,
    conditioned: &Tensor,
    cfg: &LatentConfig<'_>,
    w: &HpcmWeights,
) -> Result<Tensor> {
    let mut dec = RangeDecoder::new(payload).map_err(|e| e.at_step(0))?;
    let y_hat = run_latent(None, hyper, conditioned, cfg, w, |step, coords, pmfs| {
        for (u, pmf) in coords.iter_mut().zip(pmfs) {
            *u = dec.decode(pmf).map_err(|e| e.at_step(step))? as i64;
        }
        Ok(())
    })?;
    dec.finish()?;
    Ok(y_hat)
}
