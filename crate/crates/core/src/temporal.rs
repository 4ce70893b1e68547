//! Reference buffers, gated recurrent update and the reliability gate.

use crate::blocks::{dc_block, dc_stack, DcBlockWeights, Projection};
use crate::error::{Error, Result};
use crate::tensor::{apply_rate_vector, ensure_same_shape, pixel_unshuffle, reduce_mean_spatial, sigmoid, Tensor};
use crate::weights::{Init, Loader};

/// Largest value of a 16-bit gate code.
pub const ALPHA_MAX_CODE: u16 = u16::MAX;

/// Pixel-unshuffle factor bringing the frame onto the trunk grid.
pub const CLASSIFIER_PATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalWeights {
    pub hybrid_block: DcBlockWeights,
    pub hybrid_proj: Projection,
    pub forget_block: DcBlockWeights,
    pub forget_proj: Projection,
    pub input_block: DcBlockWeights,
    pub input_proj: Projection,
    pub derive_blocks: Vec<DcBlockWeights>,
    pub merge_block: DcBlockWeights,
    pub merge_proj: Projection,
    pub cls_in: Projection,
    pub cls_blocks: Vec<DcBlockWeights>,
    pub cls_out: Projection,
}

impl TemporalWeights {
    pub fn channels(&self) -> usize {
        self.hybrid_proj.out_channels()
    }

    pub fn zeros(c: usize, ratio: usize, groups: usize) -> Self {
        let wide = || DcBlockWeights::zeros(2 * c, ratio, groups);
        Self {
            hybrid_block: wide(),
            hybrid_proj: Projection::zeros(c, 2 * c),
            forget_block: wide(),
            forget_proj: Projection::zeros(c, 2 * c),
            input_block: wide(),
            input_proj: Projection::zeros(c, 2 * c),
            derive_blocks: vec![DcBlockWeights::zeros(c, ratio, groups); 2],
            merge_block: wide(),
            merge_proj: Projection::zeros(c, 2 * c),
            cls_in: Projection::zeros(c, 3 * CLASSIFIER_PATCH * CLASSIFIER_PATCH),
            cls_blocks: vec![wide(); 2],
            cls_out: Projection::zeros(1, 2 * c),
        }
    }

    pub fn load(loader: &mut Loader<'_>, prefix: &str, c: usize, ratio: usize, groups: usize) -> Result<Self> {
        let block = |loader: &mut Loader<'_>, name: &str, ch: usize| {
            DcBlockWeights::load(loader, &format!("{prefix}.{name}"), ch, ratio, groups)
        };
        let hybrid_block = block(loader, "hybrid", 2 * c)?;
        let forget_block = block(loader, "forget", 2 * c)?;
        let input_block = block(loader, "input", 2 * c)?;
        let derive_blocks = vec![block(loader, "derive0", c)?, block(loader, "derive1", c)?];
        let merge_block = block(loader, "merge", 2 * c)?;
        let cls_blocks = vec![block(loader, "cls0", 2 * c)?, block(loader, "cls1", 2 * c)?];
        let patch = 3 * CLASSIFIER_PATCH * CLASSIFIER_PATCH;
        Ok(Self {
            hybrid_block,
            hybrid_proj: Projection::load(loader, &format!("{prefix}.hybrid_proj"), c, 2 * c, 1.0, Init::Zeros)?,
            forget_block,
            forget_proj: Projection::load(
                loader,
                &format!("{prefix}.forget_proj"),
                c,
                2 * c,
                0.5,
                Init::Const(1.0),
            )?,
            input_block,
            input_proj: Projection::load(loader, &format!("{prefix}.input_proj"), c, 2 * c, 0.5, Init::Zeros)?,
            derive_blocks,
            merge_block,
            merge_proj: Projection::load(loader, &format!("{prefix}.merge_proj"), c, 2 * c, 1.0, Init::Zeros)?,
            cls_in: Projection::load(loader, &format!("{prefix}.cls_in"), c, patch, 1.0, Init::Zeros)?,
            cls_blocks,
            cls_out: Projection::load(loader, &format!("{prefix}.cls_out"), 1, 2 * c, 0.5, Init::Normal(0.5))?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferMode {
    Uni,
    Bi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Uni,
    Bi,
    IntraPrior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalFeature {
    pub f: Tensor,
    pub source: FeatureSource,
}

/// Feature buffer of one coding session.
///
/// Uni mode holds the recurrent state. Bi mode holds a backward and a forward
/// reference state that are replaced wholesale and never updated.
#[derive(Clone, Debug)]
pub struct BufferState {
    mode: BufferMode,
    state: Option<Tensor>,
    bwd: Option<Tensor>,
    fwd: Option<Tensor>,
    updates: u64,
}

impl BufferState {
    pub fn uni(initial: Tensor) -> Self {
        Self {
            mode: BufferMode::Uni,
            state: Some(initial),
            bwd: None,
            fwd: None,
            updates: 0,
        }
    }

    pub fn bi() -> Self {
        Self {
            mode: BufferMode::Bi,
            state: None,
            bwd: None,
            fwd: None,
            updates: 0,
        }
    }

    pub fn mode(&self) -> BufferMode {
        self.mode
    }

    /// Number of recurrent updates applied so far.
    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn state(&self) -> Option<&Tensor> {
        self.state.as_ref()
    }

    pub fn references(&self) -> Option<(&Tensor, &Tensor)> {
        Some((self.bwd.as_ref()?, self.fwd.as_ref()?))
    }

    /// Replaces the uni state, e.g. at an intra refresh.
    pub fn reset(&mut self, initial: Tensor) -> Result<()> {
        if self.mode != BufferMode::Uni {
            return Err(Error::InvalidState("bi buffer has no recurrent state".into()));
        }
        self.state = Some(initial);
        Ok(())
    }

    pub fn update(&mut self, f_tilde: &Tensor, w: &TemporalWeights) -> Result<()> {
        if self.mode != BufferMode::Uni {
            return Err(Error::InvalidState("bi buffer skips the recurrent update".into()));
        }
        let prev = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidState("uni buffer not initialized".into()))?;
        let next = recurrent_update(prev, f_tilde, w)?;
        self.state = Some(next);
        self.updates += 1;
        Ok(())
    }

    pub fn set_references(&mut self, bwd: Tensor, fwd: Tensor) -> Result<()> {
        if self.mode != BufferMode::Bi {
            return Err(Error::InvalidState("uni buffer has no reference pair".into()));
        }
        ensure_same_shape(&bwd, &fwd)?;
        self.bwd = Some(bwd);
        self.fwd = Some(fwd);
        Ok(())
    }
}

fn concat_block(a: &Tensor, b: &Tensor, block: &DcBlockWeights, proj: &Projection) -> Result<Tensor> {
    ensure_same_shape(a, b)?;
    proj.apply(&dc_block(&Tensor::concat_channels(&[a, b])?, block)?)
}

/// `[f_d, f_r]` through one DC block, projected back to the trunk channels.
pub fn extract_hybrid(f_d: &Tensor, f_r: &Tensor, w: &TemporalWeights) -> Result<Tensor> {
    concat_block(f_d, f_r, &w.hybrid_block, &w.hybrid_proj)
}

/// Forget and input gates from `[prev, f_tilde]`, each a DC block followed by
/// a sigmoid.
pub fn update_gates(prev: &Tensor, f_tilde: &Tensor, w: &TemporalWeights) -> Result<(Tensor, Tensor)> {
    let g_f = concat_block(prev, f_tilde, &w.forget_block, &w.forget_proj)?.map(sigmoid);
    let g_i = concat_block(prev, f_tilde, &w.input_block, &w.input_proj)?.map(sigmoid);
    Ok((g_f, g_i))
}

/// `g_F * prev + g_I * f_tilde`.
pub fn recurrent_update(prev: &Tensor, f_tilde: &Tensor, w: &TemporalWeights) -> Result<Tensor> {
    let (g_f, g_i) = update_gates(prev, f_tilde, w)?;
    g_f.mul(prev)?.add(&g_i.mul(f_tilde)?)
}

/// Rate-vector scaling followed by two DC blocks.
pub fn derive_temporal_feature(state: &Tensor, q_f: &[f32], w: &TemporalWeights) -> Result<TemporalFeature> {
    let scaled = apply_rate_vector(state, q_f)?;
    Ok(TemporalFeature {
        f: dc_stack(&scaled, &w.derive_blocks)?,
        source: FeatureSource::Uni,
    })
}

pub fn merge_bidirectional(
    bwd: &TemporalFeature,
    fwd: &TemporalFeature,
    w: &TemporalWeights,
) -> Result<TemporalFeature> {
    Ok(TemporalFeature {
        f: concat_block(&bwd.f, &fwd.f, &w.merge_block, &w.merge_proj)?,
        source: FeatureSource::Bi,
    })
}

/// Pre-sigmoid classifier output.
pub fn reliability_logit(x_t: &Tensor, f_star: &TemporalFeature, w: &TemporalWeights) -> Result<f32> {
    let x = w.cls_in.apply(&pixel_unshuffle(x_t, CLASSIFIER_PATCH)?)?;
    let h = dc_stack(&Tensor::concat_channels(&[&x, &f_star.f])?, &w.cls_blocks)?;
    let pooled = reduce_mean_spatial(&w.cls_out.apply(&h)?)?;
    Ok(pooled.data()[0])
}

/// `sigmoid(GAP(Cls([x_t, f*])))`.
pub fn classify_reliability(x_t: &Tensor, f_star: &TemporalFeature, w: &TemporalWeights) -> Result<f64> {
    Ok(sigmoid(reliability_logit(x_t, f_star, w)?) as f64)
}

pub fn quantize_alpha(alpha: f64) -> u16 {
    let a = if alpha.is_nan() { 0.0 } else { alpha.clamp(0.0, 1.0) };
    (a * ALPHA_MAX_CODE as f64).round() as u16
}

pub fn dequantize_alpha(code: u16) -> f64 {
    code as f64 / ALPHA_MAX_CODE as f64
}

/// `alpha * f* + broadcast(f_p)`. A zero gate yields exactly the intra prior.
pub fn gate_feature(f_star: &TemporalFeature, alpha: f64, f_p: &[f32]) -> Result<TemporalFeature> {
    let s = f_star.f.shape();
    if f_p.len() != s.c || s.n != 1 {
        return Err(Error::invalid(format!(
            "prior has {} channels, feature has shape {s:?}",
            f_p.len()
        )));
    }
    let prior = Tensor::broadcast_channels(f_p, s.h, s.w);
    if alpha == 0.0 {
        return Ok(TemporalFeature {
            f: prior,
            source: FeatureSource::IntraPrior,
        });
    }
    Ok(TemporalFeature {
        f: f_star.f.scale(alpha as f32).add(&prior)?,
        source: f_star.source,
    })
}

/// Feature used by intra frames: the broadcast prior alone.
pub fn intra_feature(f_p: &[f32], h: usize, w: usize) -> TemporalFeature {
    TemporalFeature {
        f: Tensor::broadcast_channels(f_p, h, w),
        source: FeatureSource::IntraPrior,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn field(c: usize, h: usize, w: usize, seed: usize) -> Tensor {
        Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, i, j| {
            ((ch * 13 + i * 7 + j * 3 + seed * 5) % 17) as f32 / 8.0 - 1.0
        })
    }

    #[test]
    fn alpha_quantizer() {
        assert_eq!(quantize_alpha(0.0), 0);
        assert_eq!(dequantize_alpha(0), 0.0);
        assert_eq!(quantize_alpha(1.0), 65535);
        assert_eq!(dequantize_alpha(65535), 1.0);
        for code in 0..=u16::MAX {
            assert_eq!(quantize_alpha(dequantize_alpha(code)), code);
        }
        for a in [0.1234, 0.5, 0.99999, 3e-6] {
            assert!((a - dequantize_alpha(quantize_alpha(a))).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn gate_saturation() {
        let c = 8;
        let mut w = TemporalWeights::zeros(c, 2, 4);
        w.forget_proj.bias = Tensor::full(w.forget_proj.bias.shape(), 20.0);
        w.input_proj.bias = Tensor::full(w.input_proj.bias.shape(), -20.0);
        let prev = field(c, 4, 4, 1);
        let ft = field(c, 4, 4, 2);
        let out = recurrent_update(&prev, &ft, &w).unwrap();
        for (a, b) in out.data().iter().zip(prev.data()) {
            assert!((a - b).abs() < 1e-3);
        }
        w.forget_proj.bias = Tensor::full(w.forget_proj.bias.shape(), -20.0);
        w.input_proj.bias = Tensor::full(w.input_proj.bias.shape(), 20.0);
        let out = recurrent_update(&prev, &ft, &w).unwrap();
        for (a, b) in out.data().iter().zip(ft.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_classifier_is_half() {
        let w = TemporalWeights::zeros(8, 2, 4);
        let x = Tensor::full(Shape::new(1, 3, 32, 32), 0.7);
        let f = TemporalFeature {
            f: field(8, 4, 4, 3),
            source: FeatureSource::Uni,
        };
        assert_eq!(classify_reliability(&x, &f, &w).unwrap(), 0.5);
    }

    #[test]
    fn gate_endpoints() {
        let f = TemporalFeature {
            f: field(8, 3, 3, 4),
            source: FeatureSource::Uni,
        };
        let fp = vec![0.25f32; 8];
        let g = gate_feature(&f, 0.0, &fp).unwrap();
        assert!(g.f.bit_eq(&Tensor::broadcast_channels(&fp, 3, 3)));
        assert_eq!(g.source, FeatureSource::IntraPrior);
        let g = gate_feature(&f, 1.0, &[0.0; 8]).unwrap();
        assert!(g.f.bit_eq(&f.f));
    }

    #[test]
    fn bi_buffer_refuses_update() {
        let w = TemporalWeights::zeros(8, 2, 4);
        let mut b = BufferState::bi();
        b.set_references(field(8, 4, 4, 1), field(8, 4, 4, 2)).unwrap();
        assert!(b.update(&field(8, 4, 4, 3), &w).is_err());
        assert_eq!(b.update_count(), 0);
        let mut u = BufferState::uni(field(8, 4, 4, 1));
        u.update(&field(8, 4, 4, 3), &w).unwrap();
        assert_eq!(u.update_count(), 1);
    }

    #[test]
    fn merge_keeps_unidirectional_width() {
        let w = TemporalWeights::zeros(8, 2, 4);
        let f = TemporalFeature {
            f: field(8, 4, 4, 5),
            source: FeatureSource::Uni,
        };
        let m = merge_bidirectional(&f, &f, &w).unwrap();
        assert_eq!(m.f.shape().c, 8);
        assert_eq!(m.source, FeatureSource::Bi);
    }
}
