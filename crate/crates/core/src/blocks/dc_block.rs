use crate::error::{Error, Result};
use crate::tensor::{channel_shuffle, depthwise_conv, linear_mix, spatial_shift, wsilu, Shape, Tensor};
use crate::weights::{Init, Loader};

/// Parameters of one enhanced depthwise-convolution block.
#[derive(Clone, Debug, PartialEq)]
pub struct DcBlockWeights {
    /// `(c, 1, 3, 3)` per-channel spatial filter.
    pub dw_kernel: Tensor,
    /// `(c * ratio, c, 1, 1)`
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    /// `(c, c * ratio, 1, 1)`
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub shuffle_groups: usize,
}

impl DcBlockWeights {
    pub fn channels(&self) -> usize {
        self.dw_kernel.shape().n
    }

    /// All-zero block; acts as the identity.
    pub fn zeros(channels: usize, ratio: usize, shuffle_groups: usize) -> Self {
        let hidden = channels * ratio;
        Self {
            dw_kernel: Tensor::zeros(Shape::new(channels, 1, 3, 3)),
            mlp_w1: Tensor::zeros(Shape::new(hidden, channels, 1, 1)),
            mlp_b1: Tensor::zeros(Shape::new(1, hidden, 1, 1)),
            mlp_w2: Tensor::zeros(Shape::new(channels, hidden, 1, 1)),
            mlp_b2: Tensor::zeros(Shape::new(1, channels, 1, 1)),
            shuffle_groups,
        }
    }

    pub fn load(
        loader: &mut Loader<'_>,
        prefix: &str,
        channels: usize,
        ratio: usize,
        shuffle_groups: usize,
    ) -> Result<Self> {
        if !channels.is_multiple_of(8) || !channels.is_multiple_of(shuffle_groups) {
            return Err(Error::weight(
                prefix,
                format!("{channels} channels incompatible with shift/shuffle({shuffle_groups})"),
            ));
        }
        let hidden = channels * ratio;
        let w1_std = 1.0 / (channels as f32).sqrt();
        let w2_std = 0.5 / (hidden as f32).sqrt();
        Ok(Self {
            dw_kernel: loader.take(
                &format!("{prefix}.dw"),
                Shape::new(channels, 1, 3, 3),
                Init::Normal(0.1),
            )?,
            mlp_w1: loader.linear(&format!("{prefix}.w1"), hidden, channels, Init::Normal(w1_std))?,
            mlp_b1: loader.vector(&format!("{prefix}.b1"), hidden, Init::Normal(0.02))?,
            mlp_w2: loader.linear(&format!("{prefix}.w2"), channels, hidden, Init::Normal(w2_std))?,
            mlp_b2: loader.vector(&format!("{prefix}.b2"), channels, Init::Zeros)?,
            shuffle_groups,
        })
    }
}

/// Enhanced DC block:
///
/// ```text
/// x1  = t + dwconv(shift(t))
/// out = x1 + W2 * wsilu(W1 * shuffle(x1) + b1) + b2
/// ```
pub fn dc_block(t: &Tensor, w: &DcBlockWeights) -> Result<Tensor> {
    let spatial = depthwise_conv(&spatial_shift(t)?, &w.dw_kernel, 1, 1)?;
    let x1 = t.add(&spatial)?;
    let shuffled = channel_shuffle(&x1, w.shuffle_groups)?;
    let hidden = wsilu(&linear_mix(&shuffled, &w.mlp_w1, &w.mlp_b1)?);
    let mixed = linear_mix(&hidden, &w.mlp_w2, &w.mlp_b2)?;
    x1.add(&mixed)
}

/// Applies blocks in order.
pub fn dc_stack(t: &Tensor, blocks: &[DcBlockWeights]) -> Result<Tensor> {
    let mut x = t.clone();
    for block in blocks {
        x = dc_block(&x, block)?;
    }
    Ok(x)
}

/// Pointwise projection `(c_out, c_in)` with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Projection {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            weight: Tensor::zeros(Shape::new(c_out, c_in, 1, 1)),
            bias: Tensor::zeros(Shape::new(1, c_out, 1, 1)),
        }
    }

    pub fn load(
        loader: &mut Loader<'_>,
        prefix: &str,
        c_out: usize,
        c_in: usize,
        gain: f32,
        bias: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: loader.linear(
                &format!("{prefix}.w"),
                c_out,
                c_in,
                Init::Normal(gain / (c_in as f32).sqrt()),
            )?,
            bias: loader.vector(&format!("{prefix}.b"), c_out, bias)?,
        })
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        linear_mix(t, &self.weight, &self.bias)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(Shape::new(1, c, h, w), |_, c, i, j| {
            ((c * 7 + i * 3 + j) % 11) as f32 * 0.1 - 0.4
        })
    }

    #[test]
    fn zero_weights_is_identity() {
        let x = ramp(16, 5, 4);
        let w = DcBlockWeights::zeros(16, 2, 4);
        assert!(dc_block(&x, &w).unwrap().bit_eq(&x));
    }

    #[test]
    fn identity_kernel_and_mlp_matches_composition() {
        let c = 8;
        let mut w = DcBlockWeights::zeros(c, 1, 1);
        for ch in 0..c {
            w.dw_kernel.set(ch, 0, 1, 1, 1.0);
            w.mlp_w1.set(ch, ch, 0, 0, 1.0);
            w.mlp_w2.set(ch, ch, 0, 0, 1.0);
        }
        // first half zero: the shift contributes nothing, second half passes
        let x = Tensor::from_fn(Shape::new(1, c, 4, 4), |_, ch, i, j| {
            if ch < c / 2 {
                0.0
            } else {
                (i * 4 + j) as f32 * 0.1 - 0.5
            }
        });
        let y = dc_block(&x, &w).unwrap();
        for ch in 0..c {
            for i in 0..4 {
                for j in 0..4 {
                    let v = x.at(0, ch, i, j);
                    let x1 = v + v;
                    let expected = x1 + x1 * crate::tensor::sigmoid(4.0 * x1);
                    assert!((y.at(0, ch, i, j) - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let x = ramp(16, 6, 6);
        let mut w = DcBlockWeights::zeros(16, 2, 4);
        w.dw_kernel = Tensor::from_fn(w.dw_kernel.shape(), |n, _, i, j| ((n + i * 3 + j) % 5) as f32 * 0.05);
        w.mlp_w1 = Tensor::from_fn(w.mlp_w1.shape(), |n, c, _, _| ((n * 3 + c) % 7) as f32 * 0.01 - 0.03);
        w.mlp_w2 = Tensor::from_fn(w.mlp_w2.shape(), |n, c, _, _| ((n + c * 5) % 9) as f32 * 0.01 - 0.04);
        let a = dc_block(&x, &w).unwrap();
        let b = dc_block(&x, &w).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&x));
    }

    #[test]
    fn rejects_bad_channel_counts() {
        let x = ramp(12, 3, 3);
        let w = DcBlockWeights::zeros(12, 2, 4);
        assert!(dc_block(&x, &w).is_err());
    }
}
