//! Hybrid cross-attention: a deformable neighbourhood branch for local
//! correspondence and a polarity-aware linear branch for global context.

use crate::error::{Error, Result};
use crate::tensor::{depthwise_conv, linear_mix, BilinearTap, Shape, Tensor};
use crate::weights::{Init, Loader};

/// Added to both linear-attention denominators.
pub const DENOMINATOR_FLOOR: f32 = 1e-6;
pub const GAMMA_MIN: f32 = 0.25;
pub const GAMMA_MAX: f32 = 4.0;
pub const DEFAULT_HEADS: usize = 2;
pub const DEFAULT_NEIGHBORHOOD: usize = 5;

/// Offset predictor for one head: depthwise 3x3 over `[q, k]` followed by a
/// linear layer emitting `2 * k * k` values (row offset, column offset per tap).
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetNet {
    /// `(2 * head_dim, 1, 3, 3)`
    pub dw_kernel: Tensor,
    /// `(2 * k * k, 2 * head_dim, 1, 1)`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub offset_nets: Vec<OffsetNet>,
    pub wqg: Tensor,
    pub wkg: Tensor,
    pub wvg: Tensor,
    pub wg: Tensor,
    /// Per query/key channel exponent of the power feature map, in
    /// `[GAMMA_MIN, GAMMA_MAX]`.
    pub gamma: Vec<f32>,
    pub heads: usize,
    pub k: usize,
}

fn zero_bias(c: usize) -> Tensor {
    Tensor::zeros(Shape::new(1, c, 1, 1))
}

impl AttentionWeights {
    pub fn channels(&self) -> usize {
        self.wq.shape().n
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    /// All projections zero, offsets zero, `gamma = 1`.
    pub fn zeros(channels: usize, heads: usize, k: usize) -> Self {
        let sq = Shape::new(channels, channels, 1, 1);
        let d = channels / heads;
        Self {
            wq: Tensor::zeros(sq),
            wk: Tensor::zeros(sq),
            wv: Tensor::zeros(sq),
            offset_nets: (0..heads)
                .map(|_| OffsetNet {
                    dw_kernel: Tensor::zeros(Shape::new(2 * d, 1, 3, 3)),
                    weight: Tensor::zeros(Shape::new(2 * k * k, 2 * d, 1, 1)),
                    bias: zero_bias(2 * k * k),
                })
                .collect(),
            wqg: Tensor::zeros(sq),
            wkg: Tensor::zeros(sq),
            wvg: Tensor::zeros(sq),
            wg: Tensor::zeros(sq),
            gamma: vec![1.0; channels],
            heads,
            k,
        }
    }

    /// Checks shapes and clamps `gamma` into its admissible range.
    pub fn validate(mut self, name: &str) -> Result<Self> {
        let c = self.channels();
        if self.heads == 0 || !c.is_multiple_of(self.heads) || !c.is_multiple_of(2 * self.heads) {
            return Err(Error::weight(
                name,
                format!("{c} channels do not split into {} heads", self.heads),
            ));
        }
        if self.k.is_multiple_of(2) {
            return Err(Error::weight(name, "neighbourhood size must be odd"));
        }
        let sq = Shape::new(c, c, 1, 1);
        for (label, t) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wqg", &self.wqg),
            ("wkg", &self.wkg),
            ("wvg", &self.wvg),
            ("wg", &self.wg),
        ] {
            if t.shape() != sq {
                return Err(Error::weight(
                    format!("{name}.{label}"),
                    format!("expected {sq}, got {}", t.shape()),
                ));
            }
        }
        if self.offset_nets.len() != self.heads {
            return Err(Error::weight(
                format!("{name}.offset"),
                "one offset net per head required",
            ));
        }
        let d = self.head_dim();
        for (h, net) in self.offset_nets.iter().enumerate() {
            if net.dw_kernel.shape() != Shape::new(2 * d, 1, 3, 3)
                || net.weight.shape() != Shape::new(2 * self.k * self.k, 2 * d, 1, 1)
                || net.bias.len() != 2 * self.k * self.k
            {
                return Err(Error::weight(format!("{name}.offset{h}"), "offset net shape mismatch"));
            }
        }
        if self.gamma.len() != c {
            return Err(Error::weight(
                format!("{name}.gamma"),
                "gamma length must equal channels",
            ));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::weight(
                format!("{name}.gamma"),
                format!("gamma must be positive, found {g}"),
            ));
        }
        for g in &mut self.gamma {
            *g = g.clamp(GAMMA_MIN, GAMMA_MAX);
        }
        Ok(self)
    }

    pub fn load(loader: &mut Loader<'_>, prefix: &str, channels: usize, heads: usize, k: usize) -> Result<Self> {
        let d = channels / heads;
        let proj_std = 1.0 / (channels as f32).sqrt();
        let mut sq =
            |label: &str, std: f32| loader.linear(&format!("{prefix}.{label}"), channels, channels, Init::Normal(std));
        let wq = sq("wq", proj_std)?;
        let wk = sq("wk", proj_std)?;
        let wv = sq("wv", proj_std)?;
        let wqg = sq("wqg", proj_std)?;
        let wkg = sq("wkg", proj_std)?;
        let wvg = sq("wvg", proj_std)?;
        let wg = sq("wg", 0.5 * proj_std)?;
        let mut offset_nets = Vec::with_capacity(heads);
        for h in 0..heads {
            offset_nets.push(OffsetNet {
                dw_kernel: loader.take(
                    &format!("{prefix}.offset{h}.dw"),
                    Shape::new(2 * d, 1, 3, 3),
                    Init::Normal(0.1),
                )?,
                weight: loader.linear(
                    &format!("{prefix}.offset{h}.w"),
                    2 * k * k,
                    2 * d,
                    Init::Normal(0.3 / (2.0 * d as f32).sqrt()),
                )?,
                bias: loader.vector(&format!("{prefix}.offset{h}.b"), 2 * k * k, Init::Zeros)?,
            });
        }
        let gamma = loader
            .vector(&format!("{prefix}.gamma"), channels, Init::Uniform(0.75, 1.5))?
            .into_data();
        Self {
            wq,
            wk,
            wv,
            offset_nets,
            wqg,
            wkg,
            wvg,
            wg,
            gamma,
            heads,
            k,
        }
        .validate(prefix)
    }
}

fn check_pair(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<()> {
    if f_cur.shape() != f_ref.shape() {
        return Err(Error::invalid(format!(
            "attention inputs differ: {} vs {}",
            f_cur.shape(),
            f_ref.shape()
        )));
    }
    if f_cur.shape().c != w.channels() {
        return Err(Error::invalid(format!(
            "attention expects {} channels, got {}",
            w.channels(),
            f_cur.shape().c
        )));
    }
    Ok(())
}

/// Softmax weights of the deformable branch, indexed
/// `[((n * heads + head) * h + i) * w + j][m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DnCaTrace {
    pub taps: usize,
    pub weights: Vec<f32>,
}

/// Deformable neighbourhood cross-attention.
pub fn dn_ca(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    dn_ca_inner(f_cur, f_ref, w, None)
}

/// [`dn_ca`] that also returns the per-location attention weights.
pub fn dn_ca_traced(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<(Tensor, DnCaTrace)> {
    let mut trace = DnCaTrace {
        taps: w.k * w.k,
        weights: Vec::new(),
    };
    let out = dn_ca_inner(f_cur, f_ref, w, Some(&mut trace))?;
    Ok((out, trace))
}

fn dn_ca_inner(
    f_cur: &Tensor,
    f_ref: &Tensor,
    w: &AttentionWeights,
    mut trace: Option<&mut DnCaTrace>,
) -> Result<Tensor> {
    check_pair(f_cur, f_ref, w)?;
    let s = f_cur.shape();
    let c = s.c;
    let d = w.head_dim();
    let taps = w.k * w.k;
    let half = (w.k / 2) as isize;
    let zero = zero_bias(c);
    let q = linear_mix(f_cur, &w.wq, &zero)?;
    let key = linear_mix(f_ref, &w.wk, &zero)?;
    let val = linear_mix(f_ref, &w.wv, &zero)?;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = Tensor::zeros(s);
    let plane = s.plane();

    let mut logits = vec![0.0f32; taps];
    let mut sampled_v = vec![0.0f32; taps * d];
    let mut key_t = vec![0.0f32; plane * d];
    let mut val_t = vec![0.0f32; plane * d];
    let mut q_pos = vec![0.0f32; d];
    let mut k_buf = vec![0.0f32; d];
    for n in 0..s.n {
        for head in 0..w.heads {
            let c0 = head * d;
            // offsets from the colocated [q, k] pair
            let qk = Tensor::concat_channels(&[&q.slice_channels(c0, d)?, &key.slice_channels(c0, d)?])?;
            let qk = batch_item(&qk, n);
            let net = &w.offset_nets[head];
            let offsets = linear_mix(&depthwise_conv(&qk, &net.dw_kernel, 1, 1)?, &net.weight, &net.bias)?;
            // position-major copies so one tap reads d contiguous channels
            for ch in 0..d {
                let (kp, vp) = (key.plane(n, c0 + ch), val.plane(n, c0 + ch));
                for pos in 0..plane {
                    key_t[pos * d + ch] = kp[pos];
                    val_t[pos * d + ch] = vp[pos];
                }
            }
            for i in 0..s.h {
                for j in 0..s.w {
                    let pos = i * s.w + j;
                    for (ch, qv) in q_pos.iter_mut().enumerate() {
                        *qv = q.plane(n, c0 + ch)[pos];
                    }
                    for m in 0..taps {
                        let dy = (m / w.k) as isize - half;
                        let dx = (m % w.k) as isize - half;
                        let row = i as f32 + dy as f32 + offsets.data()[(2 * m) * plane + pos];
                        let col = j as f32 + dx as f32 + offsets.data()[(2 * m + 1) * plane + pos];
                        let tap = BilinearTap::new(s.h, s.w, row, col);
                        tap.gather_into(&key_t, d, &mut k_buf);
                        let k_at = &k_buf;
                        let v_at = &mut sampled_v[m * d..(m + 1) * d];
                        tap.gather_into(&val_t, d, v_at);
                        let mut dot = 0.0f32;
                        for (&qv, &kv) in q_pos.iter().zip(k_at.iter()) {
                            dot += qv * kv;
                        }
                        logits[m] = dot * scale;
                    }
                    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                    let mut total = 0.0f32;
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        total += *l;
                    }
                    for l in logits.iter_mut() {
                        *l /= total;
                    }
                    for ch in 0..d {
                        let mut acc = 0.0f32;
                        for m in 0..taps {
                            acc += logits[m] * sampled_v[m * d + ch];
                        }
                        out.plane_mut(n, c0 + ch)[pos] = acc;
                    }
                    if let Some(t) = trace.as_deref_mut() {
                        t.weights.extend_from_slice(&logits);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn batch_item(t: &Tensor, n: usize) -> Tensor {
    let s = t.shape();
    let per = s.c * s.plane();
    Tensor::from_raw(Shape::new(1, s.c, s.h, s.w), t.data()[n * per..(n + 1) * per].to_vec())
}

#[inline]
fn power(x: f32, gamma: f32) -> f32 {
    if x <= 0.0 {
        0.0
    } else if gamma == 1.0 {
        x
    } else {
        x.powf(gamma)
    }
}

/// Polarity-aware linear cross-attention.
///
/// Per head, `phi_q = [q+, q-]^gamma` is matched against `[k+, k-]^gamma`
/// (same-sign path, values `V^s`) and `[k-, k+]^gamma` (opposite-sign path,
/// values `V^o`). Keys are aggregated once into `phi_k^T V` and `phi_k^T 1`,
/// then every query reads them, which is linear in the number of positions.
pub fn pal_ca(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    check_pair(f_cur, f_ref, w)?;
    let s = f_cur.shape();
    let c = s.c;
    if !c.is_multiple_of(2) || !(c / 2).is_multiple_of(w.heads) {
        return Err(Error::invalid(format!(
            "value channels {c} cannot split into halves per head"
        )));
    }
    let d = w.head_dim();
    let dv = c / 2 / w.heads;
    let zero = zero_bias(c);
    let qg = linear_mix(f_cur, &w.wqg, &zero)?;
    let kg = linear_mix(f_ref, &w.wkg, &zero)?;
    let vg = linear_mix(f_ref, &w.wvg, &zero)?;
    let gate = linear_mix(f_cur, &w.wg, &zero)?;
    let plane = s.plane();
    let mut out = Tensor::zeros(s);

    let mut phi_q = vec![0.0f32; 2 * d];
    let mut phi_k = vec![0.0f32; 2 * d];
    let mut v_pos = vec![0.0f32; dv];
    let mut num = vec![0.0f32; dv];
    for n in 0..s.n {
        for head in 0..w.heads {
            let c0 = head * d;
            // [same, opposite] x [2d features] x [dv values]
            let mut kv = [vec![0.0f32; 2 * d * dv], vec![0.0f32; 2 * d * dv]];
            let mut ksum = [vec![0.0f32; 2 * d], vec![0.0f32; 2 * d]];
            for pos in 0..plane {
                for ch in 0..d {
                    let x = kg.plane(n, c0 + ch)[pos];
                    let g = w.gamma[c0 + ch];
                    phi_k[ch] = power(x, g);
                    phi_k[d + ch] = power(-x, g);
                }
                for (path, v_base) in [(0usize, 0usize), (1, c / 2)] {
                    for (e, v) in v_pos.iter_mut().enumerate() {
                        *v = vg.plane(n, v_base + head * dv + e)[pos];
                    }
                    for f in 0..2 * d {
                        // opposite path swaps the polarity halves of the key
                        let kf = if path == 0 { phi_k[f] } else { phi_k[(f + d) % (2 * d)] };
                        if kf == 0.0 {
                            continue;
                        }
                        ksum[path][f] += kf;
                        for (acc, &v) in kv[path][f * dv..(f + 1) * dv].iter_mut().zip(&v_pos) {
                            *acc += kf * v;
                        }
                    }
                }
            }
            for pos in 0..plane {
                for ch in 0..d {
                    let x = qg.plane(n, c0 + ch)[pos];
                    let g = w.gamma[c0 + ch];
                    phi_q[ch] = power(x, g);
                    phi_q[d + ch] = power(-x, g);
                }
                for (path, base) in [(0usize, 0usize), (1, c / 2)] {
                    let mut den = 0.0f32;
                    for f in 0..2 * d {
                        den += phi_q[f] * ksum[path][f];
                    }
                    den += DENOMINATOR_FLOOR;
                    num.fill(0.0);
                    for f in 0..2 * d {
                        let qf = phi_q[f];
                        if qf == 0.0 {
                            continue;
                        }
                        for (acc, &k) in num.iter_mut().zip(&kv[path][f * dv..(f + 1) * dv]) {
                            *acc += qf * k;
                        }
                    }
                    for (e, &nv) in num.iter().enumerate() {
                        let ch = base + head * dv + e;
                        let g = gate.plane(n, ch)[pos];
                        out.plane_mut(n, ch)[pos] = g * (nv / den);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `f_cur + dn_ca(f_cur, f_ref) + pal_ca(f_cur, f_ref)`.
pub fn cross_attn(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let local = dn_ca(f_cur, f_ref, w)?;
    let global = pal_ca(f_cur, f_ref, w)?;
    f_cur.add(&local.add(&global)?)
}
