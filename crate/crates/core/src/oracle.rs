//! Slow reference implementations used by the test suites and `selftest`.
//!
//! Everything here is written as direct nested loops in double precision and
//! shares no code with the fast paths it checks.

use std::ops::RangeInclusive;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::blocks::AttentionWeights;
use crate::error::{Error, Result};
use crate::lattice::LatticeBasis;
use crate::tensor::{Shape, Tensor};

/// Tensor of i.i.d. `N(0, std^2)` entries.
pub fn random_tensor<R: Rng>(rng: &mut R, shape: Shape, std: f32) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_raw(shape, data)
}

/// Random attention parameters; `offsets` false zeroes the offset nets.
pub fn random_attention<R: Rng>(
    rng: &mut R,
    channels: usize,
    heads: usize,
    k: usize,
    offsets: bool,
) -> AttentionWeights {
    let mut w = AttentionWeights::zeros(channels, heads, k);
    let std = 1.0 / (channels as f32).sqrt();
    for t in [
        &mut w.wq, &mut w.wk, &mut w.wv, &mut w.wqg, &mut w.wkg, &mut w.wvg, &mut w.wg,
    ] {
        *t = random_tensor(rng, t.shape(), std);
    }
    if offsets {
        for net in &mut w.offset_nets {
            net.dw_kernel = random_tensor(rng, net.dw_kernel.shape(), 0.2);
            net.weight = random_tensor(rng, net.weight.shape(), 0.3);
            net.bias = random_tensor(rng, net.bias.shape(), 0.3);
        }
    }
    for g in &mut w.gamma {
        *g = rng.random_range(0.5..2.0);
    }
    w
}

/// Random orthogonal `n x n` matrix, row-major, from the QR factor of a
/// Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_fn(n, n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let q = m.qr().q();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = q[(i, j)];
        }
    }
    out
}

/// Basis with mutually orthogonal columns of random lengths in `[0.5, 2)`.
pub fn random_orthogonal_basis<R: Rng>(rng: &mut R, n: usize) -> LatticeBasis {
    let u = random_orthogonal(rng, n);
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let eye: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    LatticeBasis::from_svd(&u, &sigma, &eye).expect("orthogonal factors with bounded condition")
}

/// Basis `U diag(sigma) V^T` with random orthogonal factors and condition
/// number at most `max_condition`.
pub fn random_skewed_basis<R: Rng>(rng: &mut R, n: usize, max_condition: f64) -> LatticeBasis {
    let u = random_orthogonal(rng, n);
    let v = random_orthogonal(rng, n);
    let sigma: Vec<f64> = (0..n).map(|_| max_condition.powf(rng.random_range(0.0..1.0))).collect();
    LatticeBasis::from_svd(&u, &sigma, &v).expect("orthogonal factors with bounded condition")
}

/// `max |a - b| / max |b|`.
pub fn relative_error(actual: &Tensor, expected: &Tensor) -> f64 {
    let scale = expected.data().iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let diff = actual
        .data()
        .iter()
        .zip(expected.data())
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `max |a - b|`.
pub fn max_abs_error(actual: &Tensor, expected: &Tensor) -> f64 {
    actual
        .data()
        .iter()
        .zip(expected.data())
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()))
}

/// `out[o] = sum_c w[o, c] * t[n, c, i, j]` at one location.
fn project(t: &Tensor, w: &Tensor, n: usize, i: usize, j: usize) -> Vec<f64> {
    let ws = w.shape();
    (0..ws.n)
        .map(|o| {
            (0..ws.c)
                .map(|c| w.at(o, c, 0, 0) as f64 * t.at(n, c, i, j) as f64)
                .sum()
        })
        .collect()
}

fn projected(t: &Tensor, w: &Tensor) -> Vec<Vec<f64>> {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.n * s.h * s.w);
    for n in 0..s.n {
        for i in 0..s.h {
            for j in 0..s.w {
                out.push(project(t, w, n, i, j));
            }
        }
    }
    out
}

fn same_shapes(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<()> {
    if f_cur.shape() != f_ref.shape() || f_cur.shape().c != w.channels() {
        return Err(Error::invalid("oracle inputs disagree in shape"));
    }
    Ok(())
}

/// Plain `k x k` neighbourhood cross-attention with border-clamped
/// neighbours, per head, scaled dot-product softmax, no offsets.
pub fn neighborhood_attention(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    same_shapes(f_cur, f_ref, w)?;
    let s = f_cur.shape();
    let d = w.head_dim();
    let q = projected(f_cur, &w.wq);
    let k = projected(f_ref, &w.wk);
    let v = projected(f_ref, &w.wv);
    let half = (w.k / 2) as isize;
    let at = |n: usize, i: usize, j: usize| (n * s.h + i) * s.w + j;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for head in 0..w.heads {
            for i in 0..s.h {
                for j in 0..s.w {
                    let mut logits = Vec::new();
                    let mut neighbours = Vec::new();
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let ii = (i as isize + dy).clamp(0, s.h as isize - 1) as usize;
                            let jj = (j as isize + dx).clamp(0, s.w as isize - 1) as usize;
                            let mut dot = 0.0;
                            for ch in 0..d {
                                dot += q[at(n, i, j)][head * d + ch] * k[at(n, ii, jj)][head * d + ch];
                            }
                            logits.push(dot / (d as f64).sqrt());
                            neighbours.push(at(n, ii, jj));
                        }
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    for ch in 0..d {
                        let val: f64 = exps
                            .iter()
                            .zip(&neighbours)
                            .map(|(e, &p)| e / total * v[p][head * d + ch])
                            .sum();
                        out.set(n, head * d + ch, i, j, val as f32);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Polarity-aware attention in its quadratic form: every query is matched
/// against every key explicitly, `O = (phi_Q phi_K^T V) / (phi_Q phi_K^T 1 + eps)`.
pub fn quadratic_pal_ca(f_cur: &Tensor, f_ref: &Tensor, w: &AttentionWeights, eps: f64) -> Result<Tensor> {
    same_shapes(f_cur, f_ref, w)?;
    let s = f_cur.shape();
    let c = s.c;
    let d = w.head_dim();
    let dv = c / 2 / w.heads;
    let q = projected(f_cur, &w.wqg);
    let k = projected(f_ref, &w.wkg);
    let v = projected(f_ref, &w.wvg);
    let g = projected(f_cur, &w.wg);
    let plane = s.h * s.w;
    let phi = |x: f64, gamma: f32| if x > 0.0 { x.powf(gamma as f64) } else { 0.0 };
    // [x+, x-] feature vector of one head at one location
    let features = |x: &[f64], head: usize, swap: bool| -> Vec<f64> {
        let mut f = vec![0.0; 2 * d];
        for ch in 0..d {
            let val = x[head * d + ch];
            let gamma = w.gamma[head * d + ch];
            let (pos, neg) = (phi(val, gamma), phi(-val, gamma));
            if swap {
                f[ch] = neg;
                f[d + ch] = pos;
            } else {
                f[ch] = pos;
                f[d + ch] = neg;
            }
        }
        f
    };
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for head in 0..w.heads {
            for (swap, base) in [(false, 0usize), (true, c / 2)] {
                for a in 0..plane {
                    let fq = features(&q[n * plane + a], head, false);
                    let mut num = vec![0.0; dv];
                    let mut den = 0.0;
                    for b in 0..plane {
                        let fk = features(&k[n * plane + b], head, swap);
                        let sim: f64 = fq.iter().zip(&fk).map(|(x, y)| x * y).sum();
                        den += sim;
                        for (e, acc) in num.iter_mut().enumerate() {
                            *acc += sim * v[n * plane + b][base + head * dv + e];
                        }
                    }
                    for (e, acc) in num.iter().enumerate() {
                        let ch = base + head * dv + e;
                        let val = g[n * plane + a][ch] * acc / (den + eps);
                        out.set(n, ch, a / s.w, a % s.w, val as f32);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Symbol probabilities of a discretized Gaussian, tails folded into the end
/// symbols.
pub fn gaussian_symbol_probs(mu: f64, sigma: f64, support: RangeInclusive<i32>) -> Vec<f64> {
    let cdf = |x: f64| normal_cdf((x - mu) / sigma);
    fold_tails(cdf, support)
}

fn fold_tails(cdf: impl Fn(f64) -> f64, support: RangeInclusive<i32>) -> Vec<f64> {
    let (lo, hi) = (*support.start(), *support.end());
    (lo..=hi)
        .map(|s| {
            let upper = if s == hi { 1.0 } else { cdf(s as f64 + 0.5) };
            let lower = if s == lo { 0.0 } else { cdf(s as f64 - 0.5) };
            upper - lower
        })
        .collect()
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (left, right) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, left, 0.5 * tol, depth - 1) + recurse(f, m, b, right, 0.5 * tol, depth - 1)
    }
    recurse(f, a, b, simpson(f, a, b), tol, depth)
}

/// Generalized-Gaussian CDF (standard deviation `sigma`, shape `beta`) by
/// adaptive quadrature of the density from the mode.
pub fn gg_cdf_quadrature(x: f64, mu: f64, sigma: f64, beta: f64) -> f64 {
    let alpha = sigma * ((ln_gamma(1.0 / beta) - ln_gamma(3.0 / beta)).exp()).sqrt();
    let norm = beta / (2.0 * alpha * ln_gamma(1.0 / beta).exp());
    let density = move |t: f64| norm * (-(t / alpha).powf(beta)).exp();
    let dist = (x - mu).abs();
    // integrate in unit-alpha panels so the cusp at the mode stays at a panel edge
    let mut mass = 0.0;
    let mut a = 0.0;
    while a < dist {
        let b = (a + alpha).min(dist);
        mass += adaptive_simpson(&density, a, b, 1e-14, 40);
        a = b;
        if norm * (-(a / alpha).powf(beta)).exp() < 1e-300 {
            mass = 0.5;
            break;
        }
    }
    if x >= mu {
        0.5 + mass
    } else {
        0.5 - mass
    }
}

/// Symbol probabilities of a discretized generalized Gaussian by quadrature,
/// tails folded into the end symbols.
pub fn gg_symbol_probs_quadrature(mu: f64, sigma: f64, beta: f64, support: RangeInclusive<i32>) -> Vec<f64> {
    fold_tails(|x| gg_cdf_quadrature(x, mu, sigma, beta), support)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_agrees_with_erf_for_gaussian() {
        for x in [-3.0, -0.5, 0.0, 0.2, 1.7, 6.0] {
            assert!((gg_cdf_quadrature(x, 0.3, 1.3, 2.0) - normal_cdf((x - 0.3) / 1.3)).abs() < 1e-10);
        }
    }

    #[test]
    fn central_gaussian_symbol() {
        let p = gaussian_symbol_probs(0.0, 1.0, -10..=10);
        assert!((p[10] - 0.382_924_922_548_026).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
