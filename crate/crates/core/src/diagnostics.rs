//! Loss evaluators and rate accounting. Rates in bits, natural-log BCE,
//! distortion as MSE on unit-range pixels.

use std::fmt;

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;
/// Default label-smoothing strength.
pub const LABEL_SMOOTHING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    pub distortion: f64,
    pub lambda: f64,
    pub rd: f64,
    pub reg: f64,
    pub cls: f64,
}

impl LossReport {
    pub fn new(
        rate_y_bits: f64,
        rate_z_bits: f64,
        distortion: f64,
        lambda: f64,
        alphas: &[f64],
        labels: &[u8],
    ) -> Result<Self> {
        Ok(Self {
            rate_y_bits,
            rate_z_bits,
            distortion,
            lambda,
            rd: rd_loss(rate_y_bits, rate_z_bits, distortion, lambda)?,
            reg: gate_regularizer(alphas)?,
            cls: if labels.is_empty() {
                0.0
            } else {
                label_smoothed_bce(alphas, labels, LABEL_SMOOTHING)?
            },
        })
    }
}

impl fmt::Display for LossReport {
    /// One `key=value` pair per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rate_y_bits={}", self.rate_y_bits)?;
        writeln!(f, "rate_z_bits={}", self.rate_z_bits)?;
        writeln!(f, "distortion={}", self.distortion)?;
        writeln!(f, "lambda={}", self.lambda)?;
        writeln!(f, "rd={}", self.rd)?;
        writeln!(f, "reg={}", self.reg)?;
        writeln!(f, "cls={}", self.cls)
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!(
            "{name} must be a finite nonnegative value, got {v}"
        )));
    }
    Ok(())
}

/// `R(y) + R(z) + lambda * D`.
pub fn rd_loss(rate_y: f64, rate_z: f64, mse: f64, lambda: f64) -> Result<f64> {
    nonnegative("rate_y", rate_y)?;
    nonnegative("rate_z", rate_z)?;
    nonnegative("mse", mse)?;
    nonnegative("lambda", lambda)?;
    Ok(rate_y + rate_z + lambda * mse)
}

/// `sum_t alpha_t + sum_{t>=1} |alpha_t - alpha_{t-1}|`.
pub fn gate_regularizer(alphas: &[f64]) -> Result<f64> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("gate value {a} outside [0, 1]")));
    }
    let sparsity: f64 = alphas.iter().sum();
    let tv: f64 = alphas.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(sparsity + tv)
}

/// Binary cross-entropy against smoothed targets `(1-eps) r + eps (1-r)`.
pub fn label_smoothed_bce(alphas: &[f64], labels: &[u8], epsilon: f64) -> Result<f64> {
    if alphas.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} gates but {} labels",
            alphas.len(),
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("smoothing {epsilon} outside [0, 1]")));
    }
    let mut total = 0.0;
    for (&a, &r) in alphas.iter().zip(labels) {
        if r > 1 {
            return Err(Error::invalid(format!("label {r} is not binary")));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("gate value {a} outside [0, 1]")));
        }
        let r = r as f64;
        let target = (1.0 - epsilon) * r + epsilon * (1.0 - r);
        let a = a.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total += -target * a.ln() - (1.0 - target) * (1.0 - a).ln();
    }
    Ok(total)
}

/// `8 * bytes / (h * w)`.
pub fn bits_per_pixel(bytes: usize, h: usize, w: usize) -> f64 {
    8.0 * bytes as f64 / (h * w) as f64
}

/// PSNR on the 8-bit scale; infinite for a zero error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}
