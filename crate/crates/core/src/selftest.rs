//! Quick oracle comparisons runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{dn_ca_traced, pal_ca, DENOMINATOR_FLOOR};
use crate::entropy::{
    cached_pmf, gg_symbol_probs, range_decode, range_encode, snap_params, Beta, PmfTable, PROB_TOTAL,
};
use crate::error::Result;
use crate::hpcm::{build_schedule, STEPS_PER_SCALE, STEP_COUNT};
use crate::lattice::{babai_round, brute_force_nearest, lattice_transform};
use crate::oracle;
use crate::pipeline::{decode_sequence, encode_sequence_with, synthetic_clip, EncodeOptions, GopConfig, Model};
use crate::temporal::{dequantize_alpha, quantize_alpha};
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Draws a symbol distributed as `table`.
pub fn sample_symbol<R: Rng>(rng: &mut R, table: &PmfTable) -> i32 {
    let target = rng.random_range(0..PROB_TOTAL);
    table.lookup(target).expect("counts cover the full range").0
}

fn check_range_coder(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = f64::NEG_INFINITY;
    for beta in [1.0, 1.5, 2.0] {
        let params = snap_params(
            rng.random_range(-2.0..2.0),
            rng.random_range(0.3..6.0),
            Beta::new(beta)?,
        );
        let table = cached_pmf(&params);
        let symbols: Vec<i32> = (0..5000).map(|_| sample_symbol(rng, &table)).collect();
        let pmfs = vec![table.clone(); symbols.len()];
        let bytes = range_encode(&symbols, &pmfs)?;
        if range_decode(&bytes, &pmfs)? != symbols {
            return Ok(CheckOutcome::new(
                "range-coder",
                false,
                format!("round trip failed at beta {beta}"),
            ));
        }
        let ideal: f64 = symbols.iter().map(|&s| table.bits(s)).sum();
        let excess = (bytes.len() * 8) as f64 - (ideal * 1.01 + 32.0);
        worst = worst.max(excess);
    }
    Ok(CheckOutcome::new(
        "range-coder",
        worst <= 0.0,
        format!("worst excess over 1% + 32 bits: {worst:.1} bits"),
    ))
}

fn check_gg_pmf(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for beta in [1.0, 1.5, 2.0] {
        for _ in 0..3 {
            let params = snap_params(
                rng.random_range(-3.0..3.0),
                rng.random_range(0.2..8.0),
                Beta::new(beta)?,
            );
            let probs = gg_symbol_probs(&params, -40..=40)?;
            let reference = if beta == 2.0 {
                oracle::gaussian_symbol_probs(params.mu(), params.sigma(), -40..=40)
            } else {
                oracle::gg_symbol_probs_quadrature(params.mu(), params.sigma(), beta, -40..=40)
            };
            for (a, b) in probs.iter().zip(&reference) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(CheckOutcome::new(
        "gg-pmf",
        worst <= 1e-6,
        format!("max per-symbol error {worst:.2e}"),
    ))
}

fn check_lattice(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut mismatches = 0;
    let trials = 200;
    for _ in 0..trials {
        let basis = oracle::random_orthogonal_basis(rng, 4);
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let babai = babai_round(&lattice_transform(&y, &[0.0; 4], &basis)?);
        if babai != brute_force_nearest(&y, &basis, 2)? {
            mismatches += 1;
        }
    }
    Ok(CheckOutcome::new(
        "lattice",
        mismatches == 0,
        format!("{mismatches}/{trials} Babai results differ from exhaustive search"),
    ))
}

fn check_pal_ca(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let heads = rng.random_range(1..=2);
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let weights = oracle::random_attention(rng, 8, heads, 3, false);
        let f = oracle::random_tensor(rng, Shape::new(1, 8, h, w), 1.0);
        let r = oracle::random_tensor(rng, Shape::new(1, 8, h, w), 1.0);
        let fast = pal_ca(&f, &r, &weights)?;
        let slow = oracle::quadratic_pal_ca(&f, &r, &weights, DENOMINATOR_FLOOR as f64)?;
        worst = worst.max(oracle::relative_error(&fast, &slow));
    }
    Ok(CheckOutcome::new(
        "pal-ca",
        worst <= 1e-4,
        format!("max relative error {worst:.2e}"),
    ))
}

fn check_dn_ca(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let (mut worst, mut row_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let heads = rng.random_range(1..=2);
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let weights = oracle::random_attention(rng, 8, heads, 3, false);
        let f = oracle::random_tensor(rng, Shape::new(1, 8, h, w), 1.0);
        let r = oracle::random_tensor(rng, Shape::new(1, 8, h, w), 1.0);
        let (fast, trace) = dn_ca_traced(&f, &r, &weights)?;
        let slow = oracle::neighborhood_attention(&f, &r, &weights)?;
        worst = worst.max(oracle::max_abs_error(&fast, &slow));
        for row in trace.weights.chunks(trace.taps) {
            row_err = row_err.max((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
        }
    }
    Ok(CheckOutcome::new(
        "dn-ca",
        worst <= 1e-5 && row_err <= 1e-6,
        format!("max abs error {worst:.2e}, softmax row error {row_err:.2e}"),
    ))
}

fn check_schedule() -> Result<CheckOutcome> {
    for h in 4..=12 {
        for w in 4..=12 {
            let sched = build_schedule(h, w)?;
            let mut seen = vec![0u8; h * w];
            for step in sched.steps() {
                for &(r, c) in &step.positions {
                    seen[r * w + c] += 1;
                }
            }
            let scales: Vec<usize> = sched.steps().iter().map(|s| s.scale).collect();
            let counts: Vec<usize> = (0..3).map(|k| scales.iter().filter(|&&s| s == k).count()).collect();
            if seen.iter().any(|&n| n != 1) || sched.steps().len() != STEP_COUNT || counts != STEPS_PER_SCALE {
                return Ok(CheckOutcome::new(
                    "schedule",
                    false,
                    format!("bad partition on {h}x{w}"),
                ));
            }
        }
    }
    Ok(CheckOutcome::new(
        "schedule",
        true,
        "81 grids partitioned into 2/3/6 steps".into(),
    ))
}

fn check_alpha() -> CheckOutcome {
    let bad = (0..=u16::MAX)
        .filter(|&c| quantize_alpha(dequantize_alpha(c)) != c)
        .count();
    CheckOutcome::new("alpha", bad == 0, format!("{bad} of 65536 codes fail to round trip"))
}

fn check_codec(seed: u64) -> Result<CheckOutcome> {
    let model = Model::from_seed(seed)?;
    let clip = synthetic_clip(seed, 3, 32, 32)?;
    for gop in [
        GopConfig::all_intra(),
        GopConfig::low_delay(-1),
        GopConfig::random_access(8, 2),
    ] {
        let enc = encode_sequence_with(&clip, &gop, 20, &model, &EncodeOptions::default())?;
        if decode_sequence(&enc.stream, &model)? != enc.reconstructions {
            return Ok(CheckOutcome::new(
                "codec",
                false,
                format!("{:?} reconstructions differ", gop.mode),
            ));
        }
    }
    Ok(CheckOutcome::new(
        "codec",
        true,
        "AI/LD/RA decoder output matches encoder".into(),
    ))
}

/// Runs every check with inputs derived from `seed`. Errors inside a check
/// are reported as failures.
pub fn run_selftest(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<CheckOutcome>| {
        out.push(r.unwrap_or_else(|e| CheckOutcome::new(name, false, e.to_string())));
    };
    push("range-coder", check_range_coder(&mut rng));
    push("gg-pmf", check_gg_pmf(&mut rng));
    push("lattice", check_lattice(&mut rng));
    push("pal-ca", check_pal_ca(&mut rng));
    push("dn-ca", check_dn_ca(&mut rng));
    push("schedule", check_schedule());
    push("alpha", Ok(check_alpha()));
    push("codec", check_codec(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
