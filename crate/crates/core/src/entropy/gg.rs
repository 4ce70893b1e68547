//! Generalized-Gaussian symbol model and fixed-point probability tables.

use std::collections::HashMap;
use std::ops::RangeInclusive;
use std::sync::{Arc, Mutex, OnceLock};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
pub const SYMBOL_MIN: i32 = -255;
pub const SYMBOL_MAX: i32 = 255;
pub const SIGMA_MIN: f64 = 0.05;
pub const SIGMA_MAX: f64 = 64.0;
pub const SIGMA_LEVELS: usize = 256;
pub const MU_STEP: f64 = 1.0 / 64.0;
pub const MU_LIMIT: f64 = 64.0;
pub const BETA_MIN: f64 = 0.5;
pub const BETA_MAX: f64 = 4.0;
/// Convergence target of the incomplete-gamma evaluation.
pub const CDF_TOLERANCE: f64 = 1e-9;

/// Shape parameter of the generalized Gaussian, validated to `[0.5, 4]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beta(f64);

impl Beta {
    pub fn new(beta: f64) -> Result<Self> {
        if !(BETA_MIN..=BETA_MAX).contains(&beta) {
            return Err(Error::invalid(format!(
                "shape parameter {beta} outside [{BETA_MIN}, {BETA_MAX}]"
            )));
        }
        Ok(Self(beta))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Grid-snapped parameters of one symbol's distribution.
///
/// `sigma` is the standard deviation of the continuous density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyParams {
    mu_index: i32,
    sigma_index: u16,
    beta: Beta,
}

impl EntropyParams {
    pub fn mu(&self) -> f64 {
        self.mu_index as f64 * MU_STEP
    }

    pub fn sigma(&self) -> f64 {
        sigma_grid()[self.sigma_index as usize]
    }

    pub fn beta(&self) -> f64 {
        self.beta.0
    }

    pub fn sigma_index(&self) -> usize {
        self.sigma_index as usize
    }

    pub fn mu_index(&self) -> i32 {
        self.mu_index
    }
}

fn sigma_grid() -> &'static [f64; SIGMA_LEVELS] {
    static GRID: OnceLock<[f64; SIGMA_LEVELS]> = OnceLock::new();
    GRID.get_or_init(|| {
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
        let mut grid = [0.0; SIGMA_LEVELS];
        for (i, g) in grid.iter_mut().enumerate() {
            let t = i as f64 / (SIGMA_LEVELS - 1) as f64;
            *g = (lo + (hi - lo) * t).exp();
        }
        grid[0] = SIGMA_MIN;
        grid[SIGMA_LEVELS - 1] = SIGMA_MAX;
        grid
    })
}

/// Index of the grid point nearest to `sigma` in log space.
pub fn sigma_index(sigma: f64) -> usize {
    if !(sigma > SIGMA_MIN) {
        return 0;
    }
    if sigma >= SIGMA_MAX {
        return SIGMA_LEVELS - 1;
    }
    let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let pos = (sigma.ln() - lo) / (hi - lo) * (SIGMA_LEVELS - 1) as f64;
    (pos.round() as usize).min(SIGMA_LEVELS - 1)
}

/// Snaps `mu` to the nearest multiple of 1/64 in `[-64, 64]` and `sigma` to
/// the nearest of 256 log-spaced points in `[0.05, 64]`.
pub fn snap_params(mu: f64, sigma: f64, beta: Beta) -> EntropyParams {
    let mu = if mu.is_finite() {
        mu.clamp(-MU_LIMIT, MU_LIMIT)
    } else {
        0.0
    };
    EntropyParams {
        mu_index: (mu / MU_STEP).round() as i32,
        sigma_index: sigma_index(sigma) as u16,
        beta,
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series expansion below `x < a + 1`, modified Lentz continued fraction for
/// the upper tail above it.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    let eps = CDF_TOLERANCE * 1e-4;
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * eps {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < eps {
                break;
            }
        }
        (1.0 - (log_prefix.exp() * h)).max(0.0)
    }
}

/// Scale `alpha` of the density `exp(-(|x| / alpha)^beta)` whose standard
/// deviation is `sigma`.
pub fn gg_scale(sigma: f64, beta: f64) -> f64 {
    sigma * (0.5 * (ln_gamma(1.0 / beta) - ln_gamma(3.0 / beta))).exp()
}

/// CDF of the zero-mean generalized Gaussian with standard deviation `sigma`.
pub fn gg_cdf(x: f64, sigma: f64, beta: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let alpha = gg_scale(sigma, beta);
    let p = regularized_gamma_p(1.0 / beta, (x.abs() / alpha).powf(beta));
    if x > 0.0 {
        0.5 + 0.5 * p
    } else {
        0.5 - 0.5 * p
    }
}

/// Real-valued symbol probabilities over `support`, with the density
/// integrated over `[k - 1/2, k + 1/2]` around `k - mu` and the tails folded
/// into the two end symbols.
pub fn gg_symbol_probs(params: &EntropyParams, support: RangeInclusive<i32>) -> Result<Vec<f64>> {
    let (lo, hi) = (*support.start(), *support.end());
    if hi - lo + 1 < 3 {
        return Err(Error::invalid("symbol support must hold at least 3 symbols"));
    }
    let (mu, sigma, beta) = (params.mu(), params.sigma(), params.beta());
    let cdf = |x: f64| gg_cdf(x - mu, sigma, beta);
    let mut probs = Vec::with_capacity((hi - lo + 1) as usize);
    let mut prev = 0.0;
    for k in lo..hi {
        let upper = cdf(k as f64 + 0.5);
        probs.push((upper - prev).max(0.0));
        prev = upper;
    }
    probs.push((1.0 - prev).max(0.0));
    Ok(probs)
}

/// Fixed-point probability table: counts sum to exactly `2^16`, none is zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PmfTable {
    lo: i32,
    counts: Vec<u16>,
    cum: Vec<u32>,
}

impl PmfTable {
    pub fn from_counts(lo: i32, counts: Vec<u16>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("empty pmf"));
        }
        if counts.contains(&0) {
            return Err(Error::invalid("pmf contains a zero count"));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &c in &counts {
            acc += c as u32;
            cum.push(acc);
        }
        if acc != PROB_TOTAL {
            return Err(Error::invalid(format!(
                "pmf counts sum to {acc}, expected {PROB_TOTAL}"
            )));
        }
        Ok(Self { lo, counts, cum })
    }

    /// Quantizes real probabilities: each symbol receives one count plus
    /// `floor(p * (2^16 - W))`; the remainder goes to the most probable symbol
    /// (lowest index on ties).
    pub fn from_probabilities(lo: i32, probs: &[f64]) -> Result<Self> {
        let width = probs.len();
        if width < 2 || width as u32 >= PROB_TOTAL / 2 {
            return Err(Error::invalid(format!("unsupported alphabet size {width}")));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("probabilities must be non-negative with positive mass"));
        }
        let budget = (PROB_TOTAL - width as u32) as f64;
        let mut counts: Vec<u32> = probs
            .iter()
            .map(|p| 1 + ((p / total) * budget).floor() as u32)
            .collect();
        let used: u32 = counts.iter().sum();
        let mut mode = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[mode] {
                mode = i;
            }
        }
        counts[mode] += PROB_TOTAL - used;
        Self::from_counts(lo, counts.into_iter().map(|c| c as u16).collect())
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.counts.len() as i32 - 1
    }

    pub fn width(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u16] {
        &self.counts
    }

    pub fn contains(&self, symbol: i32) -> bool {
        symbol >= self.lo && symbol <= self.hi()
    }

    /// `(cumulative, frequency)` of a symbol inside the support.
    pub fn interval(&self, symbol: i32) -> Option<(u32, u32)> {
        if !self.contains(symbol) {
            return None;
        }
        let i = (symbol - self.lo) as usize;
        Some((self.cum[i], self.counts[i] as u32))
    }

    /// Symbol whose interval contains `target < 2^16`.
    pub fn lookup(&self, target: u32) -> Option<(i32, u32, u32)> {
        if target >= PROB_TOTAL {
            return None;
        }
        // last i with cum[i] <= target
        let i = self.cum.partition_point(|&c| c <= target) - 1;
        Some((self.lo + i as i32, self.cum[i], self.counts[i] as u32))
    }

    pub fn probability(&self, symbol: i32) -> f64 {
        self.interval(symbol).map_or(0.0, |(_, f)| f as f64 / PROB_TOTAL as f64)
    }

    /// Ideal code length of `symbol` in bits.
    pub fn bits(&self, symbol: i32) -> f64 {
        -self.probability(symbol).log2()
    }

    pub fn entropy_bits(&self) -> f64 {
        self.counts
            .iter()
            .map(|&c| {
                let p = c as f64 / PROB_TOTAL as f64;
                -p * p.log2()
            })
            .sum()
    }
}

/// Fixed-point generalized-Gaussian table over `support`.
pub fn gg_symbol_pmf(params: &EntropyParams, support: RangeInclusive<i32>) -> Result<PmfTable> {
    let lo = *support.start();
    let probs = gg_symbol_probs(params, support)?;
    PmfTable::from_probabilities(lo, &probs)
}

type CacheKey = (i32, u16, u64);

/// Process-wide memo of tables over the default `[-255, 255]` support.
/// Tables are pure functions of the snapped parameters.
pub fn cached_pmf(params: &EntropyParams) -> Arc<PmfTable> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<PmfTable>>>> = OnceLock::new();
    let key = (params.mu_index, params.sigma_index, params.beta.0.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(table) = cache.lock().expect("pmf cache poisoned").get(&key) {
        return Arc::clone(table);
    }
    let table = Arc::new(gg_symbol_pmf(params, SYMBOL_MIN..=SYMBOL_MAX).expect("default support is valid"));
    cache
        .lock()
        .expect("pmf cache poisoned")
        .entry(key)
        .or_insert(table)
        .clone()
}
