//! Generalized-Gaussian probability model and the range coder that consumes it.

pub mod gg;
pub mod range_coder;

pub use gg::{
    cached_pmf, gg_cdf, gg_scale, gg_symbol_pmf, gg_symbol_probs, regularized_gamma_p, sigma_index, snap_params, Beta,
    EntropyParams, PmfTable, PROB_BITS, PROB_TOTAL, SYMBOL_MAX, SYMBOL_MIN,
};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
