//! Fixed inputs shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulvc_core::entropy::{cached_pmf, snap_params, Beta, PmfTable};
use ulvc_core::oracle::random_tensor;
use ulvc_core::selftest::sample_symbol;
use ulvc_core::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn feature_map(seed: u64, channels: usize, h: usize, w: usize) -> Tensor {
    random_tensor(&mut rng(seed), Shape::new(1, channels, h, w), 1.0)
}

/// `count` symbols drawn from one GG table, with the table repeated per symbol.
pub fn symbol_stream(seed: u64, count: usize, beta: f64) -> (Vec<i32>, Vec<std::sync::Arc<PmfTable>>) {
    let table = cached_pmf(&snap_params(0.3, 2.5, Beta::new(beta).expect("valid beta")));
    let mut r = rng(seed);
    let symbols = (0..count).map(|_| sample_symbol(&mut r, &table)).collect();
    (symbols, vec![table; count])
}
