//! Shared fixtures for the kernel benchmarks.

use sspformer::{Rng, Tensor};

/// Standard normal tensor from a fixed seed.
pub fn gaussian(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(dims, |_| rng.normal())
}
