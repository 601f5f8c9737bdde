//! Deterministic inputs shared by the benchmarks.

use itlm_core::forest::{ForestKind, PixelDataset};
use itlm_core::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `[n, c, size, size]` batch of standard-uniform values.
pub fn batch(n: usize, c: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * c * size * size).map(|_| rng.random::<f32>() - 0.5).collect();
    Tensor::new(vec![n, c, size, size], data).expect("shape matches data")
}

/// `channels` planes of `nrows × ncols` random values.
pub fn planes(channels: usize, nrows: usize, ncols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channels).map(|_| (0..nrows * ncols).map(|_| rng.random()).collect()).collect()
}

/// Regression pixels whose label depends smoothly on the first features.
pub fn pixels(n: usize, n_features: usize, seed: u64) -> PixelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<f64> = (0..n * n_features).map(|_| rng.random()).collect();
    let labels = (0..n)
        .map(|k| {
            let x = &features[k * n_features..(k + 1) * n_features];
            3.0 * x[0] + x[1 % n_features].sin() + 0.1 * rng.random::<f64>()
        })
        .collect();
    PixelDataset::new(ForestKind::Regression, n_features, features, labels).expect("consistent sizes")
}
