//! Fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thresh_core::dataset::LabeledDataset;
use thresh_core::model::ScoreMatrix;
use thresh_core::simulate::{self, MixtureScenario};

/// `n x k` scores uniform on `[-10, 10)` with uniform true labels.
pub fn labeled_scores(n: usize, k: usize, seed: u64) -> (ScoreMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * k).map(|_| rng.random_range(-10.0..10.0)).collect();
    let truth = (0..n).map(|_| rng.random_range(1..=k)).collect();
    (ScoreMatrix::new(n, k, data).unwrap(), truth)
}

/// Two-component sample at moderate overlap.
pub fn mixture(dim: usize, n: usize, seed: u64) -> LabeledDataset {
    let scenario = MixtureScenario::new(dim, 2.0, 0.5, n, seed);
    simulate::generate(&scenario).unwrap().0
}
