//! Shared fixtures for the kernel benchmarks.

use fswap_core::{AttentionFeatures, Matrix, Shape, SplitMix64, Tensor4};

pub fn random_tensor(shape: Shape, seed: u64) -> Tensor4 {
    let mut rng = SplitMix64::new(seed);
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0) as f32).expect("finite values")
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    Matrix::from_vec(rows, cols, data).expect("positive dims")
}

pub fn random_features(tokens: usize, dim: usize, seed: u64) -> AttentionFeatures {
    AttentionFeatures::new(
        random_matrix(tokens, dim, seed),
        random_matrix(tokens, dim, seed + 1),
        random_matrix(tokens, dim, seed + 2),
    )
    .expect("shared shape")
}
