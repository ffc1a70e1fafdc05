//! Fixture builders shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor2D;

pub fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor2D::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
}

/// Uniform in `[-scale, scale]`.
pub fn random_signed(h: usize, w: usize, c: usize, scale: f64, seed: u64) -> Tensor2D {
    random_tensor(h, w, c, seed).map(|v| scale * (2.0 * v - 1.0))
}

/// Dark left half, bright right half, split at column `edge`.
pub fn step_edge_guide(h: usize, w: usize, edge: usize) -> Tensor2D {
    Tensor2D::from_fn(h, w, 3, |_, x, c| {
        if x < edge {
            [0.15, 0.2, 0.25][c]
        } else {
            [0.85, 0.7, 0.6][c]
        }
    })
}
