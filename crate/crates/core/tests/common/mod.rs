#![allow(dead_code)]

use geotopic::{CpModel, FactorMatrix, SparseTensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_factor(rng: &mut ChaCha8Rng, rows: usize, rank: usize) -> FactorMatrix {
    let values = (0..rows * rank).map(|_| rng.random_range(0.0..1.0)).collect();
    FactorMatrix::new(rows, rank, values).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, dims: [usize; 3], rank: usize) -> CpModel {
    let weights = (0..rank).map(|_| rng.random_range(0.5..2.0)).collect();
    CpModel::new(
        weights,
        random_factor(rng, dims[0], rank),
        random_factor(rng, dims[1], rank),
        random_factor(rng, dims[2], rank),
    )
    .unwrap()
}

/// Random nonnegative tensor with roughly `density` of its cells filled.
pub fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3], density: f64) -> SparseTensor3 {
    let mut entries = Vec::new();
    for m in 0..dims[0] {
        for n in 0..dims[1] {
            for o in 0..dims[2] {
                if rng.random::<f64>() < density {
                    entries.push(([m, n, o], rng.random_range(0.1..5.0)));
                }
            }
        }
    }
    if entries.is_empty() {
        entries.push(([0, 0, 0], 1.0));
    }
    SparseTensor3::build(dims, entries).unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    [rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max)]
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[f64]) -> f64 {
    a.iter().flatten().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
