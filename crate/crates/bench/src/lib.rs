//! Fixtures shared by the criterion benches.

use geotopic::synth::{plant_model, Planted, PlantedSpec};
use geotopic::{CpModel, SparseTensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The acceptance-sized planted instance.
pub fn planted() -> Planted {
    plant_model(&PlantedSpec::default_acceptance()).expect("default spec is valid")
}

/// A random tensor of the requested shape with roughly `density · cells`
/// nonzeros, and a random model of rank `rank`.
pub fn random_instance(dims: [usize; 3], rank: usize, density: f64, seed: u64) -> (SparseTensor3, CpModel) {
    let model = geotopic::ntf::init_factors(dims, rank, seed).expect("valid dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for m in 0..dims[0] {
        for n in 0..dims[1] {
            for o in 0..dims[2] {
                if rng.random::<f64>() < density {
                    entries.push(([m, n, o], rng.random_range(1.0..2.0)));
                }
            }
        }
    }
    let x = SparseTensor3::build(dims, entries).expect("coordinates in range");
    (x, model)
}
