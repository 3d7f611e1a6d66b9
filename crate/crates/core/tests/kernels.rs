mod common;

use common::*;
use geotopic::nmf::{flatten_location, flatten_time};
use geotopic::synth::oracle;
use geotopic::tensor::{gram_hadamard, inner_product, mttkrp, residual_sq};
use geotopic::Mode;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mttkrp_matches_explicit_unfolding(seed in any::<u64>(), rank in 1usize..=4, density in 0.1f64..1.0) {
        let mut rng = rng(seed);
        let dims = random_dims(&mut rng, 5);
        let x = random_tensor(&mut rng, dims, density);
        let model = random_model(&mut rng, dims, rank);
        for mode in Mode::ALL {
            let (a, b) = mode.others();
            let sparse = mttkrp(&x, mode, model.factor(a), model.factor(b)).unwrap();
            let dense = oracle::mttkrp(&x, mode, model.factor(a), model.factor(b)).unwrap();
            prop_assert!(max_abs_diff(&dense, sparse.as_slice()) <= 1e-12 * (1.0 + x.total_mass()));
        }
    }

    #[test]
    fn residual_matches_cell_by_cell(seed in any::<u64>(), rank in 1usize..=4) {
        let mut rng = rng(seed);
        let dims = random_dims(&mut rng, 5);
        let x = random_tensor(&mut rng, dims, 0.4);
        let model = random_model(&mut rng, dims, rank);
        let sparse = residual_sq(&x, &model).unwrap();
        let dense = oracle::residual_sq(&x, &model).unwrap();
        prop_assert!((sparse - dense).abs() <= 1e-10 * dense.max(1e-300));
    }

    #[test]
    fn gram_hadamard_matches_two_step(seed in any::<u64>(), rank in 1usize..=4, ra in 1usize..8, rb in 1usize..8) {
        let mut rng = rng(seed);
        let a = random_factor(&mut rng, ra, rank);
        let b = random_factor(&mut rng, rb, rank);
        let fast = gram_hadamard(&a, &b).unwrap();
        let slow = oracle::gram_hadamard(&a, &b);
        prop_assert!(max_abs_diff(&slow, fast.as_slice()) <= 1e-12);
        for r in 0..rank {
            for s in 0..rank {
                prop_assert_eq!(fast.get(r, s), fast.get(s, r));
            }
        }
    }

    #[test]
    fn flattenings_match_dense_marginals(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let dims = random_dims(&mut rng, 5);
        let x = random_tensor(&mut rng, dims, 0.5);
        let ft = flatten_time(&x);
        let fl = flatten_location(&x);
        let dt = oracle::flatten_time(&x).unwrap();
        let dl = oracle::flatten_location(&x).unwrap();
        for (m, row) in dt.iter().enumerate() {
            for (o, v) in row.iter().enumerate() {
                prop_assert!((ft.get(m, o) - v).abs() <= 1e-12);
            }
        }
        for (m, row) in dl.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                prop_assert!((fl.get(m, n) - v).abs() <= 1e-12);
            }
        }
        prop_assert!((ft.total_mass() - x.total_mass()).abs() <= 1e-12 * x.total_mass());
    }

    #[test]
    fn reconstruction_and_norms_match(seed in any::<u64>(), rank in 1usize..=3) {
        let mut rng = rng(seed);
        let dims = random_dims(&mut rng, 4);
        let x = random_tensor(&mut rng, dims, 0.5);
        let model = random_model(&mut rng, dims, rank);
        let dense = oracle::reconstruct(&model).unwrap();
        let mut inner = 0.0;
        for m in 0..dims[0] {
            for n in 0..dims[1] {
                for o in 0..dims[2] {
                    let v = model.reconstruct_entry(m, n, o).unwrap();
                    prop_assert!((v - dense.cells[m][n][o]).abs() <= 1e-12 * (1.0 + v.abs()));
                    inner += x.get([m, n, o]) * dense.cells[m][n][o];
                }
            }
        }
        prop_assert!((inner_product(&x, &model).unwrap() - inner).abs() <= 1e-10 * inner.abs().max(1.0));
        prop_assert!((x.frobenius_sq() - oracle::frobenius_sq(&x).unwrap()).abs() <= 1e-12 * x.frobenius_sq());
        let model_sq: f64 = dense.cells.iter().flatten().flatten().map(|v| v * v).sum();
        prop_assert!((model.norm_sq() - model_sq).abs() <= 1e-10 * model_sq);
    }
}

#[test]
fn tensor_build_is_permutation_invariant() {
    let mut rng = rng(5);
    let x = random_tensor(&mut rng, [4, 4, 4], 0.5);
    let mut raw: Vec<([usize; 3], f64)> = x.entries().iter().map(|e| (e.coord, e.value)).collect();
    raw.reverse();
    let split: Vec<([usize; 3], f64)> = raw.iter().flat_map(|&(c, v)| [(c, v / 4.0), (c, 3.0 * v / 4.0)]).collect();
    assert_eq!(geotopic::SparseTensor3::build([4, 4, 4], raw).unwrap(), x);
    let y = geotopic::SparseTensor3::build([4, 4, 4], split).unwrap();
    for (a, b) in x.entries().iter().zip(y.entries()) {
        assert_eq!(a.coord, b.coord);
        assert!((a.value - b.value).abs() <= 1e-15 * a.value);
    }
}
