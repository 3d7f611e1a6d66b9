#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geotopic::{CpModel, FactorMatrix, SparseTensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_geotopic")
}

/// Runs the CLI and returns its output.
pub fn geotopic<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn geotopic")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs the CLI and fails with its stderr unless it exits 0.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> std::result::Result<Output, String> {
    let out = geotopic(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("exit {}: {}", code(&out), stderr(&out)))
    }
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    [rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max)]
}

pub fn random_factor(rng: &mut ChaCha8Rng, rows: usize, rank: usize, lo: f64, hi: f64) -> FactorMatrix {
    let values = (0..rows * rank).map(|_| rng.random_range(lo..hi)).collect();
    FactorMatrix::new(rows, rank, values).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, dims: [usize; 3], rank: usize, lo: f64, hi: f64) -> CpModel {
    CpModel::from_factors(
        random_factor(rng, dims[0], rank, lo, hi),
        random_factor(rng, dims[1], rank, lo, hi),
        random_factor(rng, dims[2], rank, lo, hi),
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

pub fn max_abs_diff(a: &[Vec<f64>], b: &[f64]) -> f64 {
    a.iter().flatten().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
