//! Planted ground truth: models, observations, synthetic corpora and dense
//! reference oracles.

pub mod corpus;
pub mod oracle;

pub use corpus::{plant_corpus, PlantedCorpus};

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cd::seeded_rng;
use crate::error::{Error, Result};
use crate::io;
use crate::ntf::{write_model, ModelMeta};
use crate::tensor::{CpModel, FactorMatrix, Mode, SparseTensor3};

/// Support sizes either shared by every component or listed per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupportSizes {
    Uniform(usize),
    PerComponent(Vec<usize>),
}

impl SupportSizes {
    fn resolve(&self, rank: usize, what: &str) -> Result<Vec<usize>> {
        match self {
            SupportSizes::Uniform(k) => Ok(vec![*k; rank]),
            SupportSizes::PerComponent(v) if v.len() == rank => Ok(v.clone()),
            SupportSizes::PerComponent(v) => Err(Error::Spec(format!(
                "{what} support lists {} sizes for rank {rank}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// No index is shared between components.
    #[default]
    Disjoint,
    /// Each component draws its support independently.
    Random,
    /// Every component reuses component 0's column, values included.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supports {
    pub term: SupportSizes,
    pub location: SupportSizes,
    pub time: SupportSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Overlaps {
    #[serde(default)]
    pub term: Overlap,
    #[serde(default)]
    pub location: Overlap,
    #[serde(default)]
    pub time: Overlap,
}

fn one() -> f64 {
    1.0
}

fn default_count_scale() -> f64 {
    10.0
}

fn default_value_range() -> [f64; 2] {
    [0.5, 1.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    pub dims: [usize; 3],
    pub rank: usize,
    pub supports: Supports,
    #[serde(default)]
    pub overlap: Overlaps,
    /// Multiplicative noise level: each observed value is scaled by
    /// `1 + noise · z`, `z ~ U[-1, 1]`, clamped at zero.
    #[serde(default)]
    pub noise: f64,
    /// Fraction of support cells kept in the observation.
    #[serde(default = "one")]
    pub density: f64,
    #[serde(default)]
    pub seed: u64,
    /// Corpus counts are `round(count_scale · value)`.
    #[serde(default = "default_count_scale")]
    pub count_scale: f64,
    /// Range of nonzero factor entries.
    #[serde(default = "default_value_range")]
    pub value_range: [f64; 2],
}

impl PlantedSpec {
    /// 50 × 20 × 30, rank 5, 1% noise, disjoint supports, seed 7.
    pub fn default_acceptance() -> Self {
        Self {
            dims: [50, 20, 30],
            rank: 5,
            supports: Supports {
                term: SupportSizes::Uniform(10),
                location: SupportSizes::Uniform(4),
                time: SupportSizes::Uniform(6),
            },
            overlap: Overlaps::default(),
            noise: 0.01,
            density: 1.0,
            seed: 7,
            count_scale: default_count_scale(),
            value_range: default_value_range(),
        }
    }

    /// Two components with one term distribution and separate
    /// (location, time) blocks.
    pub fn adversarial_coupling() -> Self {
        Self {
            dims: [20, 6, 10],
            rank: 2,
            supports: Supports {
                term: SupportSizes::Uniform(8),
                location: SupportSizes::Uniform(3),
                time: SupportSizes::Uniform(5),
            },
            overlap: Overlaps {
                term: Overlap::Shared,
                location: Overlap::Disjoint,
                time: Overlap::Disjoint,
            },
            noise: 0.0,
            density: 1.0,
            seed: 11,
            count_scale: default_count_scale(),
            value_range: default_value_range(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let spec: Self = io::read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Spec("rank must be positive".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::Spec(format!("dims must be positive, got {:?}", self.dims)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Spec(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Spec(format!("density must lie in (0, 1], got {}", self.density)));
        }
        if !(self.count_scale >= 0.0 && self.count_scale.is_finite()) {
            return Err(Error::Spec(format!("count_scale must be finite and >= 0, got {}", self.count_scale)));
        }
        let [lo, hi] = self.value_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Spec(format!("value_range must satisfy 0 < lo <= hi, got {:?}", self.value_range)));
        }
        for mode in Mode::ALL {
            let (sizes, overlap) = self.mode_layout(mode)?;
            let dim = self.dims[mode.index()];
            if sizes.iter().any(|&k| k == 0 || k > dim) {
                return Err(Error::Spec(format!("{mode} supports {sizes:?} must lie in 1..={dim}")));
            }
            match overlap {
                Overlap::Disjoint if sizes.iter().sum::<usize>() > dim => {
                    return Err(Error::Spec(format!(
                        "disjoint {mode} supports {sizes:?} do not fit in {dim} indices"
                    )));
                }
                Overlap::Shared if sizes.iter().any(|&k| k != sizes[0]) => {
                    return Err(Error::Spec(format!("shared {mode} supports must all have the same size")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn mode_layout(&self, mode: Mode) -> Result<(Vec<usize>, Overlap)> {
        let (sizes, overlap) = match mode {
            Mode::Term => (&self.supports.term, self.overlap.term),
            Mode::Location => (&self.supports.location, self.overlap.location),
            Mode::Time => (&self.supports.time, self.overlap.time),
        };
        Ok((sizes.resolve(self.rank, &mode.to_string())?, overlap))
    }
}

/// Ground truth and its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub truth: CpModel,
    pub observation: SparseTensor3,
}

fn plant_factor<R: Rng>(rng: &mut R, rows: usize, sizes: &[usize], overlap: Overlap, range: [f64; 2]) -> Result<FactorMatrix> {
    let rank = sizes.len();
    let mut values = vec![0.0; rows * rank];
    let draw = |rng: &mut R| if range[0] == range[1] { range[0] } else { rng.random_range(range[0]..range[1]) };
    match overlap {
        Overlap::Disjoint => {
            let order = index::sample(rng, rows, sizes.iter().sum()).into_vec();
            let mut start = 0;
            for (r, &k) in sizes.iter().enumerate() {
                let mut support = order[start..start + k].to_vec();
                support.sort_unstable();
                for i in support {
                    values[i * rank + r] = draw(rng);
                }
                start += k;
            }
        }
        Overlap::Random => {
            for (r, &k) in sizes.iter().enumerate() {
                let mut support = index::sample(rng, rows, k).into_vec();
                support.sort_unstable();
                for i in support {
                    values[i * rank + r] = draw(rng);
                }
            }
        }
        Overlap::Shared => {
            let mut support = index::sample(rng, rows, sizes[0]).into_vec();
            support.sort_unstable();
            for i in support {
                let v = draw(rng);
                for r in 0..rank {
                    values[i * rank + r] = v;
                }
            }
        }
    }
    FactorMatrix::new(rows, rank, values)
}

fn support(f: &FactorMatrix, r: usize) -> Vec<usize> {
    (0..f.rows()).filter(|&i| f.get(i, r) > 0.0).collect()
}

/// Draws a planted model and its (optionally thinned and noisy) observation.
pub fn plant_model(spec: &PlantedSpec) -> Result<Planted> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut factors = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let (sizes, overlap) = spec.mode_layout(mode)?;
        factors.push(plant_factor(&mut rng, spec.dims[mode.index()], &sizes, overlap, spec.value_range)?);
    }
    let t = factors.pop().expect("three factors");
    let l = factors.pop().expect("three factors");
    let u = factors.pop().expect("three factors");
    let truth = CpModel::from_factors(u, l, t)?;

    let mut cells = BTreeSet::new();
    for r in 0..spec.rank {
        let (su, sl, st) = (support(truth.u(), r), support(truth.l(), r), support(truth.t(), r));
        for &m in &su {
            for &n in &sl {
                for &o in &st {
                    cells.insert((o, n, m));
                }
            }
        }
    }
    let mut entries = Vec::with_capacity(cells.len());
    for (o, n, m) in cells {
        if spec.density < 1.0 && rng.random::<f64>() >= spec.density {
            continue;
        }
        let mut v = truth.reconstruct_entry(m, n, o)?;
        if spec.noise > 0.0 {
            let z: f64 = rng.random_range(-1.0..=1.0);
            v = (v * (1.0 + spec.noise * z)).max(0.0);
        }
        entries.push(([m, n, o], v));
    }
    let observation = SparseTensor3::build(spec.dims, entries)?;
    Ok(Planted { truth, observation })
}

pub const SPEC_FILE: &str = "spec.json";
pub const OBSERVATION_FILE: &str = "tensor.coo";
pub const TRUTH_DIR: &str = "truth";

impl Planted {
    /// Writes `spec.json`, the observation tensor and the truth model.
    pub fn write(&self, dir: &Path, spec: &PlantedSpec) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_json(&dir.join(SPEC_FILE), spec)?;
        io::write_tensor(&dir.join(OBSERVATION_FILE), &self.observation)?;
        write_truth(&dir.join(TRUTH_DIR), &self.truth, spec.seed)
    }
}

pub(crate) fn write_truth(dir: &Path, truth: &CpModel, seed: u64) -> Result<()> {
    let meta = ModelMeta {
        dims: truth.dims(),
        rank: truth.rank(),
        algorithm: None,
        seed: Some(seed),
        iterations: 0,
        final_objective: None,
    };
    write_model(dir, truth, &meta)
}
