//! Nonnegative CP factorization by cyclic coordinate descent.
//!
//! Every element of U, L and T is updated in turn to the minimizer of the
//! squared error along its own coordinate, projected onto `[0, ∞)`:
//!
//! ```text
//! f[i,r] ← max(0, f[i,r] − (−G[i,r] + (F·H)[i,r]) / H[r,r])
//! ```
//!
//! where `G` is the MTTKRP of the updated mode and `H` the Gram–Hadamard
//! product of the two fixed factors. With [`Algorithm::Sacd`] only the
//! elements that moved appreciably in the previous iteration are revisited,
//! with a periodic full refresh.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cd::{self, gradient_numerator, positive_uniform, seeded_rng, CdProblem};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{self, CpModel, DenseMatrix, FactorMatrix, Mode, SparseTensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Full cyclic coordinate descent.
    Ccd,
    /// Saturating coordinate descent: selective element updates.
    Sacd,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ccd => "ccd",
            Algorithm::Sacd => "sacd",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccd" => Ok(Algorithm::Ccd),
            "sacd" => Ok(Algorithm::Sacd),
            other => Err(Error::Input(format!("unknown algorithm {other:?} (ccd or sacd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative objective change of a full sweep drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// τ: an element stays active while its last change exceeds τ times the
    /// largest change in its factor matrix.
    pub sacd_threshold: f64,
    /// Every this many iterations all elements are reactivated.
    pub refresh_interval: usize,
    /// Components with `H[r,r]` below this are skipped.
    pub epsilon_guard: f64,
    /// At convergence, fold a component that duplicates another in every
    /// factor into it and reseed the freed slot.
    #[serde(default = "yes")]
    pub merge_duplicates: bool,
}

fn yes() -> bool {
    true
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 200,
            rel_tol: 1e-4,
            seed: 0,
            algorithm: Algorithm::Ccd,
            sacd_threshold: 0.01,
            refresh_interval: 10,
            epsilon_guard: 1e-12,
            merge_duplicates: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Input("rank must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Input("max_iters must be positive".into()));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Input(format!("rel_tol {} must be nonnegative", self.rel_tol)));
        }
        if !(self.sacd_threshold >= 0.0 && self.sacd_threshold < 1.0) {
            return Err(Error::Input(format!(
                "sacd_threshold {} must lie in [0, 1)",
                self.sacd_threshold
            )));
        }
        if self.refresh_interval == 0 {
            return Err(Error::Input("refresh_interval must be positive".into()));
        }
        if !(self.epsilon_guard > 0.0 && self.epsilon_guard.is_finite()) {
            return Err(Error::Input("epsilon_guard must be a small positive number".into()));
        }
        Ok(())
    }
}

/// Per-factor element masks (row-major, `rows × rank`) of elements to update.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    masks: Vec<Vec<bool>>,
}

impl ActiveSet {
    pub fn full(sizes: &[usize]) -> Self {
        Self {
            masks: sizes.iter().map(|&n| vec![true; n]).collect(),
        }
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn mask(&self, factor: usize) -> &[bool] {
        &self.masks[factor]
    }

    pub fn fraction(&self, factor: usize) -> f64 {
        let m = &self.masks[factor];
        if m.is_empty() {
            return 0.0;
        }
        m.iter().filter(|a| **a).count() as f64 / m.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.masks.iter().all(|m| m.iter().all(|a| !*a))
    }
}

/// Chooses the elements to update in `iteration` (1-based) from the
/// per-element changes of the previous iteration.
///
/// The first iteration and every `refresh_interval`-th one after it are
/// full. Otherwise an element is active iff its last change exceeds
/// `τ · max` over its factor matrix; the set is empty only when every
/// change was exactly zero.
pub fn select_active(prev_deltas: &[Vec<f64>], iteration: usize, config: &SolverConfig) -> ActiveSet {
    let sizes: Vec<usize> = prev_deltas.iter().map(Vec::len).collect();
    if iteration <= 1 || prev_deltas.is_empty() || (iteration - 1).is_multiple_of(config.refresh_interval) {
        return ActiveSet::full(&sizes);
    }
    let masks = prev_deltas
        .iter()
        .map(|deltas| {
            let max = deltas.iter().copied().fold(0.0, f64::max);
            let cutoff = config.sacd_threshold * max;
            deltas.iter().map(|d| *d > cutoff).collect()
        })
        .collect();
    ActiveSet { masks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub rel_change: f64,
    /// Fraction of elements updated, per factor matrix.
    pub active_fraction: Vec<f64>,
    pub full_sweep: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reseed {
    pub iteration: usize,
    pub component: usize,
    pub factors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub iteration: usize,
    /// Component that absorbed the duplicate.
    pub kept: usize,
    /// Component that was freed and reseeded.
    pub freed: usize,
    /// Smallest column cosine between the pair over all factors.
    pub cosine: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    MaxIterations,
    Converged,
    /// A full sweep changed nothing.
    Stationary,
    ExactFit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    /// Factor names, in update order.
    pub labels: Vec<String>,
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub reseeds: Vec<Reseed>,
    #[serde(default)]
    pub merges: Vec<Merge>,
    pub stop_reason: StopReason,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    /// Mean over iterations after `after` of the per-iteration mean active fraction.
    pub fn mean_active_fraction_after(&self, after: usize) -> Option<f64> {
        let tail: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.iteration > after)
            .map(|r| r.active_fraction.iter().sum::<f64>() / r.active_fraction.len() as f64)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// `iter,objective,rel_change,active_frac_<label>...,seconds`.
    ///
    /// Wall time is written as 0 unless `with_timing` is set, which keeps
    /// the file a deterministic function of the inputs.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("iter,objective,rel_change");
        for label in &self.labels {
            out.push_str(",active_frac_");
            out.push_str(label);
        }
        out.push_str(",seconds\n");
        for rec in &self.records {
            out.push_str(&format!(
                "{},{},{}",
                rec.iteration,
                io::fmt_f64(rec.objective),
                io::fmt_f64(rec.rel_change)
            ));
            for f in &rec.active_fraction {
                out.push(',');
                out.push_str(&io::fmt_f64(*f));
            }
            let seconds = if with_timing { rec.seconds } else { 0.0 };
            out.push(',');
            out.push_str(&io::fmt_f64(seconds));
            out.push('\n');
        }
        out
    }
}

/// Random model with entries uniform on (0, 1] and λ ≡ 1.
pub fn init_factors(dims: [usize; 3], rank: usize, seed: u64) -> Result<CpModel> {
    if rank == 0 || dims.contains(&0) {
        return Err(Error::Input(format!("cannot initialize rank {rank} model for dims {dims:?}")));
    }
    let [m, n, o] = dims;
    if rank > (m * n).min(n * o).min(m * o) {
        log::warn!("rank {rank} exceeds every pairwise mode product of {dims:?}");
    }
    let mut rng = seeded_rng(seed);
    let mut draw = |rows: usize| {
        let values = (0..rows * rank).map(|_| positive_uniform(&mut rng)).collect();
        FactorMatrix::new(rows, rank, values)
    };
    let u = draw(m)?;
    let l = draw(n)?;
    let t = draw(o)?;
    CpModel::from_factors(u, l, t)
}

/// Squared error `‖X − X̂‖²` of a valid nonnegative model.
pub fn objective(x: &SparseTensor3, model: &CpModel) -> Result<f64> {
    for mode in Mode::ALL {
        if let Some(v) = model.factor(mode).as_slice().iter().find(|v| **v < 0.0) {
            return Err(Error::Value(format!("{mode} factor holds negative entry {v}")));
        }
    }
    tensor::residual_sq(x, model)
}

struct CpProblem<'a> {
    x: &'a SparseTensor3,
    model: CpModel,
}

const CP_LABELS: &[&str] = &["u", "l", "t"];

impl CpProblem<'_> {
    fn fixed(&self, mode: Mode) -> (&FactorMatrix, &FactorMatrix) {
        let (a, b) = mode.others();
        (self.model.factor(a), self.model.factor(b))
    }
}

impl CdProblem for CpProblem<'_> {
    fn labels(&self) -> &'static [&'static str] {
        CP_LABELS
    }

    fn factor(&self, k: usize) -> &FactorMatrix {
        self.model.factor(Mode::ALL[k])
    }

    fn factor_mut(&mut self, k: usize) -> &mut FactorMatrix {
        self.model.factor_mut(Mode::ALL[k])
    }

    fn data_term(&self, k: usize, rows: Option<&[bool]>) -> Result<DenseMatrix> {
        let mode = Mode::ALL[k];
        let (a, b) = self.fixed(mode);
        match rows {
            None => tensor::mttkrp(self.x, mode, a, b),
            Some(rows) => tensor::mttkrp_rows(self.x, mode, a, b, rows),
        }
    }

    fn hessian(&self, k: usize) -> Result<DenseMatrix> {
        let (a, b) = self.fixed(Mode::ALL[k]);
        tensor::gram_hadamard(a, b)
    }

    fn objective(&self) -> Result<f64> {
        tensor::residual_sq(self.x, &self.model)
    }
}

fn check_dims(x: &SparseTensor3, model: &CpModel) -> Result<()> {
    if x.dims() != model.dims() {
        return Err(Error::Shape(format!(
            "tensor dims {:?} but model dims {:?}",
            x.dims(),
            model.dims()
        )));
    }
    Ok(())
}

/// Per-element changes from one mode sweep, row-major like the factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepDeltas {
    pub deltas: Vec<f64>,
    pub skipped_components: Vec<bool>,
}

/// Updates every active element of one factor matrix in place.
///
/// λ is folded into a fixed factor first, which leaves the reconstruction
/// and the updated factor's values untouched. `active` is a row-major mask
/// over the mode's factor; `None` updates everything.
pub fn ccd_sweep_mode(
    x: &SparseTensor3,
    model: &mut CpModel,
    mode: Mode,
    active: Option<&[bool]>,
    epsilon_guard: f64,
) -> Result<SweepDeltas> {
    check_dims(x, model)?;
    model.absorb_weights(mode.others().0);
    let (a, b) = {
        let (ma, mb) = mode.others();
        (model.factor(ma), model.factor(mb))
    };
    let g = tensor::mttkrp(x, mode, a, b)?;
    let h = tensor::gram_hadamard(a, b)?;
    let outcome = cd::sweep_factor(model.factor_mut(mode), &g, &h, active, epsilon_guard).map_err(
        |(row, column, detail)| Error::Solver {
            iteration: 0,
            mode: mode.to_string(),
            row,
            column,
            detail,
        },
    )?;
    Ok(SweepDeltas {
        deltas: outcome.deltas,
        skipped_components: outcome.skipped,
    })
}

/// Analytic partial derivatives `∂f/∂F[i,r]` of the squared error with
/// respect to the factor of `mode`, using the same numerator as the sweep.
pub fn mode_gradient(x: &SparseTensor3, model: &CpModel, mode: Mode) -> Result<DenseMatrix> {
    check_dims(x, model)?;
    let mut model = model.clone();
    model.absorb_weights(mode.others().0);
    let (ma, mb) = mode.others();
    let (a, b) = (model.factor(ma), model.factor(mb));
    let g = tensor::mttkrp(x, mode, a, b)?;
    let h = tensor::gram_hadamard(a, b)?;
    let f = model.factor(mode);
    let rank = f.rank();
    let mut values = Vec::with_capacity(f.rows() * rank);
    for i in 0..f.rows() {
        for r in 0..rank {
            values.push(2.0 * gradient_numerator(g.row(i), f.row(i), &h, r));
        }
    }
    DenseMatrix::from_vec(f.rows(), rank, values)
}

/// Factorizes `x` from a seeded random start.
pub fn factorize(x: &SparseTensor3, config: &SolverConfig) -> Result<(CpModel, SolverTrace)> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::Input("cannot factorize an empty tensor".into()));
    }
    let init = init_factors(x.dims(), config.rank, config.seed)?;
    factorize_from(x, init, config)
}

/// Factorizes `x` starting from `init`. Sweeps run U, L, T per iteration.
pub fn factorize_from(x: &SparseTensor3, init: CpModel, config: &SolverConfig) -> Result<(CpModel, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let model = factorize_into(x, init, config, &mut trace)?;
    Ok((model, trace))
}

/// [`factorize_from`] writing into `trace`, which keeps the completed
/// iterations when the solver fails part way.
pub fn factorize_into(x: &SparseTensor3, init: CpModel, config: &SolverConfig, trace: &mut SolverTrace) -> Result<CpModel> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::Input("cannot factorize an empty tensor".into()));
    }
    check_dims(x, &init)?;
    if init.rank() != config.rank {
        return Err(Error::Shape(format!(
            "initial model has rank {}, config asks for {}",
            init.rank(),
            config.rank
        )));
    }
    let mut model = init;
    model.absorb_weights(Mode::Time);
    let mut problem = CpProblem { x, model };
    cd::run_into(&mut problem, config, trace)?;
    Ok(problem.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub dims: [usize; 3],
    pub rank: usize,
    pub algorithm: Option<Algorithm>,
    pub seed: Option<u64>,
    pub iterations: usize,
    /// Absent for models that were not fitted, such as planted truth.
    #[serde(default)]
    pub final_objective: Option<f64>,
}

/// Writes `lambda.csv`, `U.csv`, `L.csv`, `T.csv` and `meta.json` into `dir`.
pub fn write_model(dir: &Path, model: &CpModel, meta: &ModelMeta) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_table(&dir.join("lambda.csv"), 1, model.weights())?;
    for (name, mode) in [("U.csv", Mode::Term), ("L.csv", Mode::Location), ("T.csv", Mode::Time)] {
        let f = model.factor(mode);
        io::write_table(&dir.join(name), f.rank(), f.as_slice())?;
    }
    io::write_json(&dir.join("meta.json"), meta)
}

pub fn read_model(dir: &Path) -> Result<(CpModel, ModelMeta)> {
    let (_, _, weights) = io::read_table(&dir.join("lambda.csv"))?;
    let mut factors = Vec::with_capacity(3);
    for name in ["U.csv", "L.csv", "T.csv"] {
        let (rows, cols, values) = io::read_table(&dir.join(name))?;
        factors.push(FactorMatrix::new(rows, cols, values)?);
    }
    let t = factors.pop().expect("three factors");
    let l = factors.pop().expect("three factors");
    let u = factors.pop().expect("three factors");
    let model = CpModel::new(weights, u, l, t)?;
    let meta: ModelMeta = io::read_json(&dir.join("meta.json"))?;
    if meta.dims != model.dims() || meta.rank != model.rank() {
        return Err(Error::Shape(format!(
            "meta.json declares {:?} rank {}, factor files hold {:?} rank {}",
            meta.dims,
            meta.rank,
            model.dims(),
            model.rank()
        )));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> FactorMatrix {
        FactorMatrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_positive() {
        let a = init_factors([6, 3, 3], 2, 42).unwrap();
        let b = init_factors([6, 3, 3], 2, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), [6, 3, 3]);
        assert_eq!(a.u().rank(), 2);
        for mode in Mode::ALL {
            assert!(a.factor(mode).as_slice().iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
        assert_ne!(a, init_factors([6, 3, 3], 2, 43).unwrap());
    }

    #[test]
    fn scalar_update_reaches_exact_fit() {
        // X = 8, L = T = 2, U = 1: u ← max(0, 1 − (−8·4 + 1·16)/16) = 2.
        let x = SparseTensor3::build([1, 1, 1], [([0, 0, 0], 8.0)]).unwrap();
        let mut model = CpModel::from_factors(scalar(1.0), scalar(2.0), scalar(2.0)).unwrap();
        let out = ccd_sweep_mode(&x, &mut model, Mode::Term, None, 1e-12).unwrap();
        assert_eq!(model.u().get(0, 0), 2.0);
        assert_eq!(out.deltas, vec![1.0]);
        assert_eq!(model.reconstruct_entry(0, 0, 0).unwrap(), 8.0);
    }

    #[test]
    fn stationary_model_does_not_move() {
        let u = FactorMatrix::new(3, 1, vec![1.0, 2.0, 0.5]).unwrap();
        let l = FactorMatrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let t = FactorMatrix::new(2, 1, vec![2.0, 1.0]).unwrap();
        let model = CpModel::from_factors(u, l, t).unwrap();
        let mut raw = Vec::new();
        for m in 0..3 {
            for n in 0..2 {
                for o in 0..2 {
                    raw.push(([m, n, o], model.reconstruct_entry(m, n, o).unwrap()));
                }
            }
        }
        let x = SparseTensor3::build([3, 2, 2], raw).unwrap();
        let mut m2 = model.clone();
        for mode in Mode::ALL {
            let out = ccd_sweep_mode(&x, &mut m2, mode, None, 1e-12).unwrap();
            assert!(out.deltas.iter().all(|d| *d < 1e-12), "{mode}: {:?}", out.deltas);
        }
    }

    #[test]
    fn guard_skips_dead_components() {
        let x = SparseTensor3::build([1, 1, 1], [([0, 0, 0], 8.0)]).unwrap();
        let mut model = CpModel::from_factors(scalar(1.0), scalar(0.0), scalar(2.0)).unwrap();
        let out = ccd_sweep_mode(&x, &mut model, Mode::Term, None, 1e-12).unwrap();
        assert_eq!(out.skipped_components, vec![true]);
        assert_eq!(model.u().get(0, 0), 1.0);
    }

    #[test]
    fn select_active_threshold_arithmetic() {
        let config = SolverConfig::new(1);
        let prev = vec![vec![0.5, 0.004, 0.2]];
        let set = select_active(&prev, 2, &config);
        assert_eq!(set.mask(0), &[true, false, true]);

        let cold = select_active(&prev, 1, &config);
        assert!(cold.is_full());

        let refresh = select_active(&prev, 11, &config);
        assert!(refresh.is_full());

        let zeros = select_active(&[vec![0.0; 3], vec![0.0; 2]], 3, &config);
        assert!(zeros.is_empty());
    }

    #[test]
    fn select_active_never_empty_with_movement() {
        let config = SolverConfig::new(1);
        let set = select_active(&[vec![0.0, 1e-300, 0.0]], 4, &config);
        assert!(!set.is_empty());
    }

    #[test]
    fn single_entry_rank_one_converges() {
        let x = SparseTensor3::build([3, 2, 4], [([2, 1, 3], 5.0)]).unwrap();
        let mut config = SolverConfig::new(1);
        config.rel_tol = 0.0;
        config.max_iters = 500;
        let (model, trace) = factorize(&x, &config).unwrap();
        assert!((model.reconstruct_entry(2, 1, 3).unwrap() - 5.0).abs() < 1e-6);
        assert!(trace.final_objective() < 1e-10);
    }

    #[test]
    fn factorize_rejects_empty_and_bad_config() {
        let x = SparseTensor3::empty([2, 2, 2]).unwrap();
        assert!(matches!(factorize(&x, &SolverConfig::new(1)), Err(Error::Input(_))));
        let y = SparseTensor3::build([2, 2, 2], [([0, 0, 0], 1.0)]).unwrap();
        assert!(matches!(factorize(&y, &SolverConfig::new(0)), Err(Error::Input(_))));
        let mut c = SolverConfig::new(1);
        c.sacd_threshold = 1.5;
        assert!(factorize(&y, &c).is_err());
    }

    #[test]
    fn objective_examples() {
        let x = SparseTensor3::build([1, 1, 1], [([0, 0, 0], 3.0)]).unwrap();
        let zero = CpModel::from_factors(scalar(0.0), scalar(0.0), scalar(0.0)).unwrap();
        assert_eq!(objective(&x, &zero).unwrap(), 9.0);
        let exact = CpModel::from_factors(scalar(3.0), scalar(1.0), scalar(1.0)).unwrap();
        assert_eq!(objective(&x, &exact).unwrap(), 0.0);
    }

    #[test]
    fn model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = init_factors([4, 3, 2], 2, 9).unwrap();
        let meta = ModelMeta {
            dims: [4, 3, 2],
            rank: 2,
            algorithm: Some(Algorithm::Sacd),
            seed: Some(9),
            iterations: 0,
            final_objective: Some(1.5),
        };
        write_model(dir.path(), &model, &meta).unwrap();
        let (back, meta_back) = read_model(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta_back, meta);
    }

    #[test]
    fn trace_csv_header_and_zeroed_timing() {
        let x = SparseTensor3::build([2, 2, 2], [([0, 0, 0], 1.0), ([1, 1, 1], 2.0)]).unwrap();
        let mut config = SolverConfig::new(2);
        config.max_iters = 3;
        let (_, trace) = factorize(&x, &config).unwrap();
        let csv = trace.to_csv(false);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,objective,rel_change,active_frac_u,active_frac_l,active_frac_t,seconds"
        );
        assert!(lines.all(|l| l.ends_with(",0")));
    }
}
