//! Projected coordinate-descent engine shared by the CP and NMF solvers.
//!
//! A problem exposes its factor matrices and, per factor, the two terms of
//! the least-squares gradient: the data term `G` (an MTTKRP or a sparse
//! matrix product) and the Hessian block `H` of the fixed factors. The
//! engine owns iteration, element selection, dead-component reseeding,
//! convergence and tracing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ntf::{
    select_active, ActiveSet, Algorithm, IterationRecord, Merge, Reseed, SolverConfig, SolverTrace, StopReason,
};
use crate::tensor::{DenseMatrix, FactorMatrix};

pub(crate) trait CdProblem {
    fn labels(&self) -> &'static [&'static str];
    fn factor(&self, k: usize) -> &FactorMatrix;
    fn factor_mut(&mut self, k: usize) -> &mut FactorMatrix;
    /// Data term `G` for factor `k`; rows outside `rows` may be left zero.
    fn data_term(&self, k: usize, rows: Option<&[bool]>) -> Result<DenseMatrix>;
    /// Hessian block `H` (R×R) of the factors other than `k`.
    fn hessian(&self, k: usize) -> Result<DenseMatrix>;
    fn objective(&self) -> Result<f64>;
}

/// Half the partial derivative of the squared error with respect to
/// element `(i, r)`: `−G[i,r] + Σ_s F[i,s]·H[s,r]`.
#[inline]
pub(crate) fn gradient_numerator(g_row: &[f64], f_row: &[f64], h: &DenseMatrix, r: usize) -> f64 {
    let mut acc = -g_row[r];
    for (s, f) in f_row.iter().enumerate() {
        acc += f * h.get(s, r);
    }
    acc
}

/// Uniform draw on (0, 1].
pub(crate) fn positive_uniform(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) struct SweepOutcome {
    pub deltas: Vec<f64>,
    /// Components whose `H[r,r]` fell under the guard.
    pub skipped: Vec<bool>,
}

/// One projected coordinate-Newton pass over every active element of
/// `factor`. Rows are independent given `g` and `h`, so they run in
/// parallel; within a row, columns are updated in ascending order using the
/// values already written earlier in that row.
pub(crate) fn sweep_factor(
    factor: &mut FactorMatrix,
    g: &DenseMatrix,
    h: &DenseMatrix,
    active: Option<&[bool]>,
    epsilon_guard: f64,
) -> std::result::Result<SweepOutcome, (usize, usize, String)> {
    let rank = factor.rank();
    let skipped: Vec<bool> = (0..rank).map(|r| h.get(r, r) < epsilon_guard).collect();
    let mut deltas = vec![0.0; factor.as_slice().len()];

    let failure = factor
        .as_mut_slice()
        .par_chunks_mut(rank)
        .zip(deltas.par_chunks_mut(rank))
        .enumerate()
        .with_min_len(32)
        .filter_map(|(i, (row, row_deltas))| {
            let g_row = g.row(i);
            for r in 0..rank {
                if skipped[r] || active.is_some_and(|mask| !mask[i * rank + r]) {
                    continue;
                }
                let old = row[r];
                let numerator = gradient_numerator(g_row, row, h, r);
                let new = (old - numerator / h.get(r, r)).max(0.0);
                if !new.is_finite() {
                    return Some((i, r, format!("update produced {new} (gradient {numerator})")));
                }
                row[r] = new;
                row_deltas[r] = (new - old).abs();
            }
            None
        })
        .min_by_key(|(i, r, _)| (*i, *r));

    match failure {
        Some(f) => Err(f),
        None => Ok(SweepOutcome { deltas, skipped }),
    }
}

fn row_mask(active: &[bool], rank: usize) -> Vec<bool> {
    active.chunks(rank).map(|row| row.iter().any(|a| *a)).collect()
}

/// A component gives up after this many reseeds and stays at zero.
const MAX_RESEEDS_PER_COMPONENT: usize = 5;

/// Components with an identically zero column in some factor.
fn dead_components<P: CdProblem>(problem: &P, rank: usize) -> Vec<bool> {
    (0..rank)
        .map(|r| (0..problem.labels().len()).any(|k| problem.factor(k).column_norm_sq(r) == 0.0))
        .collect()
}

/// Refreshes the live columns of each dead component with uniform draws.
///
/// The smallest column is kept at exactly zero, so the component's
/// contribution to the reconstruction stays zero and the objective does not
/// move; the next update of that column then sees fresh directions.
fn reseed_dead<P: CdProblem>(problem: &mut P, dead: &[bool], rng: &mut ChaCha8Rng, iteration: usize) -> Vec<Reseed> {
    let count = problem.labels().len();
    let mut events = Vec::new();
    for (r, _) in dead.iter().enumerate().filter(|(_, d)| **d) {
        let norms: Vec<f64> = (0..count).map(|k| problem.factor(k).column_norm_sq(r)).collect();
        let keep = (0..count)
            .min_by(|&a, &b| norms[a].total_cmp(&norms[b]))
            .unwrap_or(0);
        let rows = problem.factor(keep).rows();
        problem.factor_mut(keep).set_column(r, &vec![0.0; rows]);
        let mut modes = Vec::new();
        for k in (0..count).filter(|&k| k != keep) {
            let rows = problem.factor(k).rows();
            let column: Vec<f64> = (0..rows).map(|_| positive_uniform(rng)).collect();
            problem.factor_mut(k).set_column(r, &column);
            modes.push(problem.labels()[k].to_string());
        }
        log::warn!("iteration {iteration}: component {r} stayed zero for a full iteration; reseeded {modes:?}");
        events.push(Reseed {
            iteration,
            component: r,
            factors: modes,
        });
    }
    events
}

/// Column cosine above which two components count as duplicates.
const DUPLICATE_COSINE: f64 = 0.9;

fn column_cosine(f: &FactorMatrix, r: usize, s: usize) -> f64 {
    let (mut dot, mut nr, mut ns) = (0.0, 0.0, 0.0);
    for row in f.as_slice().chunks(f.rank()) {
        dot += row[r] * row[s];
        nr += row[r] * row[r];
        ns += row[s] * row[s];
    }
    if nr == 0.0 || ns == 0.0 {
        0.0
    } else {
        dot / (nr.sqrt() * ns.sqrt())
    }
}

/// The pair of live components most parallel across all factors, if its
/// smallest column cosine reaches [`DUPLICATE_COSINE`].
fn most_duplicated<P: CdProblem>(problem: &P, rank: usize) -> Option<(usize, usize, f64)> {
    let count = problem.labels().len();
    let mut best: Option<(usize, usize, f64)> = None;
    for r in 0..rank {
        for s in r + 1..rank {
            let c = (0..count)
                .map(|k| column_cosine(problem.factor(k), r, s))
                .fold(f64::INFINITY, f64::min);
            if c >= DUPLICATE_COSINE && best.is_none_or(|(_, _, b)| c > b) {
                best = Some((r, s, c));
            }
        }
    }
    best
}

/// Folds component `s` into `r` and reseeds `s` with one zero column.
///
/// Each merged column is the magnitude-weighted mean of the two unit
/// columns, and the merged magnitude is the sum of both.
fn merge_pair<P: CdProblem>(problem: &mut P, r: usize, s: usize, rng: &mut ChaCha8Rng) {
    let count = problem.labels().len();
    let norms = |p: &P, c: usize| -> Vec<f64> { (0..count).map(|k| p.factor(k).column_norm_sq(c).sqrt()).collect() };
    let (nr, ns) = (norms(problem, r), norms(problem, s));
    let (mr, ms) = (nr.iter().product::<f64>(), ns.iter().product::<f64>());
    let per_factor = (mr + ms).powf(1.0 / count as f64);
    for k in 0..count {
        let f = problem.factor(k);
        let mut merged: Vec<f64> = (0..f.rows())
            .map(|i| mr * f.get(i, r) / nr[k] + ms * f.get(i, s) / ns[k])
            .collect();
        let len = merged.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut merged {
            *v *= per_factor / len;
        }
        problem.factor_mut(k).set_column(r, &merged);
    }
    let rows = problem.factor(0).rows();
    problem.factor_mut(0).set_column(s, &vec![0.0; rows]);
    for k in 1..count {
        let rows = problem.factor(k).rows();
        let column: Vec<f64> = (0..rows).map(|_| positive_uniform(rng)).collect();
        problem.factor_mut(k).set_column(s, &column);
    }
}

/// A merge on probation: kept only if the iteration after it ends no
/// higher than the objective before it.
struct MergeTrial {
    saved: Vec<FactorMatrix>,
    merge: Merge,
}

pub(crate) fn run<P: CdProblem>(problem: &mut P, config: &SolverConfig) -> Result<SolverTrace> {
    let mut trace = SolverTrace::default();
    run_into(problem, config, &mut trace)?;
    Ok(trace)
}

/// Like [`run`], but fills a caller-owned trace so that the iterations done
/// before a failure survive it.
pub(crate) fn run_into<P: CdProblem>(problem: &mut P, config: &SolverConfig, trace: &mut SolverTrace) -> Result<()> {
    config.validate()?;
    let labels = problem.labels();
    let count = labels.len();
    let rank = config.rank;
    // Reseeds draw from a stream keyed off the run seed, distinct from init.
    let mut rng = seeded_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    *trace = SolverTrace {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        ..SolverTrace::default()
    };
    let initial = problem.objective()?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    *trace = SolverTrace {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        initial_objective: initial,
        records: Vec::new(),
        reseeds: Vec::new(),
        merges: Vec::new(),
        stop_reason: StopReason::MaxIterations,
    };

    let mut prev_objective = initial;
    let mut prev_deltas: Vec<Vec<f64>> = Vec::new();
    let mut force_full = true;
    let mut dead_before = dead_components(problem, rank);
    let mut reseed_counts = vec![0usize; rank];
    let mut trial: Option<MergeTrial> = None;

    for iteration in 1..=config.max_iters {
        let start = Instant::now();
        let active = match config.algorithm {
            Algorithm::Ccd => None,
            Algorithm::Sacd if force_full => None,
            Algorithm::Sacd => {
                let set = select_active(&prev_deltas, iteration, config);
                if set.is_empty() {
                    if last_was_full_sweep(trace) {
                        trace.stop_reason = StopReason::Stationary;
                        break;
                    }
                    None
                } else if set.is_full() {
                    None
                } else {
                    Some(set)
                }
            }
        };
        let full_sweep = active.is_none();
        force_full = false;

        let mut deltas = Vec::with_capacity(count);
        let mut fractions = Vec::with_capacity(count);
        for k in 0..count {
            let mask = active.as_ref().map(|a| a.mask(k));
            let rows = mask.map(|m| row_mask(m, rank));
            let g = problem.data_term(k, rows.as_deref())?;
            let h = problem.hessian(k)?;
            let outcome = sweep_factor(problem.factor_mut(k), &g, &h, mask, config.epsilon_guard).map_err(
                |(row, column, detail)| Error::Solver {
                    iteration,
                    mode: labels[k].to_string(),
                    row,
                    column,
                    detail,
                },
            )?;
            fractions.push(match &active {
                Some(a) => a.fraction(k),
                None => 1.0,
            });
            deltas.push(outcome.deltas);
        }

        let dead_now = dead_components(problem, rank);
        let stayed_dead: Vec<bool> = (0..rank)
            .map(|r| dead_now[r] && dead_before[r] && reseed_counts[r] < MAX_RESEEDS_PER_COMPONENT)
            .collect();
        if stayed_dead.iter().any(|d| *d) {
            let events = reseed_dead(problem, &stayed_dead, &mut rng, iteration);
            for e in &events {
                reseed_counts[e.component] += 1;
            }
            force_full = true;
            trace.reseeds.extend(events);
        }
        dead_before = dead_components(problem, rank);

        let objective = problem.objective()?;
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective(iteration));
        }
        if let Some(t) = trial.take() {
            if objective > t.merge.objective_before {
                // The merge did not pay off within one iteration: undo it and
                // stop at the point it started from.
                for (k, f) in t.saved.into_iter().enumerate() {
                    *problem.factor_mut(k) = f;
                }
                trace.reseeds.retain(|r| r.iteration != iteration);
                trace.stop_reason = StopReason::Converged;
                break;
            }
            trace.merges.push(Merge {
                objective_after: objective,
                ..t.merge
            });
        }
        let rel_change = if prev_objective > 0.0 {
            (prev_objective - objective).abs() / prev_objective
        } else {
            0.0
        };
        trace.records.push(IterationRecord {
            iteration,
            objective,
            rel_change,
            active_fraction: fractions,
            full_sweep,
            seconds: start.elapsed().as_secs_f64(),
        });
        prev_objective = objective;
        prev_deltas = deltas;

        if objective == 0.0 {
            trace.stop_reason = StopReason::ExactFit;
            break;
        }
        if rel_change < config.rel_tol && !force_full {
            // A selective sweep that barely moves only means the active
            // elements have saturated; confirm with a full sweep first.
            if full_sweep {
                if config.merge_duplicates && iteration < config.max_iters && trace.merges.len() < 2 * rank {
                    if let Some((r, s, cosine)) = most_duplicated(problem, rank) {
                        let saved = (0..count).map(|k| problem.factor(k).clone()).collect();
                        merge_pair(problem, r, s, &mut rng);
                        log::info!("iteration {iteration}: trying to fold component {s} into {r} (cosine {cosine:.6})");
                        trial = Some(MergeTrial {
                            saved,
                            merge: Merge {
                                iteration: iteration + 1,
                                kept: r,
                                freed: s,
                                cosine,
                                objective_before: objective,
                                objective_after: objective,
                            },
                        });
                        dead_before = dead_components(problem, rank);
                        force_full = true;
                        continue;
                    }
                }
                trace.stop_reason = StopReason::Converged;
                break;
            }
            force_full = true;
        }
    }
    Ok(())
}

fn last_was_full_sweep(trace: &SolverTrace) -> bool {
    trace.records.last().is_some_and(|r| r.full_sweep)
}

impl ActiveSet {
    pub(crate) fn is_full(&self) -> bool {
        self.masks().iter().all(|m| m.iter().all(|a| *a))
    }
}

