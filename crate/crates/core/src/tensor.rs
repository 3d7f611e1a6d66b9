//! Coordinate-format sparse 3-way tensors, nonnegative factor matrices and
//! the multilinear kernels shared by every solver.
//!
//! Modes are always ordered (term, location, time). A tensor is immutable
//! once built; each mode carries a row-grouped permutation of the entries so
//! that MTTKRP can stream one output row at a time without materializing a
//! matricization or a Khatri–Rao product.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Term,
    Location,
    Time,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Term, Mode::Location, Mode::Time];

    pub fn index(self) -> usize {
        match self {
            Mode::Term => 0,
            Mode::Location => 1,
            Mode::Time => 2,
        }
    }

    /// 1-based mode number, as used for the matricizations X₁, X₂, X₃.
    pub fn from_number(number: usize) -> Result<Mode> {
        match number {
            1 => Ok(Mode::Term),
            2 => Ok(Mode::Location),
            3 => Ok(Mode::Time),
            _ => Err(Error::Index(format!("mode {number} (expected 1, 2 or 3)"))),
        }
    }

    /// The two fixed modes, in the order the update rules pair them:
    /// (T, L) for U, (T, U) for L and (L, U) for T.
    pub fn others(self) -> (Mode, Mode) {
        match self {
            Mode::Term => (Mode::Time, Mode::Location),
            Mode::Location => (Mode::Time, Mode::Term),
            Mode::Time => (Mode::Location, Mode::Term),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Term => "term",
            Mode::Location => "location",
            Mode::Time => "time",
        })
    }
}

/// A single nonzero cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub coord: [usize; 3],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct ModeIndex {
    /// Entry positions grouped by this mode's index, ascending within a row.
    order: Vec<u32>,
    /// `row_ptr[i]..row_ptr[i + 1]` is the slice of `order` for row `i`.
    row_ptr: Vec<usize>,
}

/// Sparse 3-way count tensor in coordinate format.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor3 {
    dims: [usize; 3],
    entries: Vec<Entry>,
    by_mode: [ModeIndex; 3],
}

impl SparseTensor3 {
    /// Builds a tensor from raw `(coord, value)` pairs.
    ///
    /// Duplicate coordinates are summed, zero cells dropped and the result
    /// sorted lexicographically, so any permutation of the input yields the
    /// same tensor.
    pub fn build<I>(dims: [usize; 3], raw: I) -> Result<Self>
    where
        I: IntoIterator<Item = ([usize; 3], f64)>,
    {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("tensor dims must be positive, got {dims:?}")));
        }
        let mut cells: Vec<([usize; 3], f64)> = Vec::new();
        for (coord, value) in raw {
            if (0..3).any(|k| coord[k] >= dims[k]) {
                return Err(Error::Index(format!(
                    "entry ({}, {}, {}) outside dims {:?}",
                    coord[0], coord[1], coord[2], dims
                )));
            }
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Value(format!(
                    "entry ({}, {}, {}) has value {value}; counts must be finite and nonnegative",
                    coord[0], coord[1], coord[2]
                )));
            }
            cells.push((coord, value));
        }
        // Stable sort keeps equal coordinates in input order, but the sum is
        // taken over values sorted by bit pattern so that it does not depend
        // on the input permutation either.
        cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let mut entries: Vec<Entry> = Vec::with_capacity(cells.len());
        for (coord, value) in cells {
            match entries.last_mut() {
                Some(last) if last.coord == coord => last.value += value,
                _ => entries.push(Entry { coord, value }),
            }
        }
        entries.retain(|e| e.value > 0.0);
        if entries.len() > u32::MAX as usize {
            return Err(Error::Shape("more than 2^32 nonzeros".into()));
        }
        Ok(Self::from_sorted(dims, entries))
    }

    /// An all-zero tensor.
    pub fn empty(dims: [usize; 3]) -> Result<Self> {
        Self::build(dims, std::iter::empty())
    }

    fn from_sorted(dims: [usize; 3], entries: Vec<Entry>) -> Self {
        let by_mode = [0, 1, 2].map(|k| {
            let mut row_ptr = vec![0usize; dims[k] + 1];
            for e in &entries {
                row_ptr[e.coord[k] + 1] += 1;
            }
            for i in 0..dims[k] {
                row_ptr[i + 1] += row_ptr[i];
            }
            let mut next = row_ptr.clone();
            let mut order = vec![0u32; entries.len()];
            for (pos, e) in entries.iter().enumerate() {
                let row = e.coord[k];
                order[next[row]] = pos as u32;
                next[row] += 1;
            }
            ModeIndex { order, row_ptr }
        });
        Self {
            dims,
            entries,
            by_mode,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn dim(&self, mode: Mode) -> usize {
        self.dims[mode.index()]
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted lexicographically by (term, location, time).
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, coord: [usize; 3]) -> f64 {
        self.entries
            .binary_search_by(|e| e.coord.cmp(&coord))
            .map(|i| self.entries[i].value)
            .unwrap_or(0.0)
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|e| e.value * e.value).sum()
    }

    /// Sum of all cell values.
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.value).sum()
    }

    fn row_entries(&self, mode: Mode, row: usize) -> impl Iterator<Item = &Entry> + '_ {
        let index = &self.by_mode[mode.index()];
        index.order[index.row_ptr[row]..index.row_ptr[row + 1]]
            .iter()
            .map(move |&pos| &self.entries[pos as usize])
    }
}

/// Row/column position of a cell in the mode-`n` matricization.
///
/// Mode 1: `(m, n + o·N)`, mode 2: `(n, m + o·M)`, mode 3: `(o, m + n·M)`.
pub fn matricize_index(mode: Mode, coord: [usize; 3], dims: [usize; 3]) -> Result<(usize, usize)> {
    if (0..3).any(|k| coord[k] >= dims[k]) {
        return Err(Error::Index(format!("{coord:?} outside dims {dims:?}")));
    }
    let [m, n, o] = coord;
    let [dm, dn, _] = dims;
    Ok(match mode {
        Mode::Term => (m, n + o * dn),
        Mode::Location => (n, m + o * dm),
        Mode::Time => (o, m + n * dm),
    })
}

/// Dense row-major real table, used for kernel outputs (MTTKRP, Gram).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}×{cols} table",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Nonnegative `rows × rank` factor matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    rank: usize,
    values: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(rows: usize, rank: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || rank == 0 {
            return Err(Error::Shape(format!("factor matrix must be nonempty, got {rows}×{rank}")));
        }
        if values.len() != rows * rank {
            return Err(Error::Shape(format!(
                "{} values for a {rows}×{rank} factor matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Value(format!(
                "factor entry ({}, {}) = {} is not finite and nonnegative",
                pos / rank,
                pos % rank,
                values[pos]
            )));
        }
        Ok(Self { rows, rank, values })
    }

    pub fn zeros(rows: usize, rank: usize) -> Self {
        Self {
            rows,
            rank,
            values: vec![0.0; rows * rank],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let rank = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != rank) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), rank, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, i: usize, r: usize) -> f64 {
        self.values[i * self.rank + r]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.rank..(i + 1) * self.rank]
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, r)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for solvers; callers keep entries finite and ≥ 0.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn set_column(&mut self, r: usize, column: &[f64]) {
        for (i, v) in column.iter().enumerate() {
            self.values[i * self.rank + r] = *v;
        }
    }

    pub(crate) fn scale_column(&mut self, r: usize, factor: f64) {
        for i in 0..self.rows {
            self.values[i * self.rank + r] *= factor;
        }
    }

    pub fn column_l1(&self, r: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, r)).sum()
    }

    pub fn column_norm_sq(&self, r: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, r).powi(2)).sum()
    }

    /// `AᵀA`, an R×R table.
    pub fn gram(&self) -> DenseMatrix {
        let rank = self.rank;
        let mut out = DenseMatrix::zeros(rank, rank);
        for i in 0..self.rows {
            let row = self.row(i);
            for r in 0..rank {
                for s in r..rank {
                    out.values[r * rank + s] += row[r] * row[s];
                }
            }
        }
        for r in 0..rank {
            for s in 0..r {
                out.values[r * rank + s] = out.values[s * rank + r];
            }
        }
        out
    }
}

/// CP model `Σ_r λ_r · u_r ∘ l_r ∘ t_r` with nonnegative factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    weights: Vec<f64>,
    factors: [FactorMatrix; 3],
}

impl CpModel {
    pub fn new(weights: Vec<f64>, u: FactorMatrix, l: FactorMatrix, t: FactorMatrix) -> Result<Self> {
        let rank = weights.len();
        if rank == 0 {
            return Err(Error::Shape("rank must be at least 1".into()));
        }
        for (name, f) in [("U", &u), ("L", &l), ("T", &t)] {
            if f.rank() != rank {
                return Err(Error::Shape(format!(
                    "{name} has rank {} but λ has {rank} weights",
                    f.rank()
                )));
            }
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Value(format!("component weight {w} is not finite and nonnegative")));
        }
        Ok(Self {
            weights,
            factors: [u, l, t],
        })
    }

    /// Model with λ ≡ 1.
    pub fn from_factors(u: FactorMatrix, l: FactorMatrix, t: FactorMatrix) -> Result<Self> {
        let rank = u.rank();
        Self::new(vec![1.0; rank], u, l, t)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.factors[k].rows())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self, mode: Mode) -> &FactorMatrix {
        &self.factors[mode.index()]
    }

    pub fn u(&self) -> &FactorMatrix {
        &self.factors[0]
    }

    pub fn l(&self) -> &FactorMatrix {
        &self.factors[1]
    }

    pub fn t(&self) -> &FactorMatrix {
        &self.factors[2]
    }

    pub(crate) fn factor_mut(&mut self, mode: Mode) -> &mut FactorMatrix {
        &mut self.factors[mode.index()]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Folds λ into the factor of `mode`, leaving λ ≡ 1.
    pub(crate) fn absorb_weights(&mut self, mode: Mode) {
        for r in 0..self.rank() {
            let w = self.weights[r];
            if w != 1.0 {
                self.factors[mode.index()].scale_column(r, w);
                self.weights[r] = 1.0;
            }
        }
    }

    /// Scales column `r` of `mode` by `c > 0` and λ_r by `1/c`.
    pub fn rebalance(&mut self, mode: Mode, r: usize, c: f64) -> Result<()> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Value(format!("rebalance factor {c} must be positive")));
        }
        if r >= self.rank() {
            return Err(Error::Index(format!("component {r} of rank {}", self.rank())));
        }
        self.factors[mode.index()].scale_column(r, c);
        self.weights[r] /= c;
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<f64>, [FactorMatrix; 3]) {
        (self.weights, self.factors)
    }

    /// `Σ_r λ_r U[m,r] L[n,r] T[o,r]`.
    pub fn reconstruct_entry(&self, m: usize, n: usize, o: usize) -> Result<f64> {
        let dims = self.dims();
        if m >= dims[0] || n >= dims[1] || o >= dims[2] {
            return Err(Error::Index(format!("({m}, {n}, {o}) outside dims {dims:?}")));
        }
        Ok(self.eval(m, n, o))
    }

    fn eval(&self, m: usize, n: usize, o: usize) -> f64 {
        let (u, l, t) = (self.u().row(m), self.l().row(n), self.t().row(o));
        (0..self.rank())
            .map(|r| self.weights[r] * u[r] * l[r] * t[r])
            .sum()
    }

    /// `‖X̂‖² = λᵀ(UᵀU ∗ LᵀL ∗ TᵀT)λ`.
    pub fn norm_sq(&self) -> f64 {
        let rank = self.rank();
        let (gu, gl, gt) = (self.u().gram(), self.l().gram(), self.t().gram());
        let mut total = 0.0;
        for r in 0..rank {
            for s in 0..rank {
                total += self.weights[r] * self.weights[s] * gu.get(r, s) * gl.get(r, s) * gt.get(r, s);
            }
        }
        total.max(0.0)
    }
}

/// `(AᵀA) ∗ (BᵀB)`.
pub fn gram_hadamard(a: &FactorMatrix, b: &FactorMatrix) -> Result<DenseMatrix> {
    if a.rank() != b.rank() {
        return Err(Error::Shape(format!("ranks {} and {} differ", a.rank(), b.rank())));
    }
    let (ga, gb) = (a.gram(), b.gram());
    let values = ga.values.iter().zip(&gb.values).map(|(x, y)| x * y).collect();
    DenseMatrix::from_vec(a.rank(), a.rank(), values)
}

/// Matricized tensor times Khatri–Rao product, `X_(mode) · (A ⊙ B)`.
///
/// `a` and `b` are the fixed factors in update-rule order (see
/// [`Mode::others`]): mode 1 takes (T, L), mode 2 (T, U), mode 3 (L, U).
/// Rows are computed independently from the tensor's per-mode grouping, so
/// the result is bit-identical for any thread count.
pub fn mttkrp(x: &SparseTensor3, mode: Mode, a: &FactorMatrix, b: &FactorMatrix) -> Result<DenseMatrix> {
    mttkrp_impl(x, mode, a, b, None)
}

/// [`mttkrp`] restricted to the rows flagged in `rows`; other rows are zero.
pub fn mttkrp_rows(
    x: &SparseTensor3,
    mode: Mode,
    a: &FactorMatrix,
    b: &FactorMatrix,
    rows: &[bool],
) -> Result<DenseMatrix> {
    if rows.len() != x.dim(mode) {
        return Err(Error::Shape(format!(
            "row mask has {} rows, {mode} mode has {}",
            rows.len(),
            x.dim(mode)
        )));
    }
    mttkrp_impl(x, mode, a, b, Some(rows))
}

fn mttkrp_impl(
    x: &SparseTensor3,
    mode: Mode,
    a: &FactorMatrix,
    b: &FactorMatrix,
    wanted: Option<&[bool]>,
) -> Result<DenseMatrix> {
    let (mode_a, mode_b) = mode.others();
    if a.rank() != b.rank() {
        return Err(Error::Shape(format!("ranks {} and {} differ", a.rank(), b.rank())));
    }
    for (m, f) in [(mode_a, a), (mode_b, b)] {
        if f.rows() != x.dim(m) {
            return Err(Error::Shape(format!(
                "{m} factor has {} rows, tensor {m} mode has {}",
                f.rows(),
                x.dim(m)
            )));
        }
    }
    let rank = a.rank();
    let rows = x.dim(mode);
    let (ka, kb) = (mode_a.index(), mode_b.index());
    let mut out = DenseMatrix::zeros(rows, rank);
    out.values
        .par_chunks_mut(rank)
        .with_min_len(64)
        .enumerate()
        .for_each(|(i, acc)| {
            if wanted.is_some_and(|w| !w[i]) {
                return;
            }
            for e in x.row_entries(mode, i) {
                let ra = a.row(e.coord[ka]);
                let rb = b.row(e.coord[kb]);
                for r in 0..rank {
                    acc[r] += e.value * ra[r] * rb[r];
                }
            }
        });
    Ok(out)
}

fn check_model_dims(x: &SparseTensor3, model: &CpModel) -> Result<()> {
    if x.dims() != model.dims() {
        return Err(Error::Shape(format!(
            "tensor dims {:?} but model dims {:?}",
            x.dims(),
            model.dims()
        )));
    }
    Ok(())
}

/// `⟨X, X̂⟩` over the nonzeros of `X`.
pub fn inner_product(x: &SparseTensor3, model: &CpModel) -> Result<f64> {
    check_model_dims(x, model)?;
    Ok(x.entries
        .iter()
        .map(|e| e.value * model.eval(e.coord[0], e.coord[1], e.coord[2]))
        .sum())
}

/// `‖X − X̂‖²` over all M·N·O cells, via `‖X‖² − 2⟨X, X̂⟩ + ‖X̂‖²`.
pub fn residual_sq(x: &SparseTensor3, model: &CpModel) -> Result<f64> {
    let inner = inner_product(x, model)?;
    Ok((x.frobenius_sq() - 2.0 * inner + model.norm_sq()).max(0.0))
}
