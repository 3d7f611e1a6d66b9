//! NMF baseline on the two matricized views of the corpus tensor:
//! (term × time) and (term × location).
//!
//! The solver is the same projected coordinate descent as the CP solver,
//! restricted to two factors, so stopping rules and traces compare directly.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cd::{self, positive_uniform, seeded_rng, CdProblem};
use crate::error::{Error, Result};
use crate::io;
use crate::ntf::{Algorithm, SolverConfig, SolverTrace};
use crate::tensor::{DenseMatrix, FactorMatrix, SparseTensor3};

/// Sparse nonnegative matrix, entries deduplicated and sorted by (row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dims: (usize, usize),
    entries: Vec<(usize, usize, f64)>,
    col_order: Vec<u32>,
    col_ptr: Vec<usize>,
    row_ptr: Vec<usize>,
}

impl SparseMatrix {
    pub fn build<I>(dims: (usize, usize), raw: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let (rows, cols) = dims;
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix dims must be positive, got {dims:?}")));
        }
        let mut cells = Vec::new();
        for (i, j, v) in raw {
            if i >= rows || j >= cols {
                return Err(Error::Index(format!("entry ({i}, {j}) outside dims {dims:?}")));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Value(format!("entry ({i}, {j}) has value {v}")));
            }
            cells.push((i, j, v));
        }
        cells.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(cells.len());
        for (i, j, v) in cells {
            match entries.last_mut() {
                Some(last) if (last.0, last.1) == (i, j) => last.2 += v,
                _ => entries.push((i, j, v)),
            }
        }
        entries.retain(|e| e.2 > 0.0);

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_ptr = vec![0usize; cols + 1];
        for &(i, j, _) in &entries {
            row_ptr[i + 1] += 1;
            col_ptr[j + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        for j in 0..cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_order = vec![0u32; entries.len()];
        for (pos, &(_, j, _)) in entries.iter().enumerate() {
            col_order[next[j]] = pos as u32;
            next[j] += 1;
        }
        Ok(Self {
            dims,
            entries,
            col_order,
            col_ptr,
            row_ptr,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .map(|p| self.entries[p].2)
            .unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum()
    }

    /// `M · F` for `F` with `cols` rows.
    pub fn mul(&self, f: &FactorMatrix) -> Result<DenseMatrix> {
        self.product(f, false, None)
    }

    /// `Mᵀ · F` for `F` with `rows` rows.
    pub fn tmul(&self, f: &FactorMatrix) -> Result<DenseMatrix> {
        self.product(f, true, None)
    }

    fn product(&self, f: &FactorMatrix, transpose: bool, wanted: Option<&[bool]>) -> Result<DenseMatrix> {
        let (rows, cols) = self.dims;
        let (out_rows, inner) = if transpose { (cols, rows) } else { (rows, cols) };
        if f.rows() != inner {
            return Err(Error::Shape(format!(
                "factor has {} rows, product needs {inner}",
                f.rows()
            )));
        }
        let rank = f.rank();
        let mut out = DenseMatrix::zeros(out_rows, rank);
        out.as_mut_slice()
            .par_chunks_mut(rank)
            .with_min_len(64)
            .enumerate()
            .for_each(|(i, acc)| {
                if wanted.is_some_and(|w| !w[i]) {
                    return;
                }
                if transpose {
                    for &pos in &self.col_order[self.col_ptr[i]..self.col_ptr[i + 1]] {
                        let (row, _, v) = self.entries[pos as usize];
                        for (a, x) in acc.iter_mut().zip(f.row(row)) {
                            *a += v * x;
                        }
                    }
                } else {
                    for &(_, col, v) in &self.entries[self.row_ptr[i]..self.row_ptr[i + 1]] {
                        for (a, x) in acc.iter_mut().zip(f.row(col)) {
                            *a += v * x;
                        }
                    }
                }
            });
        Ok(out)
    }
}

/// (term × time) marginal: `M[m, o] = Σ_n X[m, n, o]`.
pub fn flatten_time(x: &SparseTensor3) -> SparseMatrix {
    let [m, _, o] = x.dims();
    SparseMatrix::build((m, o), x.entries().iter().map(|e| (e.coord[0], e.coord[2], e.value)))
        .expect("marginal of a valid tensor is valid")
}

/// (term × location) marginal: `M[m, n] = Σ_o X[m, n, o]`.
pub fn flatten_location(x: &SparseTensor3) -> SparseMatrix {
    let [m, n, _] = x.dims();
    SparseMatrix::build((m, n), x.entries().iter().map(|e| (e.coord[0], e.coord[1], e.value)))
        .expect("marginal of a valid tensor is valid")
}

/// `M ≈ W·Hᵀ` with nonnegative `W` (rows × R) and `H` (cols × R).
#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    pub w: FactorMatrix,
    pub h: FactorMatrix,
}

impl NmfModel {
    pub fn new(w: FactorMatrix, h: FactorMatrix) -> Result<Self> {
        if w.rank() != h.rank() {
            return Err(Error::Shape(format!("W rank {} vs H rank {}", w.rank(), h.rank())));
        }
        Ok(Self { w, h })
    }

    pub fn rank(&self) -> usize {
        self.w.rank()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.w.row(i).iter().zip(self.h.row(j)).map(|(a, b)| a * b).sum()
    }

    /// `‖M − W·Hᵀ‖²` via `‖M‖² − 2⟨M, WHᵀ⟩ + ⟨WᵀW, HᵀH⟩`.
    pub fn residual_sq(&self, mx: &SparseMatrix) -> Result<f64> {
        if mx.dims() != (self.w.rows(), self.h.rows()) {
            return Err(Error::Shape(format!(
                "matrix {:?} vs model {}×{}",
                mx.dims(),
                self.w.rows(),
                self.h.rows()
            )));
        }
        let inner: f64 = mx.entries().iter().map(|&(i, j, v)| v * self.entry(i, j)).sum();
        let (gw, gh) = (self.w.gram(), self.h.gram());
        let model_sq: f64 = gw.as_slice().iter().zip(gh.as_slice()).map(|(a, b)| a * b).sum();
        Ok((mx.frobenius_sq() - 2.0 * inner + model_sq.max(0.0)).max(0.0))
    }
}

pub fn init_nmf(dims: (usize, usize), rank: usize, seed: u64) -> Result<NmfModel> {
    if rank == 0 {
        return Err(Error::Input("rank must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut draw = |rows: usize| {
        let values = (0..rows * rank).map(|_| positive_uniform(&mut rng)).collect();
        FactorMatrix::new(rows, rank, values)
    };
    let w = draw(dims.0)?;
    let h = draw(dims.1)?;
    NmfModel::new(w, h)
}

struct NmfProblem<'a> {
    mx: &'a SparseMatrix,
    model: NmfModel,
}

const NMF_LABELS: &[&str] = &["w", "h"];

impl CdProblem for NmfProblem<'_> {
    fn labels(&self) -> &'static [&'static str] {
        NMF_LABELS
    }

    fn factor(&self, k: usize) -> &FactorMatrix {
        if k == 0 {
            &self.model.w
        } else {
            &self.model.h
        }
    }

    fn factor_mut(&mut self, k: usize) -> &mut FactorMatrix {
        if k == 0 {
            &mut self.model.w
        } else {
            &mut self.model.h
        }
    }

    fn data_term(&self, k: usize, rows: Option<&[bool]>) -> Result<DenseMatrix> {
        if k == 0 {
            self.mx.product(&self.model.h, false, rows)
        } else {
            self.mx.product(&self.model.w, true, rows)
        }
    }

    fn hessian(&self, k: usize) -> Result<DenseMatrix> {
        Ok(if k == 0 { self.model.h.gram() } else { self.model.w.gram() })
    }

    fn objective(&self) -> Result<f64> {
        self.model.residual_sq(self.mx)
    }
}

pub fn nmf_factorize(mx: &SparseMatrix, config: &SolverConfig) -> Result<(NmfModel, SolverTrace)> {
    config.validate()?;
    let init = init_nmf(mx.dims(), config.rank, config.seed)?;
    nmf_factorize_from(mx, init, config)
}

pub fn nmf_factorize_from(mx: &SparseMatrix, init: NmfModel, config: &SolverConfig) -> Result<(NmfModel, SolverTrace)> {
    config.validate()?;
    if mx.is_empty() {
        return Err(Error::Input("cannot factorize an empty matrix".into()));
    }
    if (init.w.rows(), init.h.rows()) != mx.dims() || init.rank() != config.rank {
        return Err(Error::Shape(format!(
            "initial model {}×{} rank {} does not fit matrix {:?} rank {}",
            init.w.rows(),
            init.h.rows(),
            init.rank(),
            mx.dims(),
            config.rank
        )));
    }
    let mut problem = NmfProblem { mx, model: init };
    let trace = cd::run(&mut problem, config)?;
    Ok((problem.model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfMeta {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: usize,
    pub final_objective: f64,
}

/// Writes `W.csv`, `H.csv` and `meta.json` into `dir`.
pub fn write_nmf(dir: &Path, model: &NmfModel, meta: &NmfMeta) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_table(&dir.join("W.csv"), model.rank(), model.w.as_slice())?;
    io::write_table(&dir.join("H.csv"), model.rank(), model.h.as_slice())?;
    io::write_json(&dir.join("meta.json"), meta)
}

pub fn read_nmf(dir: &Path) -> Result<(NmfModel, NmfMeta)> {
    let (wr, wc, wv) = io::read_table(&dir.join("W.csv"))?;
    let (hr, hc, hv) = io::read_table(&dir.join("H.csv"))?;
    let model = NmfModel::new(FactorMatrix::new(wr, wc, wv)?, FactorMatrix::new(hr, hc, hv)?)?;
    Ok((model, io::read_json(&dir.join("meta.json"))?))
}
