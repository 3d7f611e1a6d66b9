//! Dense reference implementations of every kernel.
//!
//! These are deliberately naive triple loops over all cells, written
//! without reference to the sparse kernels they check. Inputs are capped at
//! [`ORACLE_CELL_LIMIT`] cells.

use crate::error::{Error, Result};
use crate::tensor::{CpModel, FactorMatrix, Mode, SparseTensor3};

pub const ORACLE_CELL_LIMIT: usize = 1_000_000;

/// Dense 3-way array indexed `[m][n][o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub dims: [usize; 3],
    pub cells: Vec<Vec<Vec<f64>>>,
}

fn guard(dims: [usize; 3]) -> Result<()> {
    let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
    if cells > ORACLE_CELL_LIMIT {
        return Err(Error::OracleTooLarge {
            cells,
            limit: ORACLE_CELL_LIMIT,
        });
    }
    Ok(())
}

pub fn densify(x: &SparseTensor3) -> Result<DenseTensor> {
    let dims = x.dims();
    guard(dims)?;
    let mut cells = vec![vec![vec![0.0; dims[2]]; dims[1]]; dims[0]];
    for e in x.entries() {
        let [m, n, o] = e.coord;
        cells[m][n][o] += e.value;
    }
    Ok(DenseTensor { dims, cells })
}

pub fn reconstruct(model: &CpModel) -> Result<DenseTensor> {
    let dims = model.dims();
    guard(dims)?;
    let mut cells = vec![vec![vec![0.0; dims[2]]; dims[1]]; dims[0]];
    for (m, plane) in cells.iter_mut().enumerate() {
        for (n, fiber) in plane.iter_mut().enumerate() {
            for (o, cell) in fiber.iter_mut().enumerate() {
                for r in 0..model.rank() {
                    *cell += model.weights()[r] * model.u().get(m, r) * model.l().get(n, r) * model.t().get(o, r);
                }
            }
        }
    }
    Ok(DenseTensor { dims, cells })
}

pub fn frobenius_sq(x: &SparseTensor3) -> Result<f64> {
    let d = densify(x)?;
    Ok(d.cells.iter().flatten().flatten().map(|v| v * v).sum())
}

/// `‖X − X̂‖²` summed cell by cell.
pub fn residual_sq(x: &SparseTensor3, model: &CpModel) -> Result<f64> {
    if x.dims() != model.dims() {
        return Err(Error::Shape("tensor and model dims differ".into()));
    }
    let (dx, dm) = (densify(x)?, reconstruct(model)?);
    let mut total = 0.0;
    for m in 0..x.dims()[0] {
        for n in 0..x.dims()[1] {
            for o in 0..x.dims()[2] {
                let diff = dx.cells[m][n][o] - dm.cells[m][n][o];
                total += diff * diff;
            }
        }
    }
    Ok(total)
}

/// Explicit mode-`k` unfolding as a rows × cols table.
pub fn matricize(x: &SparseTensor3, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let d = densify(x)?;
    let [dm, dn, dox] = d.dims;
    let (rows, cols) = match mode {
        Mode::Term => (dm, dn * dox),
        Mode::Location => (dn, dm * dox),
        Mode::Time => (dox, dm * dn),
    };
    let mut out = vec![vec![0.0; cols]; rows];
    for m in 0..dm {
        for n in 0..dn {
            for o in 0..dox {
                let v = d.cells[m][n][o];
                match mode {
                    Mode::Term => out[m][o * dn + n] = v,
                    Mode::Location => out[n][o * dm + m] = v,
                    Mode::Time => out[o][n * dm + m] = v,
                }
            }
        }
    }
    Ok(out)
}

/// Khatri–Rao product `A ⊙ B`: row `ia · rows(B) + ib`, column `r` holds
/// `A[ia, r] · B[ib, r]`.
pub fn khatri_rao(a: &FactorMatrix, b: &FactorMatrix) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for ia in 0..a.rows() {
        for ib in 0..b.rows() {
            out.push((0..a.rank()).map(|r| a.get(ia, r) * b.get(ib, r)).collect());
        }
    }
    out
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

/// `X_(mode) · (A ⊙ B)` through an explicit unfolding and Khatri–Rao product.
pub fn mttkrp(x: &SparseTensor3, mode: Mode, a: &FactorMatrix, b: &FactorMatrix) -> Result<Vec<Vec<f64>>> {
    Ok(matmul(&matricize(x, mode)?, &khatri_rao(a, b)))
}

fn transpose(a: &FactorMatrix) -> Vec<Vec<f64>> {
    (0..a.rank()).map(|r| a.column(r)).collect()
}

fn as_rows(a: &FactorMatrix) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
}

/// `(AᵀA) ∗ (BᵀB)` via two explicit matrix products.
pub fn gram_hadamard(a: &FactorMatrix, b: &FactorMatrix) -> Vec<Vec<f64>> {
    let ga = matmul(&transpose(a), &as_rows(a));
    let gb = matmul(&transpose(b), &as_rows(b));
    ga.iter()
        .zip(&gb)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).collect())
        .collect()
}

/// Dense (term × time) marginal.
pub fn flatten_time(x: &SparseTensor3) -> Result<Vec<Vec<f64>>> {
    let d = densify(x)?;
    Ok((0..d.dims[0])
        .map(|m| (0..d.dims[2]).map(|o| (0..d.dims[1]).map(|n| d.cells[m][n][o]).sum()).collect())
        .collect())
}

/// Dense (term × location) marginal.
pub fn flatten_location(x: &SparseTensor3) -> Result<Vec<Vec<f64>>> {
    let d = densify(x)?;
    Ok((0..d.dims[0])
        .map(|m| (0..d.dims[1]).map(|n| d.cells[m][n].iter().sum()).collect())
        .collect())
}

/// `∂‖X − X̂‖²/∂F[i, r]` for the factor of `mode`, from the chain rule
/// over every cell: `2 Σ (X̂ − X) · λ_r · (product of the other two factors)`.
pub fn objective_gradient(x: &SparseTensor3, model: &CpModel, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let (dx, dm) = (densify(x)?, reconstruct(model)?);
    let [m_len, n_len, o_len] = x.dims();
    let f = model.factor(mode);
    let mut grad = vec![vec![0.0; model.rank()]; f.rows()];
    for m in 0..m_len {
        for n in 0..n_len {
            for o in 0..o_len {
                let resid = dm.cells[m][n][o] - dx.cells[m][n][o];
                for r in 0..model.rank() {
                    let w = model.weights()[r];
                    let (i, rest) = match mode {
                        Mode::Term => (m, model.l().get(n, r) * model.t().get(o, r)),
                        Mode::Location => (n, model.u().get(m, r) * model.t().get(o, r)),
                        Mode::Time => (o, model.u().get(m, r) * model.l().get(n, r)),
                    };
                    grad[i][r] += 2.0 * resid * w * rest;
                }
            }
        }
    }
    Ok(grad)
}

fn with_element(model: &CpModel, mode: Mode, i: usize, r: usize, value: f64) -> Result<CpModel> {
    let (weights, factors) = model.clone().into_parts();
    let mut factors = factors.map(|f| (f.rows(), f.rank(), f.as_slice().to_vec()));
    let (_, rank, ref mut values) = factors[mode.index()];
    values[i * rank + r] = value;
    let [u, l, t] = factors;
    CpModel::new(
        weights,
        FactorMatrix::new(u.0, u.1, u.2)?,
        FactorMatrix::new(l.0, l.1, l.2)?,
        FactorMatrix::new(t.0, t.1, t.2)?,
    )
}

/// Central difference `(f(F + h·e_ir) − f(F − h·e_ir)) / 2h` of the dense
/// objective. Elements closer than `h` to zero use a one-sided forward
/// difference so every probe stays nonnegative.
pub fn finite_difference_gradient(x: &SparseTensor3, model: &CpModel, mode: Mode, h: f64) -> Result<Vec<Vec<f64>>> {
    let f = model.factor(mode);
    let mut grad = vec![vec![0.0; model.rank()]; f.rows()];
    for (i, row) in grad.iter_mut().enumerate() {
        for (r, g) in row.iter_mut().enumerate() {
            let v = f.get(i, r);
            let plus = residual_sq(x, &with_element(model, mode, i, r, v + h)?)?;
            if v >= h {
                let minus = residual_sq(x, &with_element(model, mode, i, r, v - h)?)?;
                *g = (plus - minus) / (2.0 * h);
            } else {
                let here = residual_sq(x, model)?;
                *g = (plus - here) / h;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_guard_refuses_large_inputs() {
        let x = SparseTensor3::empty([200, 200, 200]).unwrap();
        assert!(matches!(densify(&x), Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn hand_checkable_outputs() {
        let x = SparseTensor3::build([2, 1, 1], [([0, 0, 0], 3.0), ([1, 0, 0], 4.0)]).unwrap();
        assert_eq!(frobenius_sq(&x).unwrap(), 25.0);
        let eye = FactorMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(gram_hadamard(&eye, &eye), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let unf = matricize(&SparseTensor3::build([6, 3, 3], [([2, 1, 2], 1.0)]).unwrap(), Mode::Term).unwrap();
        assert_eq!(unf[2][7], 1.0);
    }
}
