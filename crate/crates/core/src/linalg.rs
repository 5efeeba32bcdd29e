use faer::linalg::solvers::{DenseSolveCore, Llt};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Copy of `m[rows, cols]`.
pub(crate) fn gather(m: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub(crate) fn gather_rows(m: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// `out[j] = a[:, j] . b[:, j]`.
pub(crate) fn colwise_dot(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Vec<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    debug_assert_eq!(a.ncols(), b.ncols());
    (0..a.ncols())
        .map(|j| {
            let (ca, cb) = (a.col(j), b.col(j));
            (0..a.nrows()).map(|i| ca[i] * cb[i]).sum()
        })
        .collect()
}

/// `out[j] = a[:, j]^T K b[:, j]`.
pub(crate) fn colwise_quadratic(a: MatRef<'_, f64>, k: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Vec<f64> {
    let kb = k * b;
    colwise_dot(a, kb.as_ref())
}

/// Cholesky factor of `m + shift * I`.
pub(crate) fn shifted_llt(mut m: Mat<f64>, shift: f64) -> Result<Llt<f64>> {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] += shift;
    }
    m.llt(Side::Lower).map_err(|e| {
        let min_diag = (0..n).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min);
        Error::Numerical(format!(
            "cholesky factorization failed ({e:?}) for n={n}, diagonal shift={shift:e}, min diagonal={min_diag:e}"
        ))
    })
}

pub(crate) fn reconstruct(llt: &Llt<f64>) -> Mat<f64> {
    llt.reconstruct()
}
