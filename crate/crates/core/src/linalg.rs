//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Reciprocal condition threshold below which a moment matrix is treated as rank deficient.
pub const RANK_RCOND: f64 = 1e-13;

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Ratio of smallest to largest absolute eigenvalue of a symmetric matrix.
pub fn reciprocal_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if reciprocal_condition(m) < RANK_RCOND {
        return Err(Error::Singular(what.to_string()));
    }
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `(1/n) * sum_i r_i r_i'` over the rows of `rows`.
pub fn mean_outer(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows().max(1) as f64;
    rows.transpose() * rows / n
}

/// Least-squares coefficients of `y` on the columns of `x`, via QR.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    if x.nrows() < x.ncols() {
        return None;
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty)
}

/// Stack the selected rows of `m`.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
