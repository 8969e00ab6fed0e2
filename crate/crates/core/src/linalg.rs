//! Small dense symmetric helpers (p × p systems).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_CONDITION: f64 = 1e12;

/// Symmetric eigen-decomposition with a condition guard; returns the inverse, row-major.
pub fn sym_inverse(a: &[f64], p: usize, what: &'static str) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(p, p, a);
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x.abs()), hi.max(x.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) || !hi.is_finite() {
        return Err(Error::Singular { what, condition });
    }
    let inv_vals = eig.eigenvalues.map(|x| 1.0 / x);
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    Ok(row_major(&inv))
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn mat_vec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let p = x.len();
    (0..p)
        .map(|i| (0..p).map(|j| a[i * p + j] * x[j]).sum())
        .collect()
}

/// `A B C` for row-major square matrices.
pub fn triple(a: &[f64], b: &[f64], c: &[f64], p: usize) -> Vec<f64> {
    let ma = DMatrix::from_row_slice(p, p, a);
    let mb = DMatrix::from_row_slice(p, p, b);
    let mc = DMatrix::from_row_slice(p, p, c);
    row_major(&(ma * mb * mc))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &[f64], p: usize) -> f64 {
    if p == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(p, p, a);
    m.symmetric_eigen().eigenvalues.min()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
