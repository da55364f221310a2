//! Small dense-matrix helpers used throughout the crate.

use nalgebra::{DMatrix, DVector};

/// Forces exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Maximum absolute asymmetry |M - M^T|_inf.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m - m.transpose();
    d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// True if all eigenvalues are >= -tol.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// Quadratic form v^T M v.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// trace(A^T B), the Frobenius inner product.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Concatenates vectors into one.
pub fn concat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(*p);
        at += p.len();
    }
    out
}

/// Rank-one outer product v v^T.
pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// Entrywise max-abs difference between two matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}
