//! Dense linear-algebra helpers shared by the projection and rate code.
//!
//! Rank decisions use one rule throughout: a singular value (or eigenvalue of a
//! PSD matrix) is zero when it is at most `max(rows, cols) · largest · ε`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) const MACHINE_EPS: f64 = 2.2e-16;

pub fn zero_threshold(size: usize, largest: f64) -> f64 {
    size as f64 * largest.abs() * MACHINE_EPS
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::invalid("matrix has no rows"));
    }
    let n = rows[0].len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("matrix rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Moore-Penrose pseudoinverse via SVD.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = zero_threshold(m.max(n), smax);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

/// Orthonormal basis (as columns) of `range(a)`.
pub fn range_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(m, 0);
    }
    let svd = a.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let tol = zero_threshold(m.max(n), smax);
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol && s > 0.0)
        .map(|(k, _)| k)
        .collect();
    DMatrix::from_fn(m, keep.len(), |i, j| u[(i, keep[j])])
}

pub fn rank(a: &DMatrix<f64>) -> usize {
    range_basis(a).ncols()
}

/// Eigenvalues ascending with matching eigenvector columns.
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Orthonormal basis of the kernel of a symmetric PSD matrix.
pub fn psd_kernel_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (values, vectors) = sorted_symmetric_eigen(a);
    let largest = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = zero_threshold(n, largest);
    let keep: Vec<usize> = (0..n).filter(|&k| values[k] <= tol).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| vectors[(i, keep[j])])
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Spectral norm.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Solves `M d = rhs` for symmetric PSD `M`. Falls back to Tikhonov jitter
/// `1e-12 · trace / m` (escalated if needed) when `M` is numerically rank deficient.
pub(crate) fn solve_psd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let size = m.nrows();
    if let Some(chol) = m.clone().cholesky() {
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..size).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmin > 1e-12 * dmax {
            return Some(chol.solve(rhs));
        }
    }
    let trace = m.trace().abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-12 * trace / size as f64;
    for _ in 0..8 {
        let mut shifted = m.clone();
        for i in 0..size {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = shifted.cholesky() {
            return Some(chol.solve(rhs));
        }
        jitter *= 100.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&a);
        assert_relative_eq!(p, DMatrix::from_element(2, 2, 0.25), epsilon = 1e-14);
        assert_eq!(rank(&a), 1);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&a);
        assert_relative_eq!(&r * &r, a, epsilon = 1e-12);
    }

    #[test]
    fn kernel_of_projector() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let k = psd_kernel_basis(&p);
        assert_eq!(k.ncols(), 1);
        assert!((&p * &k).amax() < 1e-14);
    }

    #[test]
    fn jittered_solve_on_singular_system() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DVector::from_column_slice(&[2.0, 2.0]);
        let d = solve_psd(&m, &rhs).unwrap();
        assert_relative_eq!(&m * &d, rhs, epsilon = 1e-8);
    }
}
