//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues sorted ascending and the
/// eigenvectors (columns) permuted to match.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Sample mean of each column (divisor n).
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtracts `mean` from every row.
pub fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Sample covariance with divisor n.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let xc = center(x, &mean);
    let mut cov = xc.transpose() * &xc / x.nrows() as f64;
    symmetrize(&mut cov);
    cov
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `m - I`.
pub fn max_abs_dev_from_identity(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// `(m m^T)^(-1/2) m`, the symmetric orthogonalization of the rows of `m`.
/// Returns `None` when `m m^T` is numerically singular.
pub fn symmetric_orthogonalize(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let gram = m * m.transpose();
    let inv_sqrt = inverse_sqrt_psd(&gram, 1e-14)?;
    Some(inv_sqrt * m)
}

/// Inverse symmetric square root of a positive definite matrix. `None` when
/// the smallest eigenvalue is below `rel_tol` times the largest.
pub fn inverse_sqrt_psd(m: &DMatrix<f64>, rel_tol: f64) -> Option<DMatrix<f64>> {
    let (values, vectors) = sym_eigen_sorted(m);
    let p = values.len();
    let largest = values[p - 1];
    if !(largest > 0.0) || !(values[0] > rel_tol * largest) || !values.iter().all(|v| v.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| vectors[(i, j)] / values[j].sqrt());
    let mut out = scaled * vectors.transpose();
    symmetrize(&mut out);
    Some(out)
}

/// Ratio of smallest to largest singular value; 0 for singular input.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 && max.is_finite() {
        min / max
    } else {
        0.0
    }
}
