//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FlagError, Result};

/// Relative tolerance used when validating caller-supplied symmetric matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Rejects non-square matrices and matrices whose asymmetry exceeds
/// `SYMMETRY_TOL` relative to the largest entry (floored at 1).
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(FlagError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = SYMMETRY_TOL * scale;
    let diff = max_asymmetry(m);
    if diff > tol || m.iter().any(|v| !v.is_finite()) {
        return Err(FlagError::NotSymmetric { max_diff: diff, tol });
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Equal eigenvalues keep the solver's original order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Rebuilds `V diag(d) Vᵀ`, forcing exact symmetry of the result.
pub fn compose_spectral(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let n = vectors.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &d) in values.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        for j in 0..n {
            let vj = d * v[j];
            for i in 0..n {
                out[(i, j)] += v[i] * vj;
            }
        }
    }
    symmetrize(&out)
}

/// Numerical rank of a PSD matrix: eigenvalues above `1e-8 * max(1, largest)`.
pub fn psd_rank(m: &DMatrix<f64>) -> usize {
    let (values, _) = sym_eigen_desc(m);
    let cutoff = 1e-8 * values.iter().copied().fold(1.0f64, f64::max);
    values.iter().filter(|&&v| v > cutoff).count()
}

pub fn nuclear_norm_sym(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen_desc(m);
    values.iter().map(|v| v.abs()).sum()
}

pub fn off_diag_l1(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                total += m[(i, j)].abs();
            }
        }
    }
    total
}
