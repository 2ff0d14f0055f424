//! Small dense helpers on top of nalgebra shared by the numeric modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold used by every PD/PSD decision in the crate.
pub const PD_REL_TOL: f64 = 1e-12;

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// `min eig > PD_REL_TOL * max eig`, with `max eig > 0`.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => hi > 0.0 && lo > PD_REL_TOL * hi,
        _ => false,
    }
}

pub fn is_positive_semidefinite(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => lo >= -PD_REL_TOL * hi.abs().max(1.0),
        _ => true,
    }
}

/// Lower Cholesky factor of a symmetric PD matrix.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !is_positive_definite(m) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    symmetrize(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// A factor `L` with `L Lᵀ = m` for symmetric PSD `m`; falls back to the
/// eigen-decomposition when the matrix is singular.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = symmetrize(m);
    if is_positive_definite(&s) {
        if let Some(c) = s.clone().cholesky() {
            return c.l();
        }
    }
    let eig = s.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut sq = DMatrix::zeros(n, n);
    for i in 0..n {
        sq[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * sq
}

/// `L⁻¹` for a lower triangular `L`.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("triangular factor with nonzero diagonal")
}

/// Largest generalized eigenvalue of the pencil `(num, den)` with `den` PD.
pub fn max_generalized_eigenvalue(num: &DMatrix<f64>, den: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(den, "generalized eigenvalue denominator")?;
    let li = lower_inverse(&l);
    Ok(max_eigenvalue(&(&li * num * li.transpose())))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn dmatrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn dmatrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn vec_to_std(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// `xᵀ M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_handles_singular() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&g);
        assert!((&l * l.transpose() - &g).norm() < 1e-12);
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(psd_factor(&z).norm() == 0.0);
    }

    #[test]
    fn generalized_eigenvalue_diag() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 6.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        assert!((max_generalized_eigenvalue(&a, &b).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pd_checks() {
        assert!(is_positive_definite(&DMatrix::identity(3, 3)));
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(!is_positive_definite(&s));
        assert!(is_positive_semidefinite(&s));
        assert!(!is_positive_semidefinite(&(-s)));
    }
}
