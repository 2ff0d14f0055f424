//! Infinite-horizon discrete LQR.
//!
//! Sign convention: the returned gain already includes the minus sign, so the
//! control law is `u = K x` and `A_K = A + B K` is Schur.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LinearSystem;

const MAX_ITERATIONS: usize = 10_000;
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrResult {
    /// `m × n` stabilizing gain, `u = K x`.
    pub k: DMatrix<f64>,
    /// Terminal weight solving `Q + KᵀRK + A_KᵀPA_K − P = 0`.
    pub p: DMatrix<f64>,
    /// Closed loop `A + B K`.
    pub a_k: DMatrix<f64>,
}

impl LqrResult {
    /// Relative Frobenius residual of the closed-loop Lyapunov identity.
    pub fn lyapunov_residual(&self, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
        let res = q + self.k.transpose() * r * &self.k + self.a_k.transpose() * &self.p * &self.a_k
            - &self.p;
        res.norm() / self.p.norm().max(f64::MIN_POSITIVE)
    }
}

/// Stabilizing solution of the discrete algebraic Riccati equation by
/// fixed-point iteration of the Riccati map from `P₀ = Q`.
pub fn solve_lqr(sys: &LinearSystem, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LqrResult> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::Dimension(format!("R must be {m}x{m}")));
    }
    if !linalg::is_positive_semidefinite(q) {
        return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
    }
    if !linalg::is_positive_definite(r) {
        return Err(Error::NotPositiveDefinite("R is singular or indefinite".into()));
    }

    let a = sys.a();
    let b = sys.b();
    let at = a.transpose();
    let bt = b.transpose();

    let mut p = linalg::symmetrize(q);
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..MAX_ITERATIONS {
        iterations = it + 1;
        let s = r + &bt * &p * b;
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("R + BᵀPB".into()))?;
        let btpa = &bt * &p * a;
        let next = q + &at * &p * a - btpa.transpose() * chol.solve(&btpa);
        let next = linalg::symmetrize(&next);
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let change = (&next - &p).norm();
        let scale = p.norm().max(f64::MIN_POSITIVE);
        p = next;
        last_change = change / scale;
        if change <= REL_TOL * scale || change == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::DareDivergence { iterations, residual: last_change });
    }

    let s = r + &bt * &p * b;
    let k = -s
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R + BᵀPB".into()))?
        .solve(&(&bt * &p * a));
    let a_k = a + b * &k;
    if spectral_radius(&a_k) >= 1.0 {
        return Err(Error::DareDivergence { iterations, residual: last_change });
    }
    Ok(LqrResult { k, p, a_k })
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "spectral_radius needs a square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
