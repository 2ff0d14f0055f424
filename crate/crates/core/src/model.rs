//! Plant, constraint polytopes and ellipsoids.
//!
//! An ellipsoid of shape `W` and radius `r` is the set `{x : xᵀW⁻¹x ≤ r²}`.
//! Everything in the controller is expressed through the "shape norm"
//! `‖x‖_W = sqrt(xᵀW⁻¹x)`, so that same-shape ellipsoids only differ by a
//! scalar radius.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Discrete-time plant `x⁺ = A x + B u + w` with `E[w wᵀ] = Γ_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    gamma_w: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, gamma_w: DMatrix<f64>) -> Result<Self> {
        let n = linalg::ensure_square(&a, "A")?;
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if b.ncols() == 0 {
            return Err(Error::Dimension("B has no columns".into()));
        }
        if gamma_w.nrows() != n || gamma_w.ncols() != n {
            return Err(Error::Dimension(format!(
                "Gamma_w is {}x{}, expected {n}x{n}",
                gamma_w.nrows(),
                gamma_w.ncols()
            )));
        }
        if !linalg::is_symmetric(&gamma_w, 1e-12) {
            return Err(Error::InvalidArgument("Gamma_w is not symmetric".into()));
        }
        if !linalg::is_positive_semidefinite(&gamma_w) {
            return Err(Error::InvalidArgument("Gamma_w is not positive semidefinite".into()));
        }
        Ok(Self { a, b, gamma_w })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gamma_w(&self) -> &DMatrix<f64> {
        &self.gamma_w
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Copy of the plant with a different noise covariance.
    pub fn with_noise(&self, gamma_w: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), gamma_w)
    }

    /// One step of the plant: `A x + B u + w`.
    pub fn simulate_step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (n, m) = (self.state_dim(), self.input_dim());
        if x.len() != n || w.len() != n || u.len() != m {
            return Err(Error::Dimension(format!(
                "simulate_step expects x,w in R^{n} and u in R^{m}, got {}, {}, {}",
                x.len(),
                w.len(),
                u.len()
            )));
        }
        Ok(&self.a * x + &self.b * u + w)
    }
}

/// `{x : H x ≤ h}` containing the origin in its interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    h: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl Polytope {
    pub fn new(h: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if h.nrows() != offsets.len() {
            return Err(Error::Dimension(format!(
                "polytope has {} rows but {} offsets",
                h.nrows(),
                offsets.len()
            )));
        }
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Dimension("empty polytope description".into()));
        }
        if offsets.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "polytope must contain the origin strictly (h > 0)".into(),
            ));
        }
        if h.row_iter().any(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidArgument("polytope has a zero row".into()));
        }
        Ok(Self { h, offsets })
    }

    /// `{x : ‖x‖_∞ ≤ bound}` in `dim` dimensions.
    pub fn symmetric_box(dim: usize, bound: f64) -> Result<Self> {
        let mut h = DMatrix::zeros(2 * dim, dim);
        for i in 0..dim {
            h[(2 * i, i)] = 1.0;
            h[(2 * i + 1, i)] = -1.0;
        }
        Self::new(h, DVector::from_element(2 * dim, bound))
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let hx = &self.h * x;
        hx.iter()
            .zip(self.offsets.iter())
            .all(|(l, r)| *l <= r * (1.0 + 1e-12) + 1e-15)
    }
}

/// `{x : xᵀW⁻¹x ≤ r²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    radius: f64,
    chol: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, radius: f64) -> Result<Self> {
        linalg::ensure_square(&shape, "ellipsoid shape")?;
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {radius}")));
        }
        if !linalg::is_symmetric(&shape, 1e-12) {
            return Err(Error::InvalidArgument("ellipsoid shape is not symmetric".into()));
        }
        let chol = linalg::cholesky_lower(&shape, "ellipsoid shape")?;
        Ok(Self { shape, radius, chol })
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    /// Same shape, radius scaled by `gamma ≥ 0`.
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be nonnegative, got {gamma}")));
        }
        Ok(Self { radius: self.radius * gamma, ..self.clone() })
    }

    /// `sqrt(xᵀW⁻¹x)`, via a triangular solve with the Cholesky factor.
    pub fn shape_norm(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has dimension {}, ellipsoid {}",
                x.len(),
                self.dim()
            )));
        }
        let y = self
            .chol
            .solve_lower_triangular(x)
            .ok_or_else(|| Error::NotPositiveDefinite("ellipsoid shape".into()))?;
        Ok(y.norm())
    }

    /// Membership with relative tolerance `1e-9` on `r²`.
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        let s = self.shape_norm(x)?;
        Ok(s * s <= self.radius * self.radius * (1.0 + 1e-9))
    }
}

/// Free-function form of [`Ellipsoid::contains`].
pub fn ellipsoid_contains(e: &Ellipsoid, x: &DVector<f64>) -> Result<bool> {
    e.contains(x)
}

/// Largest `r` with `E_W(r) ⊆ {x : Hx ≤ h}`: `min_i h_i / sqrt(H_i W H_iᵀ)`.
/// Rows need not be normalized.
pub fn inscribed_radius(shape: &DMatrix<f64>, polytope: &Polytope) -> Result<f64> {
    linalg::ensure_square(shape, "shape")?;
    if shape.nrows() != polytope.dim() {
        return Err(Error::Dimension(format!(
            "shape is {}x{}, polytope lives in R^{}",
            shape.nrows(),
            shape.ncols(),
            polytope.dim()
        )));
    }
    if !linalg::is_positive_definite(shape) {
        return Err(Error::NotPositiveDefinite("inscribed_radius shape".into()));
    }
    let h = polytope.h();
    let mut best = f64::INFINITY;
    for (i, row) in h.row_iter().enumerate() {
        let r = row.transpose();
        let support = linalg::quad_form(shape, &r).sqrt();
        best = best.min(polytope.offsets()[i] / support);
    }
    Ok(best)
}

/// Radius of the Pontryagin difference `E_W(r1) ⊖ E_W(r2) = E_W(r1 − r2)`,
/// clamped at zero. Callers must reject the clamped case themselves.
pub fn same_shape_difference(r1: f64, r2: f64) -> Result<f64> {
    if !(r1 >= 0.0) || !(r2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radii must be nonnegative, got ({r1}, {r2})"
        )));
    }
    Ok((r1 - r2).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn benchmark_w_x() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[10.9264, -3.7386, -3.7386, 3.8143])
    }

    #[test]
    fn contains_unit_disk() {
        let e = Ellipsoid::new(DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(e.contains(&DVector::from_vec(vec![0.0, 0.0])).unwrap());
        assert!(e.contains(&DVector::from_vec(vec![1.0, 0.0])).unwrap());
    }

    #[test]
    fn contains_stretched() {
        // x₁²/4 ≤ 1
        let e = Ellipsoid::new(diag(&[4.0, 1.0]), 1.0).unwrap();
        assert!(e.contains(&DVector::from_vec(vec![2.0, 0.0])).unwrap());
        assert!(!e.contains(&DVector::from_vec(vec![2.1, 0.0])).unwrap());
    }

    #[test]
    fn contains_dimension_mismatch() {
        let e = Ellipsoid::new(DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(matches!(
            e.contains(&DVector::from_vec(vec![0.0, 0.0, 0.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Ellipsoid::new(diag(&[1.0, 0.0]), 1.0).is_err());
        assert!(Ellipsoid::new(DMatrix::identity(2, 2), -1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Ellipsoid::new(asym, 1.0).is_err());
    }

    #[test]
    fn inscribed_radius_examples() {
        let unit_box = Polytope::symmetric_box(2, 1.0).unwrap();
        assert!((inscribed_radius(&DMatrix::identity(2, 2), &unit_box).unwrap() - 1.0).abs() < 1e-15);

        let state_box = Polytope::symmetric_box(2, 40.0).unwrap();
        let r = inscribed_radius(&benchmark_w_x(), &state_box).unwrap();
        assert!((r - 12.1010).abs() < 1e-3, "r_x = {r}");

        // |x₁| ≤ 2 with W = diag(4, 1): 2 / sqrt(4) = 1
        let slab = Polytope::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_vec(vec![2.0, 2.0]),
        )
        .unwrap();
        assert!((inscribed_radius(&diag(&[4.0, 1.0]), &slab).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inscribed_radius_row_scaling() {
        let p1 = Polytope::symmetric_box(2, 3.0).unwrap();
        let p2 = Polytope::new(p1.h() * 7.0, p1.offsets() * 7.0).unwrap();
        let w = benchmark_w_x();
        let (a, b) = (inscribed_radius(&w, &p1).unwrap(), inscribed_radius(&w, &p2).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn inscribed_radius_requires_pd() {
        let p = Polytope::symmetric_box(2, 1.0).unwrap();
        assert!(matches!(
            inscribed_radius(&diag(&[1.0, 0.0]), &p),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn inscribed_ellipsoid_boundary_sampling() {
        let w = benchmark_w_x();
        let p = Polytope::symmetric_box(2, 40.0).unwrap();
        let r = inscribed_radius(&w, &p).unwrap();
        let l = w.clone().cholesky().unwrap().l();
        for i in 0..1000 {
            let th = 2.0 * std::f64::consts::PI * i as f64 / 1000.0;
            let x = &l * DVector::from_vec(vec![th.cos(), th.sin()]) * r;
            assert!(p.contains(&x), "boundary point {x} escapes");
        }
        // The support point of the binding halfspace, pushed out by 1%, leaves P.
        let mut violated = false;
        for row in p.h().row_iter() {
            let hr = row.transpose();
            let wh = &w * &hr;
            let dir = &wh / linalg::quad_form(&w, &hr).sqrt();
            if !p.contains(&(dir * r * 1.01)) {
                violated = true;
            }
        }
        assert!(violated);
    }

    #[test]
    fn polytope_validation() {
        let h = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert!(Polytope::new(h.clone(), DVector::from_vec(vec![1.0, 0.0])).is_err());
        assert!(Polytope::new(DMatrix::zeros(1, 1), DVector::from_vec(vec![1.0])).is_err());
        assert!(Polytope::new(h, DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn pontryagin_radius() {
        assert_eq!(same_shape_difference(5.0, 0.0).unwrap(), 5.0);
        assert!((same_shape_difference(12.1010, 2.146).unwrap() - 9.955).abs() < 1e-12);
        assert_eq!(same_shape_difference(1.0, 2.0).unwrap(), 0.0);
        assert!(same_shape_difference(-1.0, 0.0).is_err());
    }

    fn benchmark_plant() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.1]),
        )
        .unwrap()
    }

    #[test]
    fn simulate_step_examples() {
        let v = |s: &[f64]| DVector::from_column_slice(s);
        let ident = LinearSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(ident.simulate_step(&v(&[1.0, 1.0]), &v(&[0.0]), &v(&[0.0, 0.0])).unwrap(), v(&[1.0, 1.0]));

        let x1 = benchmark_plant().simulate_step(&v(&[1.0, 0.0]), &v(&[1.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(x1, v(&[1.5, 1.0]));

        let zero = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(2, 2)).unwrap();
        let x = zero.simulate_step(&v(&[7.0, -3.0]), &v(&[2.0]), &v(&[0.3, -0.2])).unwrap();
        assert_eq!(x, v(&[0.3, -0.2]));

        assert!(matches!(
            benchmark_plant().simulate_step(&v(&[1.0]), &v(&[1.0]), &v(&[0.0, 0.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn system_validation() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        let bad_noise = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(LinearSystem::new(a.clone(), b.clone(), bad_noise).is_err());
        assert!(LinearSystem::new(a.clone(), DMatrix::zeros(3, 1), DMatrix::zeros(2, 2)).is_err());
        assert!(LinearSystem::new(a, b, DMatrix::zeros(3, 3)).is_err());
    }

    proptest! {
        #[test]
        fn scaling_law(x0 in -50.0..50.0f64, x1 in -50.0..50.0f64, r in 0.1..20.0f64, g in 0.0..5.0f64) {
            let e = Ellipsoid::new(benchmark_w_x(), r).unwrap();
            let x = DVector::from_vec(vec![x0, x1]);
            let lhs = e.contains(&x).unwrap();
            let rhs = e.scaled(g).unwrap().contains(&(&x * g)).unwrap();
            // membership is invariant except within the relative tolerance band
            let s = e.shape_norm(&x).unwrap() / r;
            if (s - 1.0).abs() > 1e-8 && g > 0.0 {
                prop_assert_eq!(lhs, rhs);
            }
        }

        #[test]
        fn step_superposition(a in proptest::collection::vec(-5.0..5.0f64, 6)) {
            let sys = benchmark_plant();
            let x1 = DVector::from_vec(vec![a[0], a[1]]);
            let x2 = DVector::from_vec(vec![a[2], a[3]]);
            let u1 = DVector::from_vec(vec![a[4]]);
            let u2 = DVector::from_vec(vec![a[5]]);
            let z = DVector::zeros(2);
            let joint = sys.simulate_step(&(&x1 + &x2), &(&u1 + &u2), &z).unwrap();
            let split = sys.simulate_step(&x1, &u1, &z).unwrap() + sys.simulate_step(&x2, &u2, &z).unwrap();
            prop_assert!((joint - split).norm() < 1e-12);
        }
    }
}
